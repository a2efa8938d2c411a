#include "mmcoref/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace mmcoref::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1u << 15;

std::atomic<int> g_backend{-1};

Backend resolve(Backend requested, std::size_t work) {
  if (requested != Backend::kAuto) return requested;
  const int forced = g_backend.load(std::memory_order_relaxed);
  if (forced >= 0) return static_cast<Backend>(forced);
  if (omp_in_parallel() || omp_get_max_threads() < 2 || work < kParallelWork) {
    return Backend::kSerial;
  }
  return Backend::kParallel;
}

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void matmul_bt_row(const double* a, const double* b, double* c, std::size_t k,
                          std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p] * brow[p];
    c[j] += acc;
  }
}

// Row i of a^T * b: walks column i of a.
inline void matmul_at_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, const double* mask, double* out, std::size_t cols) {
  bool any_open = mask == nullptr;
  if (!any_open) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[j] > kMaskedThreshold) {
        any_open = true;
        break;
      }
    }
  }
  if (!any_open) {
    std::fill(out, out + cols, 0.0);
    return;
  }
  double peak = -INFINITY;
  for (std::size_t j = 0; j < cols; ++j) {
    const double v = mask ? x[j] + mask[j] : x[j];
    out[j] = v;
    peak = std::max(peak, v);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(out[j] - peak);
    total += out[j];
  }
  for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
}

}  // namespace

void set_default_backend(Backend backend) {
  g_backend.store(backend == Backend::kAuto ? -1 : static_cast<int>(backend));
}

Backend default_backend() { return resolve(Backend::kAuto, kParallelWork); }

void matmul_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_acc_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                         std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_bt_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    matmul_bt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_bt_acc_parallel(std::span<const double> a, std::span<const double> b,
                            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    matmul_bt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_at_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_at_row(a.data(), b.data(), c.data() + i * n, i, m, k, n);
}

void matmul_at_acc_parallel(std::span<const double> a, std::span<const double> b,
                            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    matmul_at_row(a.data(), b.data(), c.data() + i * n, static_cast<std::size_t>(i), m, k, n);
  }
}

void softmax_rows_serial(std::span<const double> x, std::span<const double> mask,
                         std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    softmax_row(x.data() + i * cols, mask.empty() ? nullptr : mask.data() + i * cols,
                out.data() + i * cols, cols);
  }
}

void softmax_rows_parallel(std::span<const double> x, std::span<const double> mask,
                           std::span<double> out, std::size_t rows, std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    softmax_row(x.data() + i * cols, mask.empty() ? nullptr : mask.data() + i * cols,
                out.data() + i * cols, cols);
  }
}

void matmul_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n, Backend backend) {
  if (resolve(backend, m * k * n) == Backend::kParallel) {
    matmul_acc_parallel(a, b, c, m, k, n);
  } else {
    matmul_acc_serial(a, b, c, m, k, n);
  }
}

void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n, Backend backend) {
  if (resolve(backend, m * k * n) == Backend::kParallel) {
    matmul_bt_acc_parallel(a, b, c, m, k, n);
  } else {
    matmul_bt_acc_serial(a, b, c, m, k, n);
  }
}

void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n, Backend backend) {
  if (resolve(backend, m * k * n) == Backend::kParallel) {
    matmul_at_acc_parallel(a, b, c, m, k, n);
  } else {
    matmul_at_acc_serial(a, b, c, m, k, n);
  }
}

void softmax_rows(std::span<const double> x, std::span<const double> mask, std::span<double> out,
                  std::size_t rows, std::size_t cols, Backend backend) {
  if (resolve(backend, rows * cols * 8) == Backend::kParallel) {
    softmax_rows_parallel(x, mask, out, rows, cols);
  } else {
    softmax_rows_serial(x, mask, out, rows, cols);
  }
}

}  // namespace mmcoref::kernels
