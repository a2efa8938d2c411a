#pragma once

// Dense row-major kernels used by the autodiff ops.
//
// Every kernel has a serial reference and an OpenMP variant. The OpenMP
// variants split work over output rows only, so each output element is
// accumulated in exactly the same order as in the serial reference and the
// two produce bitwise-identical results.

#include <cstddef>
#include <span>

namespace mmcoref::kernels {

/// Additive mask value for disallowed attention positions.
inline constexpr double kMaskedScore = -1e30;
/// Any mask entry at or below this is treated as "masked" by softmax_rows.
inline constexpr double kMaskedThreshold = -1e29;

enum class Backend { kSerial, kParallel, kAuto };

// Selects what kAuto resolves to. Defaults to kParallel when more than one
// OpenMP thread is available and the caller is not already inside a
// parallel region.
void set_default_backend(Backend backend);
Backend default_backend();

// c[m x n] += a[m x k] * b[k x n]
void matmul_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                       std::size_t m, std::size_t k, std::size_t n);
void matmul_acc_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                         std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[m x k] * b[n x k]^T
void matmul_bt_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_bt_acc_parallel(std::span<const double> a, std::span<const double> b,
                            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[k x m]^T * b[k x n]
void matmul_at_acc_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc_parallel(std::span<const double> a, std::span<const double> b,
                            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// Row-wise softmax of x + mask. `mask` is either empty or the same size as x.
// Rows whose mask entries are all <= kMaskedThreshold produce all zeros.
void softmax_rows_serial(std::span<const double> x, std::span<const double> mask,
                         std::span<double> out, std::size_t rows, std::size_t cols);
void softmax_rows_parallel(std::span<const double> x, std::span<const double> mask,
                           std::span<double> out, std::size_t rows, std::size_t cols);

// Dispatching entry points used by the tensor ops.
void matmul_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n, Backend backend = Backend::kAuto);
void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n, Backend backend = Backend::kAuto);
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n, Backend backend = Backend::kAuto);
void softmax_rows(std::span<const double> x, std::span<const double> mask, std::span<double> out,
                  std::size_t rows, std::size_t cols, Backend backend = Backend::kAuto);

}  // namespace mmcoref::kernels
