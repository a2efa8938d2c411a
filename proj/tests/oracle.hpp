#pragma once

// Plain-loop reference forward pass used as an oracle for the encoder.
// Shares no code with the library beyond reading parameter values.

#include <cmath>
#include <vector>

#include "mmcoref/data_model.hpp"
#include "mmcoref/model.hpp"
#include "mmcoref/tensor.hpp"

namespace oracle {

struct Mat {
  std::size_t r = 0, c = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

inline Mat of(const mmcoref::Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = t.data()[i];
  return m;
}

inline Mat mm(const Mat& a, const Mat& b) {
  Mat o(a.r, b.c);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < b.c; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.c; ++k) s += a(i, k) * b(k, j);
      o(i, j) = s;
    }
  return o;
}

inline Mat cols(const Mat& a, std::size_t begin, std::size_t n) {
  Mat o(a.r, n);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < n; ++j) o(i, j) = a(i, begin + j);
  return o;
}

inline Mat affine(const Mat& x, const Mat& w, const Mat& b) {
  Mat o = mm(x, w);
  for (std::size_t i = 0; i < o.r; ++i)
    for (std::size_t j = 0; j < o.c; ++j) o(i, j) += b.v[j];
  return o;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

inline Mat norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat o(x.r, x.c);
  for (std::size_t i = 0; i < x.r; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < x.c; ++j) mu += x(i, j);
    mu /= static_cast<double>(x.c);
    for (std::size_t j = 0; j < x.c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(x.c);
    for (std::size_t j = 0; j < x.c; ++j)
      o(i, j) = (x(i, j) - mu) / std::sqrt(var + 1e-12) * g.v[j] + b.v[j];
  }
  return o;
}

inline double gelu(double x) {
  return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
}

// Softmax over row entries whose key is not padded.
inline std::vector<double> softmax(const std::vector<double>& s, const std::vector<bool>& pad) {
  double mx = -1e300;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (!pad[j]) mx = std::max(mx, s[j]);
  std::vector<double> e(s.size(), 0.0);
  double z = 0;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (!pad[j]) z += (e[j] = std::exp(s[j] - mx));
  for (double& x : e) x /= z;
  return e;
}

inline double g(const mmcoref::RelationMasks& m, std::size_t r, std::size_t i, std::size_t j) {
  return m.g[r][i * m.size + j];
}

inline Mat layer(const Mat& h, const mmcoref::LayerParams& p, const mmcoref::ModelConfig& c,
                 mmcoref::AttentionMode mode, const mmcoref::RelationMasks& masks,
                 const std::vector<bool>& pad) {
  using mmcoref::AttentionMode;
  const std::size_t n = h.r, dk = c.head_dim();
  const double s = 1.0 / std::sqrt(static_cast<double>(dk));
  Mat ctx(n, c.d_model);
  const Mat beta = of(p.beta);
  for (std::size_t hd = 0; hd < c.heads; ++hd) {
    const Mat q = mm(h, cols(of(p.wq), hd * dk, dk));
    const Mat k = mm(h, cols(of(p.wk), hd * dk, dk));
    const Mat v = mm(h, cols(of(p.wv), hd * dk, dk));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> sc(n);
      for (std::size_t j = 0; j < n; ++j) {
        double a = 0;
        for (std::size_t t = 0; t < dk; ++t) a += q(i, t) * k(j, t);
        a *= s;
        if (mode == AttentionMode::kAttnBias)
          for (std::size_t r = 0; r < 4; ++r) a += beta(hd, r) * g(masks, r, i, j);
        sc[j] = a;
      }
      const auto w = softmax(sc, pad);
      for (std::size_t t = 0; t < dk; ++t) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += w[j] * v(j, t);
        ctx(i, hd * dk + t) = acc;
      }
    }
  }
  Mat h1 = norm(plus(h, affine(ctx, of(p.wo), of(p.bo))), of(p.ln1_gain), of(p.ln1_shift));
  if (mode == AttentionMode::kRelAware) {
    Mat add(n, c.d_model);
    const Mat kr = of(p.rel_key), vr = of(p.rel_value);
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const Mat q = mm(h1, cols(of(p.rel_wq), hd * dk, dk));
      const Mat k = mm(h1, cols(of(p.rel_wk), hd * dk, dk));
      const Mat v = mm(h1, cols(of(p.rel_wv), hd * dk, dk));
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> sc(n);
          for (std::size_t j = 0; j < n; ++j) {
            double a = 0;
            for (std::size_t t = 0; t < dk; ++t) a += q(i, t) * (k(j, t) + g(masks, r, i, j) * kr(r, t));
            sc[j] = a * s;
          }
          const auto u = softmax(sc, pad);
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g(masks, r, i, j);
            for (std::size_t t = 0; t < dk; ++t)
              add(i, hd * dk + t) += gij * u[j] * (v(j, t) + gij * vr(r, t));
          }
        }
      }
    }
    h1 = plus(h1, add);
  }
  Mat f = affine(h1, of(p.ff_w1), of(p.ff_b1));
  for (double& x : f.v) x = gelu(x);
  return norm(plus(h1, affine(f, of(p.ff_w2), of(p.ff_b2))), of(p.ln2_gain), of(p.ln2_shift));
}

// Object probabilities for an embedded sequence.
inline std::vector<double> probs(const mmcoref::Tensor& sequence, std::size_t object_begin,
                                 std::size_t num_objects, const mmcoref::RelationMasks& masks,
                                 const std::vector<bool>& pad, const mmcoref::ModelParams& p,
                                 const mmcoref::ModelConfig& c, mmcoref::AttentionMode mode) {
  Mat h = of(sequence);
  for (const auto& l : p.layers) h = layer(h, l, c, mode, masks, pad);
  std::vector<double> out;
  for (std::size_t i = 0; i < num_objects; ++i) {
    double z = p.head_b.data()[0];
    for (std::size_t t = 0; t < c.d_model; ++t) z += h(object_begin + i, t) * p.head_w.data()[t];
    out.push_back(1.0 / (1.0 + std::exp(-z)));
  }
  return out;
}

}  // namespace oracle
