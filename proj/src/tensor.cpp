#include "mmcoref/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mmcoref/errors.hpp"
#include "mmcoref/kernels.hpp"

namespace mmcoref {

using detail::Node;

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  if (product(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.back(); }

void add_into(Node& parent, std::span<const double> delta) {
  if (!parent.requires_grad) return;
  auto& g = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = product(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = product(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_leaf({1, 1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
std::string_view Tensor::op() const { return node_->op; }

Tensor Tensor::detach_copy(bool requires_grad) const {
  return Tensor(new_leaf(node_->shape, node_->value, requires_grad));
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn, std::string_view op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  node->op = op;
  for (auto& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.shared_node());
  }
  if (node->requires_grad) node->backward = std::move(backward_fn);
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss) throw ContractError("backward on empty tensor");
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->leaf) node->grad.assign(node->value.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->leaf && node->backward) node->backward(*node);
  }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::matmul_acc(a.data(), b.data(), out, m, k, n);
  return make_op(
      {m, n}, std::move(out), {a, b},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) kernels::matmul_bt_acc(self.grad, pb.value, pa.grad_buffer(), m, n, k);
        if (pb.requires_grad) kernels::matmul_at_acc(pa.value, self.grad, pb.grad_buffer(), k, m, n);
      },
      "matmul");
}

Tensor transpose(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_op(
      {c, r}, std::move(out), {x},
      [r, c](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      },
      "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](Node& self) {
        add_into(*self.parents[0], self.grad);
        add_into(*self.parents[1], self.grad);
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](Node& self) {
        add_into(*self.parents[0], self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_op(
      x.shape(), std::move(out), {x},
      [factor](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
      },
      "scale");
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  const std::size_t r = x.rows(), c = x.cols();
  if (b.size() != c) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.data()[j];
  return make_op(
      {r, c}, std::move(out), {x, b},
      [r, c](Node& self) {
        add_into(*self.parents[0], self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
      },
      "add_row");
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

Tensor softmax_rows(const Tensor& x, const Tensor& mask) {
  const std::size_t r = x.rows(), c = x.cols();
  for (double v : x.data()) {
    if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
  }
  std::vector<double> full_mask;
  if (mask) {
    if (mask.cols() != c || (mask.rows() != r && mask.rows() != 1)) {
      throw DimensionError("softmax_rows: mask " + shape_string(mask.shape()) +
                           " not broadcastable to " + shape_string(x.shape()));
    }
    if (mask.rows() == r) {
      full_mask.assign(mask.data().begin(), mask.data().end());
    } else {
      full_mask.reserve(r * c);
      for (std::size_t i = 0; i < r; ++i)
        full_mask.insert(full_mask.end(), mask.data().begin(), mask.data().end());
    }
  }
  std::vector<double> out(r * c);
  kernels::softmax_rows(x.data(), full_mask, out, r, c);
  return make_op(
      {r, c}, std::move(out), {x},
      [r, c](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          const double* y = self.value.data() + i * c;
          const double* dy = self.grad.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
        }
      },
      "softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || shift.size() != c) {
    throw DimensionError("layer_norm: gain/shift must have " + std::to_string(c) + " entries");
  }
  std::vector<double> normed(r * c), inv_std(r), out(r * c);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += v[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = v[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < c; ++j) {
      normed[i * c + j] = (v[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = normed[i * c + j] * gain.data()[j] + shift.data()[j];
    }
  }
  return make_op(
      {r, c}, std::move(out), {x, gain, shift},
      [r, c, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& ps = *self.parents[2];
        const auto& gv = pg.value;
        if (pg.requires_grad) {
          auto& g = pg.grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * normed[i * c + j];
        }
        if (ps.requires_grad) {
          auto& g = ps.grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
        if (px.requires_grad) {
          auto& g = px.grad_buffer();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dn = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * gv[j];
              mean_d += d;
              mean_dn += d * normed[i * c + j];
            }
            mean_d *= inv_c;
            mean_dn *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * gv[j];
              g[i * c + j] += inv_std[i] * (d - mean_d - normed[i * c + j] * mean_dn);
            }
          }
        }
      },
      "layer_norm");
}

Tensor gelu(const Tensor& x) {
  constexpr double kCoeff = 0.044715;
  const double k_root = std::sqrt(2.0 / M_PI);
  std::vector<double> out(x.size()), deriv(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    const double t = std::tanh(k_root * (v + kCoeff * v * v * v));
    out[i] = 0.5 * v * (1.0 + t);
    deriv[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k_root * (1.0 + 3.0 * kCoeff * v * v);
  }
  return make_op(
      x.shape(), std::move(out), {x},
      [deriv = std::move(deriv)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv[i];
      },
      "gelu");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    // Split by sign so exp never overflows.
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_op(
      x.shape(), std::move(out), {x},
      [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = self.value[i];
          g[i] += self.grad[i] * y * (1.0 - y);
        }
      },
      "sigmoid");
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices) {
  const std::size_t vocab = table.rows(), c = table.cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t idx : indices) {
    if (idx >= vocab) {
      throw LookupError("embedding_lookup: index " + std::to_string(idx) +
                        " outside table of " + std::to_string(vocab) + " rows");
    }
    const auto row = table.data().subspan(idx * c, c);
    out.insert(out.end(), row.begin(), row.end());
  }
  std::vector<std::size_t> ids(indices.begin(), indices.end());
  return make_op(
      {indices.size(), c}, std::move(out), {table},
      [c, ids = std::move(ids)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) g[ids[i] * c + j] += self.grad[i * c + j];
      },
      "embedding_lookup");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  if (axis > 1) throw ContractError("concat axis must be 0 or 1");
  std::vector<std::size_t> extents;
  std::size_t r = 0, c = 0;
  if (axis == 0) {
    c = parts[0].cols();
    for (const auto& p : parts) {
      if (p.cols() != c) {
        throw DimensionError("concat rows: column mismatch " + shape_string(parts[0].shape()) +
                             " vs " + shape_string(p.shape()));
      }
      extents.push_back(p.rows());
      r += p.rows();
    }
  } else {
    r = parts[0].rows();
    for (const auto& p : parts) {
      if (p.rows() != r) {
        throw DimensionError("concat cols: row mismatch " + shape_string(parts[0].shape()) +
                             " vs " + shape_string(p.shape()));
      }
      extents.push_back(p.cols());
      c += p.cols();
    }
  }
  std::vector<double> out(r * c);
  if (axis == 0) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += p.size();
    }
  } else {
    std::size_t col0 = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) out[i * c + col0 + j] = p.data()[i * pc + j];
      col0 += pc;
    }
  }
  return make_op(
      {r, c}, std::move(out), parts,
      [axis, r, c, extents = std::move(extents)](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          Node& p = *self.parents[k];
          const std::size_t e = extents[k];
          if (p.requires_grad) {
            auto& g = p.grad_buffer();
            if (axis == 0) {
              for (std::size_t i = 0; i < e * c; ++i) g[i] += self.grad[offset * c + i];
            } else {
              for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < e; ++j) g[i * e + j] += self.grad[i * c + offset + j];
            }
          }
          offset += e;
        }
      },
      "concat");
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t c = x.cols();
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_op(
      {count, c}, std::move(out), {x},
      [begin, count, c](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < count * c; ++i) g[begin * c + i] += self.grad[i];
      },
      "slice_rows");
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  if (begin + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * c + begin + j];
  return make_op(
      {r, count}, std::move(out), {x},
      [r, c, begin, count](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t c = x.cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t idx : rows) {
    if (idx >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx) + " outside " +
                           shape_string(x.shape()));
    }
    const auto row = x.data().subspan(idx * c, c);
    out.insert(out.end(), row.begin(), row.end());
  }
  std::vector<std::size_t> ids(rows.begin(), rows.end());
  return make_op(
      {rows.size(), c}, std::move(out), {x},
      [c, ids = std::move(ids)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) g[ids[i] * c + j] += self.grad[i * c + j];
      },
      "gather_rows");
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op(
      {1, 1}, {total}, {x},
      [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (double& v : g) v += self.grad[0];
      },
      "sum");
}

Tensor weighted_sum(const Tensor& weights, const std::vector<Tensor>& mats) {
  if (weights.size() != mats.size() || mats.empty()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(mats.size()) + " matrices");
  }
  const Shape shape{mats[0].rows(), mats[0].cols()};
  std::vector<double> out(mats[0].size(), 0.0);
  std::vector<std::shared_ptr<Node>> held;
  for (std::size_t k = 0; k < mats.size(); ++k) {
    if (mats[k].rows() != shape[0] || mats[k].cols() != shape[1]) {
      throw DimensionError("weighted_sum: matrix " + shape_string(mats[k].shape()) + " vs " +
                           shape_string(shape));
    }
    const double w = weights.data()[k];
    const auto m = mats[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * m[i];
    held.push_back(mats[k].shared_node());
  }
  return make_op(
      shape, std::move(out), {weights},
      [held = std::move(held)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < held.size(); ++k) {
          double acc = 0.0;
          const auto& m = held[k]->value;
          for (std::size_t i = 0; i < m.size(); ++i) acc += self.grad[i] * m[i];
          g[k] += acc;
        }
      },
      "weighted_sum");
}

}  // namespace mmcoref
