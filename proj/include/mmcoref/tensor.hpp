#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Ops build new nodes
// that remember their parents and a backward closure; backward() walks the
// graph in reverse topological order. Tensors are rank 1 or 2; a rank-1
// tensor of extent n behaves as a 1 x n row in every op.
//
// Graphs are single-threaded. Independent graphs (for example one per batch
// item) may be built and differentiated concurrently as long as they share
// no leaf tensors.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmcoref {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Writable view of the values. Only meaningful on leaves; mutating an
  // interior node does not re-run its forward computation.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  std::string_view op() const;

  // A fresh leaf holding a copy of the values (no graph history).
  Tensor detach_copy(bool requires_grad) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(detail::Node&)>, std::string_view);
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";

  // Allocates grad on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Builds an interior node. Used by the op implementations and by fused ops in
// other modules (the focal loss). `backward` is dropped when no parent needs a
// gradient.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward, std::string_view op);

/// Populates gradients of every requires-grad node reachable from `loss`.
/// Leaf gradients accumulate across calls; interior gradients are reset.
void backward(const Tensor& loss);

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[m x n] + b[1 x n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& b);
/// x * W + b.
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row softmax of x + mask. `mask` (optional, never differentiated) is either
/// the same shape as x or a single row broadcast to every row; masked entries
/// hold kernels::kMaskedScore. Fully masked rows come out as zeros.
Tensor softmax_rows(const Tensor& x, const Tensor& mask = {});

/// Per-row normalisation: (x - mean) / sqrt(var + 1e-12) * gain + shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);
inline constexpr double kLayerNormEpsilon = 1e-12;

/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices);
/// axis 0 stacks rows, axis 1 joins columns.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Gathers rows by index (rows may repeat).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor sum(const Tensor& x);

/// sum_r weights[r] * mats[r] for a 1 x R weight row and R constant matrices.
Tensor weighted_sum(const Tensor& weights, const std::vector<Tensor>& mats);

}  // namespace mmcoref
