#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ramoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

// Gradients aligned with OpRecord::inputs; a default-constructed Tensor marks
// an input that receives no gradient. The engine passes the node's output as
// `out` so rules like d(exp)/dx = g * out need not capture it (which would
// create a reference cycle through the record).
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const Tensor& out)>;

struct OpRecord {
  const char* name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::uint64_t id = 0;          // creation order; inputs always precede outputs
  std::uint32_t generation = 0;  // which backward pass (if any) created this node
  std::unique_ptr<OpRecord> op;  // null for leaves and constants
};

// Value-semantic handle to an immutable node of the computation record.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> values,
                     bool requires_grad = true);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  const std::vector<double>& values() const { return node_->values; }
  double item() const;
  bool requires_grad() const { return node_->requires_grad; }

  // Same values, cut loose from the computation record.
  Tensor detach() const;

  TensorNode* node() const { return node_.get(); }

  static Tensor from_node(std::shared_ptr<TensorNode> n);

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- gradient recording mode ------------------------------------------------

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Generation counter; bumped whenever backward() records a derivative graph.
std::uint32_t current_generation();

// ---- backward ---------------------------------------------------------------

struct BackwardStats {
  std::size_t visited = 0;
  std::size_t unique_nodes = 0;
};

// Reverse-mode sweep from a scalar loss to the given targets. With
// create_graph the produced gradients are themselves recorded, so they can be
// differentiated again. Targets that the loss does not reach get zeros.
std::vector<Tensor> backward(const Tensor& loss,
                             const std::vector<Tensor>& targets,
                             bool create_graph = false);

const BackwardStats& last_backward_stats();

// ---- primitives ---------------------------------------------------------

// Elementwise with numpy-style broadcasting (ranks aligned right, axes equal
// or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
Tensor transpose(const Tensor& a);                // 2-D only
Tensor reshape(const Tensor& a, Shape s);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Clamps into [lo, hi]; *clamped (optional) is incremented per clamped entry.
Tensor clamp(const Tensor& a, double lo, double hi, long* clamped = nullptr);
Tensor sum(const Tensor& a);  // all elements -> rank-0 scalar
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim);
Tensor gather_flat(const Tensor& a, std::vector<std::size_t> idx);
Tensor scatter_add_flat(const Tensor& v, std::vector<std::size_t> idx,
                        std::size_t out_numel);
Tensor concat_last(const std::vector<Tensor>& xs);
Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len);
Tensor pairwise_sqdist(const Tensor& a);  // n×d -> n×n

// ---- composites ----------------------------------------------------------

Tensor neg(const Tensor& a);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor square(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim);
Tensor softmax_last(const Tensor& a);
Tensor logsumexp_last(const Tensor& a, bool keepdim);
Tensor l2_norm_last(const Tensor& a, double eps = 0.0);
Tensor l2_normalize_last(const Tensor& a, double eps = 1e-12);
Tensor pairwise_dist(const Tensor& a, double eps = 1e-12);
Tensor index_select_rows(const Tensor& a, const std::vector<std::size_t>& rows);
// J column vectors of length n -> n×J matrix.
Tensor stack_columns(const std::vector<Tensor>& cols);

// Gradient sum-reduced onto `target` shape after a broadcast op.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

}  // namespace ramoe
