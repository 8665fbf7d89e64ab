#include "ramoe/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ramoe/errors.hpp"
#include "tensor_detail.hpp"

namespace ramoe {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;
std::uint32_t g_generation = 0;

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> values,
                                     bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                " does not hold " +
                                std::to_string(values.size()) + " values");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->generation = g_generation;
  return n;
}

}  // namespace

Tensor Tensor::leaf(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  detail::check_finite("leaf", values);
  return from_node(new_node(std::move(shape), std::move(values),
                            requires_grad && g_grad_enabled));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  detail::check_finite("constant", values);
  return from_node(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::zeros(const Shape& shape) {
  return constant(shape, std::vector<double>(shape_numel(shape), 0.0));
}

Tensor Tensor::ones(const Shape& shape) {
  return constant(shape, std::vector<double>(shape_numel(shape), 1.0));
}

Tensor Tensor::full(const Shape& shape, double v) {
  return constant(shape, std::vector<double>(shape_numel(shape), v));
}

double Tensor::item() const {
  if (!node_ || node_->values.size() != 1)
    throw std::invalid_argument("item: tensor is not a single value");
  return node_->values[0];
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return from_node(new_node(node_->shape, node_->values, false));
}

Tensor Tensor::from_node(std::shared_ptr<TensorNode> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::uint32_t current_generation() { return g_generation; }

namespace detail {

void check_finite(const char* name, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by op '") +
                         name + "'");
  }
}

Tensor make_node(const char* name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(name, values);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& in : inputs)
      if (in.defined() && in.requires_grad()) {
        needs = true;
        break;
      }
  }
  Tensor out = Tensor::from_node(new_node(std::move(shape), std::move(values), needs));
  if (needs) {
    auto rec = std::make_unique<OpRecord>();
    rec->name = name;
    rec->inputs = std::move(inputs);
    rec->backward = std::move(backward);
    out.node()->op = std::move(rec);
  }
  return out;
}

Shape broadcast_shape(const char* opname, const Shape& a, const Shape& b) {
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = ra > rb ? ra : rb;
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const std::size_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(opname) + ": shapes " +
                                  shape_str(a) + " and " + shape_str(b) +
                                  " do not broadcast");
    out[i] = da > db ? da : db;
  }
  return out;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t pad = out.size() - in.size();
  auto in_st = row_major_strides(in);
  std::vector<std::size_t> st(out.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i)
    st[pad + i] = in[i] == 1 ? 0 : in_st[i];
  return st;
}

std::uint32_t next_generation() { return ++g_generation; }

}  // namespace detail

}  // namespace ramoe
