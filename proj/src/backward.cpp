#include <algorithm>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ramoe/tensor.hpp"
#include "tensor_detail.hpp"

namespace ramoe {

namespace {
BackwardStats g_last_stats;
}  // namespace

std::vector<Tensor> backward(const Tensor& loss,
                             const std::vector<Tensor>& targets,
                             bool create_graph) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a single value");
  for (const Tensor& t : targets)
    if (!t.defined() || !t.requires_grad())
      throw std::invalid_argument("backward: every target must require grad");

  // Reachable differentiable subgraph, plus a live handle per node so
  // backward rules can be handed their own output.
  std::unordered_map<TensorNode*, Tensor> handle;
  std::vector<TensorNode*> order;
  {
    std::vector<Tensor> stack{loss};
    while (!stack.empty()) {
      Tensor t = stack.back();
      stack.pop_back();
      TensorNode* n = t.node();
      if (handle.count(n)) continue;
      handle.emplace(n, t);
      order.push_back(n);
      if (n->op)
        for (const Tensor& in : n->op->inputs)
          if (in.defined() && in.requires_grad()) stack.push_back(in);
    }
  }
  // Node ids grow in creation order and an op's inputs always precede it, so
  // descending id is a reverse topological order. Each node is expanded once,
  // after all of its consumers have deposited their contributions.
  std::sort(order.begin(), order.end(),
            [](TensorNode* a, TensorNode* b) { return a->id > b->id; });

  g_last_stats = {};
  g_last_stats.unique_nodes = order.size();

  std::optional<NoGradGuard> guard;
  if (!create_graph)
    guard.emplace();
  else
    detail::next_generation();

  std::unordered_map<TensorNode*, Tensor> grads;
  grads.emplace(loss.node(), Tensor::ones(loss.shape()));

  for (TensorNode* n : order) {
    auto it = grads.find(n);
    if (it == grads.end() || !n->op) continue;
    const Tensor g = it->second;
    std::vector<Tensor> gins = n->op->backward(g, handle.at(n));
    ++g_last_stats.visited;
    if (gins.size() != n->op->inputs.size())
      throw std::logic_error(std::string("backward rule for '") + n->op->name +
                             "' returned wrong gradient count");
    for (std::size_t i = 0; i < gins.size(); ++i) {
      const Tensor& in = n->op->inputs[i];
      if (!in.defined() || !in.requires_grad() || !gins[i].defined()) continue;
      if (gins[i].shape() != in.shape())
        throw std::logic_error(std::string("backward rule for '") +
                               n->op->name + "' produced gradient shape " +
                               shape_str(gins[i].shape()) + " for input " +
                               shape_str(in.shape()));
      auto [jt, inserted] = grads.try_emplace(in.node(), gins[i]);
      if (!inserted) jt->second = add(jt->second, gins[i]);
    }
  }

  std::vector<Tensor> out;
  out.reserve(targets.size());
  for (const Tensor& t : targets) {
    auto it = grads.find(t.node());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(t.shape()));
  }
  return out;
}

const BackwardStats& last_backward_stats() { return g_last_stats; }

}  // namespace ramoe
