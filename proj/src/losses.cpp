#include "ramoe/losses.hpp"

#include <cmath>
#include <string>

#include "ramoe/errors.hpp"

namespace ramoe::losses {

namespace {

void check_labels(const std::vector<std::size_t>& labels, std::size_t batch,
                  std::size_t num_classes, const char* who) {
  if (labels.size() != batch)
    throw DataError(std::string(who) + ": " + std::to_string(labels.size()) +
                    " labels for a batch of " + std::to_string(batch));
  for (std::size_t l : labels)
    if (l >= num_classes)
      throw DataError(std::string(who) + ": label " + std::to_string(l) +
                      " out of range [0, " + std::to_string(num_classes) + ")");
}

// Hard-pair preconditions: every anchor needs a same-label peer and a
// different-label sample.
void check_pk_structure(const std::vector<std::size_t>& labels,
                        const char* who) {
  std::size_t max_label = 0;
  for (std::size_t l : labels) max_label = std::max(max_label, l);
  std::vector<std::size_t> counts(max_label + 1, 0);
  for (std::size_t l : labels) ++counts[l];
  std::size_t distinct = 0;
  for (std::size_t c : counts) distinct += c > 0;
  if (distinct < 2)
    throw DataError(std::string(who) + ": needs at least 2 distinct identities");
  for (std::size_t l = 0; l < counts.size(); ++l)
    if (counts[l] == 1)
      throw DataError(std::string(who) + ": identity " + std::to_string(l) +
                      " has no positive peer in the batch");
}

}  // namespace

HardPairs mine_batch_hard(const std::vector<double>& dist, std::size_t n,
                          const std::vector<std::size_t>& labels) {
  HardPairs hp;
  hp.pos.resize(n);
  hp.neg.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool has_pos = false, has_neg = false;
    double best_pos = 0.0, best_neg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dist[i * n + j];
      if (labels[j] == labels[i]) {
        if (j == i) continue;
        if (!has_pos || d > best_pos) {  // strict: ties keep the lowest index
          has_pos = true;
          best_pos = d;
          hp.pos[i] = j;
        }
      } else if (!has_neg || d < best_neg) {
        has_neg = true;
        best_neg = d;
        hp.neg[i] = j;
      }
    }
    if (!has_pos)
      throw DataError("batch-hard mining: anchor " + std::to_string(i) +
                      " has no positive");
    if (!has_neg)
      throw DataError("batch-hard mining: anchor " + std::to_string(i) +
                      " has no negative");
  }
  return hp;
}

Tensor classification_loss(const Tensor& logits,
                           const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("classification_loss: logits must be rank-2");
  const std::size_t n = logits.size(0), L = logits.size(1);
  check_labels(labels, n, L, "classification_loss");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * L + labels[i];
  Tensor lse = logsumexp_last(logits, false);          // {n}
  Tensor true_logit = gather_flat(logits, std::move(idx));  // {n}
  return mean(sub(lse, true_logit));
}

Tensor triplet_batch_hard(const Tensor& embeddings,
                          const std::vector<std::size_t>& labels,
                          double margin) {
  if (embeddings.rank() != 2)
    throw std::invalid_argument("triplet_batch_hard: embeddings must be rank-2");
  const std::size_t n = embeddings.size(0);
  if (labels.size() != n)
    throw DataError("triplet_batch_hard: label count mismatch");
  check_pk_structure(labels, "triplet_batch_hard");

  Tensor dist = pairwise_dist(embeddings);
  const HardPairs hp = mine_batch_hard(dist.values(), n, labels);
  std::vector<std::size_t> pos_idx(n), neg_idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos_idx[i] = i * n + hp.pos[i];
    neg_idx[i] = i * n + hp.neg[i];
  }
  Tensor d_pos = gather_flat(dist, std::move(pos_idx));
  Tensor d_neg = gather_flat(dist, std::move(neg_idx));
  return mean(relu(add_const(sub(d_pos, d_neg), margin)));
}

Tensor center_loss(const Tensor& embeddings,
                   const std::vector<std::size_t>& labels,
                   const Tensor& prototypes) {
  if (embeddings.rank() != 2 || prototypes.rank() != 2 ||
      embeddings.size(1) != prototypes.size(1))
    throw std::invalid_argument("center_loss: embedding/prototype widths differ");
  check_labels(labels, embeddings.size(0), prototypes.size(0), "center_loss");
  Tensor centers = index_select_rows(prototypes, labels);
  Tensor sq = sum_axis(square(sub(embeddings, centers)), 1, false);
  return scale(mean(sq), 0.5);
}

Tensor decorrelation_loss(std::size_t k,
                          const std::vector<Tensor>& all_embeddings,
                          long* flagged) {
  const std::size_t K = all_embeddings.size();
  if (K < 2)
    throw DataError("decorrelation_loss: needs at least 2 experts, got " +
                    std::to_string(K));
  if (k >= K)
    throw std::invalid_argument("decorrelation_loss: expert index out of range");
  if (flagged) {
    for (const Tensor& m : all_embeddings) {
      const std::size_t n = m.size(0), d = m.size(1);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double v = m.values()[i * d + j];
          s += v * v;
        }
        if (std::sqrt(s) < 1e-9) ++*flagged;
      }
    }
  }
  std::vector<Tensor> normed;
  normed.reserve(K);
  for (const Tensor& m : all_embeddings) normed.push_back(l2_normalize_last(m));

  Tensor acc;  // {n, 1}: sum over the K-1 cross terms of ||m^k ⊙ m^j||
  for (std::size_t j = 0; j < K; ++j) {
    if (j == k) continue;
    Tensor term = l2_norm_last(mul(normed[k], normed[j]), 1e-24);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(mean(acc), 1.0 / static_cast<double>(K - 1));
}

Tensor relevance_scores(const Tensor& q, const Tensor& prototypes) {
  if (q.rank() != 2 || prototypes.rank() != 2 ||
      q.size(1) != prototypes.size(1))
    throw std::invalid_argument("relevance_scores: width mismatch");
  if (prototypes.size(0) == 0)
    throw DataError("relevance_scores: empty prototype matrix");
  Tensor sims = matmul(l2_normalize_last(q),
                       transpose(l2_normalize_last(prototypes)));
  return mean_axis(sims, 1, false);  // {n}
}

Tensor aggregate(const std::vector<Tensor>& features, const Tensor& scores,
                 SigmaFn sigma_fn, IntegrateFn integrate_fn) {
  const std::size_t J = features.size();
  if (J == 0) throw std::invalid_argument("aggregate: no features");
  if (scores.rank() != 2 || scores.size(1) != J)
    throw std::invalid_argument(
        "aggregate: scores must be batch x " + std::to_string(J) + ", got " +
        shape_str(scores.shape()));
  const std::size_t n = scores.size(0), d = features[0].size(1);
  for (const Tensor& f : features)
    if (f.rank() != 2 || f.size(0) != n || f.size(1) != d)
      throw std::invalid_argument("aggregate: feature shape mismatch");

  Tensor weights = sigma_fn == SigmaFn::softmax ? softmax_last(scores)
                                                : sigmoid(scores);
  std::vector<Tensor> weighted;
  weighted.reserve(J);
  for (std::size_t j = 0; j < J; ++j)
    weighted.push_back(mul(features[j], slice_last(weights, j, 1)));
  if (integrate_fn == IntegrateFn::concat) return concat_last(weighted);
  Tensor out = weighted[0];
  for (std::size_t j = 1; j < J; ++j) out = add(out, weighted[j]);
  return out;
}

Tensor softmax_triplet_relation(const Tensor& features,
                                const std::vector<std::size_t>& labels) {
  if (features.rank() != 2)
    throw std::invalid_argument("softmax_triplet_relation: rank-2 input needed");
  const std::size_t n = features.size(0);
  if (labels.size() != n)
    throw DataError("softmax_triplet_relation: label count mismatch");
  check_pk_structure(labels, "softmax_triplet_relation");

  Tensor dist = pairwise_dist(features);
  const HardPairs hp = mine_batch_hard(dist.values(), n, labels);
  std::vector<std::size_t> pos_idx(n), neg_idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos_idx[i] = i * n + hp.pos[i];
    neg_idx[i] = i * n + hp.neg[i];
  }
  Tensor d_pos = gather_flat(dist, std::move(pos_idx));
  Tensor d_neg = gather_flat(dist, std::move(neg_idx));
  // exp(d+)/(exp(d+)+exp(d-)) == sigmoid(d+ - d-), overflow-free
  return sigmoid(sub(d_pos, d_neg));
}

Tensor relation_alignment_loss(const Tensor& r_v, const Tensor& r_m,
                               long* clamped) {
  if (r_v.shape() != r_m.shape())
    throw std::invalid_argument("relation_alignment_loss: shape mismatch");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  Tensor pred = clamp(r_v, lo, hi, clamped);
  Tensor target = clamp(r_m.detach(), lo, hi, clamped);
  Tensor ll = add(mul(target, log(pred)),
                  mul(add_const(neg(target), 1.0), log(add_const(neg(pred), 1.0))));
  return neg(mean(ll));
}

DomainLossTensors domain_loss(const Tensor& logits, const Tensor& embeddings,
                              const std::vector<std::size_t>& labels,
                              const Tensor& prototypes, std::size_t k,
                              const std::vector<Tensor>& all_embeddings,
                              double lambda, double margin, long* flagged,
                              bool with_decor) {
  DomainLossTensors out;
  out.cls = classification_loss(logits, labels);
  out.tri = triplet_batch_hard(embeddings, labels, margin);
  out.cent = center_loss(embeddings, labels, prototypes);
  out.metric = add(add(out.cls, out.tri), scale(out.cent, lambda));
  out.decor = with_decor ? decorrelation_loss(k, all_embeddings, flagged)
                         : Tensor::scalar(0.0);
  out.domain = add(out.metric, out.decor);
  return out;
}

}  // namespace ramoe::losses
