#pragma once

#include <cstddef>
#include <vector>

#include "ramoe/model.hpp"
#include "ramoe/tensor.hpp"

namespace ramoe::losses {

using model::IntegrateFn;
using model::SigmaFn;

// Mean negative log-softmax at the true class.
Tensor classification_loss(const Tensor& logits,
                           const std::vector<std::size_t>& labels);

// Batch-hard: per anchor, farthest same-label (excluding self) and nearest
// different-label sample, ties broken by lowest index; hinge at `margin`.
Tensor triplet_batch_hard(const Tensor& embeddings,
                          const std::vector<std::size_t>& labels, double margin);

// Half the mean squared distance to each sample's class prototype; gradient
// reaches both embeddings and prototypes.
Tensor center_loss(const Tensor& embeddings,
                   const std::vector<std::size_t>& labels,
                   const Tensor& prototypes);

// Mean over the batch of (1/(K-1)) * sum_{j != k} ||m^k ⊙ m^j|| on row-wise
// L2-normalized embeddings. `all_embeddings` holds every expert's embedding
// of the same samples; `k` names the batch's own expert. `flagged` (optional)
// counts rows whose pre-normalization norm fell below 1e-9.
Tensor decorrelation_loss(std::size_t k, const std::vector<Tensor>& all_embeddings,
                          long* flagged = nullptr);

// Mean inner product of each (normalized) query row against every
// (normalized) prototype row: one score per sample.
Tensor relevance_scores(const Tensor& q, const Tensor& prototypes);

// Per-sample weights sigma(scores) over J experts, then weighted concat (batch
// x J*d) or weighted sum (batch x d).
Tensor aggregate(const std::vector<Tensor>& features, const Tensor& scores,
                 SigmaFn sigma_fn, IntegrateFn integrate_fn);

// R = exp(d+)/(exp(d+)+exp(d-)) per anchor, with batch-hard d+/d- measured in
// the given feature space. Lower = more discriminative.
Tensor softmax_triplet_relation(const Tensor& features,
                                const std::vector<std::size_t>& labels);

// BCE(prediction = r_v, target = r_m); r_m is detached inside, both clamped
// to [1e-7, 1-1e-7] (`clamped` counts clamp activations).
Tensor relation_alignment_loss(const Tensor& r_v, const Tensor& r_m,
                               long* clamped = nullptr);

// The composed objectives, kept as tape scalars so one call yields everything
// a training step needs. metric = (cls + tri) + lambda*cent and
// domain = metric + decor are built exactly in that association order, so
// recomputing them from the parts reproduces the same doubles.
struct DomainLossTensors {
  Tensor cls, tri, cent, metric, decor, domain;
};

// with_decor=false replaces the decorrelation term with an exact zero (the
// decorrelation ablation); the domain = metric + decor identity still holds.
DomainLossTensors domain_loss(const Tensor& logits, const Tensor& embeddings,
                              const std::vector<std::size_t>& labels,
                              const Tensor& prototypes, std::size_t k,
                              const std::vector<Tensor>& all_embeddings,
                              double lambda, double margin,
                              long* flagged = nullptr, bool with_decor = true);

// Plain-number snapshot for logging.
struct LossBundle {
  double cls = 0, tri = 0, cent = 0, metric = 0, decor = 0, domain = 0,
         relation = 0;
};

// Shared batch-hard mining rule (exposed for the relation/triplet tests):
// returns per-anchor column indices into the n x n distance matrix.
struct HardPairs {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
};
HardPairs mine_batch_hard(const std::vector<double>& dist, std::size_t n,
                          const std::vector<std::size_t>& labels);

}  // namespace ramoe::losses
