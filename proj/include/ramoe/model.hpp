#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramoe/tensor.hpp"

namespace ramoe::model {

enum class SigmaFn { softmax, sigmoid };
enum class IntegrateFn { concat, sum };

struct HyperParams {
  double lambda = 5e-4;  // center-loss weight inside the metric loss
  double alpha = 3.5e-4;  // inner-step learning rate
  double beta = 3.5e-4;   // base learning rate (backbone/experts/prototypes)
  // The voting network's only learning signal passes through cosine scores
  // against prototype mean directions whose norms sit well below one, so its
  // gradients run an order of magnitude smaller than the expert gradients;
  // a 10x rate keeps its effective step comparable.
  double gamma = 3.5e-3;  // meta learning rate (voting network)
  double eta = 0.5;       // balance between the two voting-gradient terms
  double margin = 0.3;    // triplet margin
  std::size_t d_in = 64;
  std::size_t hidden = 128;
  std::size_t d_feat = 64;
  std::size_t d_emb = 32;
  SigmaFn sigma_fn = SigmaFn::softmax;
  IntegrateFn integrate_fn = IntegrateFn::concat;

  void validate() const;  // throws ConfigError on out-of-range values
};

enum class Mode { train, eval };

// Deferred running-statistics updates: normalization forwards push the batch
// statistics here instead of mutating state, so evaluating a loss twice at
// the same parameters gives the same value (finite differences depend on
// that). The training loop applies the sink once per iteration.
struct StatsUpdate {
  std::vector<double>* mean = nullptr;
  std::vector<double>* var = nullptr;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // unbiased
};

struct StatsSink {
  std::vector<StatsUpdate> updates;
  void apply(double momentum = 0.1);
};

struct LinearParams {
  Tensor w;  // {in, out}
  Tensor b;  // {out}
};

struct NormParams {
  Tensor gamma;  // {d}
  Tensor beta;   // {d}
  // Buffers, not differentiation targets; mutable because a train-mode
  // forward on const params may queue an update that is applied later.
  mutable std::vector<double> running_mean;
  mutable std::vector<double> running_var;
};

struct ExpertParams {
  LinearParams embed;  // d_feat -> d_emb
  NormParams norm;     // over d_emb
  LinearParams cls;    // d_emb -> L_k
};

struct VotingParams {
  LinearParams fc;  // d_feat -> d_emb
  NormParams norm;  // over d_emb
};

struct ModelParams {
  LinearParams backbone1;  // d_in -> hidden
  LinearParams backbone2;  // hidden -> d_feat
  std::vector<ExpertParams> experts;
  std::vector<Tensor> prototypes;  // {L_k, d_emb} each, zero-initialized
  VotingParams voting;
  std::size_t num_experts() const { return experts.size(); }
};

ModelParams init(const std::vector<std::size_t>& identities_per_domain,
                 const HyperParams& hp, std::uint64_t seed);

// Fresh leaves with identical values; running buffers copied.
ModelParams clone(const ModelParams& p);

Tensor linear(const LinearParams& lp, const Tensor& x);

// Train mode standardizes with current-batch statistics (kept on the tape so
// gradients flow through them) and queues a running-stats update on the sink;
// eval mode standardizes with the stored running statistics.
Tensor norm_forward(const NormParams& np, const Tensor& x, Mode mode,
                    StatsSink* sink);
// Same, but with the affine tensors passed explicitly — a pass through
// meta-updated voting weights still reads and feeds the live buffers.
Tensor norm_apply(const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean,
                  std::vector<double>& running_var, const Tensor& x, Mode mode,
                  StatsSink* sink);

Tensor backbone_forward(const ModelParams& p, const Tensor& x);
struct ExpertOut {
  Tensor m;       // batch x d_emb, pre-classifier embedding
  Tensor logits;  // batch x L_k
};
ExpertOut expert_forward(const ExpertParams& e, const Tensor& f, Mode mode,
                         StatsSink* sink);
Tensor voting_forward(const VotingParams& v, const Tensor& f, Mode mode,
                      StatsSink* sink);

// Named trainable tensors, checkpoint order. Running stats excluded.
struct NamedTensor {
  std::string name;
  Tensor t;
};
std::vector<NamedTensor> trainable_parameters(const ModelParams& p);

// Mutable view of the same tensors, same names and order; optimizers write
// updated leaves back through the slots.
struct NamedSlot {
  std::string name;
  Tensor* t = nullptr;
};
std::vector<NamedSlot> parameter_slots(ModelParams& p);

void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);  // strict

}  // namespace ramoe::model
