#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ramoe/losses.hpp"
#include "ramoe/model.hpp"
#include "ramoe/rng.hpp"
#include "ramoe/synthdata.hpp"
#include "ramoe/tensor.hpp"

namespace ramoe::meta {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t max_epochs = 60;
  std::size_t iters_per_epoch = 20;
  std::size_t warmup_epochs = 3;
  std::vector<std::size_t> lr_decay_epochs{20, 40};
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t batch_p = 16;  // identities per episode batch
  std::size_t batch_q = 4;   // instances per identity
  bool use_decorrelation = true;
  double val_query_fraction = 0.3;
  std::uint64_t seed = 1;
  model::HyperParams hp;

  void validate(const synth::MultiDomainDataset& sources) const;
};

// Scheduled multiplier on the base learning rates: linear warmup over
// warmup_epochs, then /10 from each decay epoch on. (The inner step size
// alpha is part of the meta objective, not an optimizer setting, so it is
// never scheduled.)
double lr_factor(const TrainConfig& cfg, std::size_t epoch);

struct EpisodicSplit {
  std::vector<std::size_t> meta_train;  // 0-based domain indices, ascending
  std::size_t meta_test = 0;
};
EpisodicSplit episodic_split(std::size_t num_domains, Rng& rng);

// One iteration's losses, built as a pure function of the parameters: running
// statistics are only queued on the sink, never mutated, so rebuilding at
// perturbed parameters supports finite differencing of the meta gradient.
struct IterationLosses {
  Tensor domain_train;    // sum of per-meta-train-domain losses
  Tensor domain_test;     // meta-test domain loss
  Tensor relation_train;  // sum over meta-train domains (constant 0 if no peers)
  Tensor relation_test;   // relation loss at the inner-updated voting weights
  bool inner_step_taken = false;
  std::vector<Tensor> inner_grads;  // d relation_train / d voting params
  losses::LossBundle train_bundle;  // component sums; relation included
  losses::LossBundle test_bundle;
  std::vector<double> test_relevance;  // meta-test batch vs each meta-train
                                       // domain, aligned with split.meta_train
  long clamp_count = 0;
  long flagged_rows = 0;
};

IterationLosses build_iteration(const model::ModelParams& p,
                                const std::vector<synth::EpisodeBatch>& batches,
                                const EpisodicSplit& split,
                                const model::HyperParams& hp, bool use_decor,
                                model::StatsSink* sink);

// Everything one optimizer pass needs, evaluated before any update. Gradients
// are grouped by which update rule consumes them; `iteration` tags them so a
// stale apply is caught.
enum class Group { backbone, expert, voting };

struct IterationGradients {
  std::size_t iteration = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> grads;
  std::vector<Group> groups;
  IterationLosses losses;
};

IterationGradients compute_iteration_gradients(
    const model::ModelParams& p, const std::vector<synth::EpisodeBatch>& batches,
    const EpisodicSplit& split, const model::HyperParams& hp, bool use_decor,
    model::StatsSink* sink, std::size_t iteration);

class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind) : kind_(kind) {}
  // Applies grads to the named slots at the given rates (backbone/expert
  // groups at beta_lr, voting at gamma_lr). Throws if the gradients were
  // computed at a different iteration than the one being applied.
  void step(model::ModelParams& p, const IterationGradients& g, double beta_lr,
            double gamma_lr, std::size_t current_iteration);

 private:
  struct State {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  std::map<std::string, State> state_;
  OptimizerKind kind_;
};

struct IterRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  std::size_t meta_test_domain = 0;  // 0-based
  double lr = 0.0;                   // scheduled beta
  losses::LossBundle train;
  losses::LossBundle test;
  std::vector<double> test_relevance;
  std::vector<std::size_t> meta_train;
  long clamp_count = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double val_map = 0.0;  // mean source-domain validation mAP
  std::vector<double> per_domain_map;
  bool best = false;
};

struct TrainLog {
  std::vector<IterRecord> iters;
  std::vector<EpochRecord> epochs;
  void write_jsonl(const std::string& path) const;
};

struct TrainResult {
  model::ModelParams params;  // final
  TrainLog log;
  std::size_t best_epoch = 0;
  double best_val_map = 0.0;
};

// Full loop. When run_dir is non-empty, checkpoints go to
// <run_dir>/checkpoints/ (epoch_NNN.ckpt and best.ckpt, created as needed)
// and the log to <run_dir>/logs/trainlog.jsonl.
TrainResult train(const synth::MultiDomainDataset& sources,
                  const TrainConfig& cfg, const std::string& run_dir = "");

// Central-difference probe of the combined voting gradient
// (1-eta) dLr_s/dtheta + eta dLr_u(theta')/dtheta at a frozen iteration.
struct MetaGradCheck {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t probes = 0;
};

MetaGradCheck check_meta_gradient(const model::ModelParams& p,
                                  const std::vector<synth::EpisodeBatch>& batches,
                                  const EpisodicSplit& split,
                                  const model::HyperParams& hp,
                                  std::size_t probes_per_tensor, double step,
                                  std::uint64_t seed);

}  // namespace ramoe::meta
