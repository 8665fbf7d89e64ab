#include "ramoe/meta.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "ramoe/errors.hpp"
#include "ramoe/inference.hpp"

namespace ramoe::meta {

namespace {

using model::HyperParams;
using model::ModelParams;
using synth::EpisodeBatch;

constexpr const char* kThetaNames[4] = {"voting.fc.w", "voting.fc.b",
                                        "voting.norm.gamma",
                                        "voting.norm.beta"};

std::vector<Tensor> theta_tensors(const ModelParams& p) {
  return {p.voting.fc.w, p.voting.fc.b, p.voting.norm.gamma,
          p.voting.norm.beta};
}

void check_split(const EpisodicSplit& split, std::size_t K) {
  if (split.meta_test >= K)
    throw std::invalid_argument("episodic split: meta_test out of range");
  if (split.meta_train.size() != K - 1)
    throw std::invalid_argument("episodic split: expected " +
                                std::to_string(K - 1) + " meta-train domains");
  for (std::size_t i = 0; i < split.meta_train.size(); ++i) {
    if (split.meta_train[i] >= K || split.meta_train[i] == split.meta_test)
      throw std::invalid_argument("episodic split: bad meta-train index");
    if (i > 0 && split.meta_train[i] <= split.meta_train[i - 1])
      throw std::invalid_argument(
          "episodic split: meta-train indices must be ascending");
  }
}

}  // namespace

void TrainConfig::validate(const synth::MultiDomainDataset& sources) const {
  hp.validate();
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (iters_per_epoch == 0) throw ConfigError("iters_per_epoch must be >= 1");
  if (batch_p < 2 || batch_q < 2)
    throw ConfigError("episode batches need at least 2 identities and 2 "
                      "instances per identity");
  for (std::size_t i = 1; i < lr_decay_epochs.size(); ++i)
    if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
      throw ConfigError("lr_decay_epochs must be strictly increasing");
  if (!(val_query_fraction > 0.0 && val_query_fraction < 1.0))
    throw ConfigError("val_query_fraction must lie in (0, 1)");
  if (sources.domains.size() < 2)
    throw ConfigError("training needs at least 2 source domains, got " +
                      std::to_string(sources.domains.size()));
  if (sources.d_in != hp.d_in)
    throw ConfigError("dataset width " + std::to_string(sources.d_in) +
                      " does not match configured d_in " +
                      std::to_string(hp.d_in));
  for (const auto& dom : sources.domains) {
    if (dom.num_identities < batch_p)
      throw ConfigError("domain " + std::to_string(dom.domain_id) + " has " +
                        std::to_string(dom.num_identities) +
                        " identities, fewer than batch_p=" +
                        std::to_string(batch_p));
    std::vector<std::size_t> counts(dom.num_identities, 0);
    for (std::size_t l : dom.labels) ++counts[l];
    for (std::size_t l = 0; l < counts.size(); ++l)
      if (counts[l] < batch_q)
        throw ConfigError("domain " + std::to_string(dom.domain_id) +
                          " identity " + std::to_string(l) + " has " +
                          std::to_string(counts[l]) +
                          " samples, fewer than batch_q=" +
                          std::to_string(batch_q));
  }
}

double lr_factor(const TrainConfig& cfg, std::size_t epoch) {
  double f = 1.0;
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs)
    f = static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  for (std::size_t d : cfg.lr_decay_epochs)
    if (epoch >= d) f *= 0.1;
  return f;
}

EpisodicSplit episodic_split(std::size_t num_domains, Rng& rng) {
  if (num_domains < 2)
    throw ConfigError("episodic split needs at least 2 domains");
  EpisodicSplit s;
  s.meta_test = rng.integer(num_domains);
  for (std::size_t k = 0; k < num_domains; ++k)
    if (k != s.meta_test) s.meta_train.push_back(k);
  return s;
}

IterationLosses build_iteration(const ModelParams& p,
                                const std::vector<EpisodeBatch>& batches,
                                const EpisodicSplit& split,
                                const HyperParams& hp, bool use_decor,
                                model::StatsSink* sink) {
  const std::size_t K = p.num_experts();
  if (K < 2) throw ConfigError("meta iteration needs at least 2 experts");
  if (batches.size() != K)
    throw std::invalid_argument("build_iteration: expected one batch per "
                                "domain");
  check_split(split, K);

  std::vector<Tensor> x(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& b = batches[k];
    const std::size_t n = b.labels.size();
    if (n == 0 || b.inputs.size() != n * hp.d_in)
      throw DataError("build_iteration: batch for domain " +
                      std::to_string(k + 1) + " is malformed");
    x[k] = Tensor::constant({n, hp.d_in}, b.inputs);
  }

  IterationLosses out;

  std::vector<Tensor> f(K);
  for (std::size_t k = 0; k < K; ++k) f[k] = model::backbone_forward(p, x[k]);

  // Every expert embeds every batch: cross-expert embeddings feed the
  // decorrelation term and the relation aggregation.
  std::vector<std::vector<Tensor>> emb(K, std::vector<Tensor>(K));
  std::vector<Tensor> own_logits(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) {
      auto eo = model::expert_forward(p.experts[j], f[k], model::Mode::train,
                                      sink);
      emb[k][j] = eo.m;
      if (j == k) own_logits[k] = eo.logits;
    }
  }

  auto& tb = out.train_bundle;
  Tensor dtrain;
  bool first = true;
  for (std::size_t k : split.meta_train) {
    auto dl = losses::domain_loss(own_logits[k], emb[k][k], batches[k].labels,
                                  p.prototypes[k], k, emb[k], hp.lambda,
                                  hp.margin, &out.flagged_rows, use_decor);
    dtrain = first ? dl.domain : add(dtrain, dl.domain);
    first = false;
    tb.cls += dl.cls.item();
    tb.tri += dl.tri.item();
    tb.cent += dl.cent.item();
    tb.decor += dl.decor.item();
  }
  tb.metric = (tb.cls + tb.tri) + hp.lambda * tb.cent;
  tb.domain = tb.metric + tb.decor;
  out.domain_train = dtrain;

  const std::size_t u = split.meta_test;
  {
    auto dl = losses::domain_loss(own_logits[u], emb[u][u], batches[u].labels,
                                  p.prototypes[u], u, emb[u], hp.lambda,
                                  hp.margin, &out.flagged_rows, use_decor);
    out.domain_test = dl.domain;
    auto& sb = out.test_bundle;
    sb.cls = dl.cls.item();
    sb.tri = dl.tri.item();
    sb.cent = dl.cent.item();
    sb.decor = dl.decor.item();
    sb.metric = (sb.cls + sb.tri) + hp.lambda * sb.cent;
    sb.domain = sb.metric + sb.decor;
  }

  // Relation losses see the expert features, prototypes, and the voting
  // input as constants: only the voting parameters receive this gradient.
  auto relation_for = [&](const Tensor& q, std::size_t k,
                          const std::vector<std::size_t>& peers,
                          std::vector<double>* mean_scores) {
    std::vector<Tensor> cols, feats;
    for (std::size_t j : peers) {
      cols.push_back(losses::relevance_scores(q, p.prototypes[j].detach()));
      feats.push_back(emb[k][j].detach());
    }
    const Tensor scores = stack_columns(cols);
    if (mean_scores) {
      const std::size_t n = batches[k].labels.size();
      mean_scores->assign(peers.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < peers.size(); ++j)
          (*mean_scores)[j] += scores.values()[i * peers.size() + j];
      for (auto& v : *mean_scores) v /= static_cast<double>(n);
    }
    const Tensor v = losses::aggregate(feats, scores, hp.sigma_fn,
                                       hp.integrate_fn);
    const Tensor rv = losses::softmax_triplet_relation(v, batches[k].labels);
    const Tensor rm = losses::softmax_triplet_relation(emb[k][k].detach(),
                                                       batches[k].labels);
    return losses::relation_alignment_loss(rv, rm, &out.clamp_count);
  };

  Tensor rtrain;
  bool have = false;
  for (std::size_t k : split.meta_train) {
    std::vector<std::size_t> peers;
    for (std::size_t j : split.meta_train)
      if (j != k) peers.push_back(j);
    if (peers.empty()) continue;  // two domains: no peer experts to weigh
    const Tensor q =
        model::voting_forward(p.voting, f[k].detach(), model::Mode::train, sink);
    const Tensor l = relation_for(q, k, peers, nullptr);
    rtrain = have ? add(rtrain, l) : l;
    have = true;
  }
  out.relation_train = have ? rtrain : Tensor::scalar(0.0);
  out.train_bundle.relation = out.relation_train.item();

  std::vector<Tensor> th = theta_tensors(p);
  std::vector<Tensor> thp = th;
  if (have) {
    out.inner_grads = backward(out.relation_train, th, /*create_graph=*/true);
    for (std::size_t i = 0; i < th.size(); ++i)
      thp[i] = sub(th[i], scale(out.inner_grads[i], hp.alpha));
    out.inner_step_taken = true;
  }

  {
    const Tensor h = relu(add(matmul(f[u].detach(), thp[0]), thp[1]));
    const Tensor qu =
        model::norm_apply(thp[2], thp[3], p.voting.norm.running_mean,
                          p.voting.norm.running_var, h, model::Mode::train,
                          sink);
    out.relation_test = relation_for(qu, u, split.meta_train,
                                     &out.test_relevance);
    out.test_bundle.relation = out.relation_test.item();
  }
  return out;
}

IterationGradients compute_iteration_gradients(
    const ModelParams& p, const std::vector<EpisodeBatch>& batches,
    const EpisodicSplit& split, const HyperParams& hp, bool use_decor,
    model::StatsSink* sink, std::size_t iteration) {
  IterationGradients g;
  g.iteration = iteration;
  g.losses = build_iteration(p, batches, split, hp, use_decor, sink);
  const auto& il = g.losses;

  auto push = [&g](std::string name, Group group, std::vector<double> grad) {
    g.names.push_back(std::move(name));
    g.groups.push_back(group);
    g.grads.push_back(std::move(grad));
  };

  {
    const std::vector<Tensor> psi = {p.backbone1.w, p.backbone1.b,
                                     p.backbone2.w, p.backbone2.b};
    const Tensor total = add(il.domain_train, il.domain_test);
    auto gr = backward(total, psi);
    const char* names[4] = {"backbone.layer1.w", "backbone.layer1.b",
                            "backbone.layer2.w", "backbone.layer2.b"};
    for (std::size_t i = 0; i < 4; ++i)
      push(names[i], Group::backbone, gr[i].values());
  }

  auto expert_group = [&](std::size_t k, const Tensor& loss) {
    const auto& e = p.experts[k];
    const std::vector<Tensor> ts = {e.embed.w,     e.embed.b, e.norm.gamma,
                                    e.norm.beta,   e.cls.w,   e.cls.b,
                                    p.prototypes[k]};
    auto gr = backward(loss, ts);
    const std::string pre = "expert" + std::to_string(k + 1) + ".";
    const char* suf[6] = {"embed.w", "embed.b", "norm.gamma",
                          "norm.beta", "cls.w",  "cls.b"};
    for (std::size_t i = 0; i < 6; ++i)
      push(pre + suf[i], Group::expert, gr[i].values());
    push("proto" + std::to_string(k + 1), Group::expert, gr[6].values());
  };
  for (std::size_t k : split.meta_train) expert_group(k, il.domain_train);
  expert_group(split.meta_test, il.domain_test);

  {
    const std::vector<Tensor> th = theta_tensors(p);
    auto gu = backward(il.relation_test, th);
    for (std::size_t i = 0; i < th.size(); ++i) {
      std::vector<double> combined(th[i].numel(), 0.0);
      const double* su = gu[i].values().data();
      const double* ss = il.inner_step_taken
                             ? il.inner_grads[i].values().data()
                             : nullptr;
      for (std::size_t c = 0; c < combined.size(); ++c) {
        const double gs = ss ? ss[c] : 0.0;
        combined[c] = (1.0 - hp.eta) * gs + hp.eta * su[c];
      }
      push(kThetaNames[i], Group::voting, std::move(combined));
    }
  }
  return g;
}

void Optimizer::step(ModelParams& p, const IterationGradients& g,
                     double beta_lr, double gamma_lr,
                     std::size_t current_iteration) {
  if (g.iteration != current_iteration)
    throw std::logic_error("stale gradients: computed at iteration " +
                           std::to_string(g.iteration) +
                           ", applied at iteration " +
                           std::to_string(current_iteration));
  auto slots = model::parameter_slots(p);
  auto find = [&slots](const std::string& name) -> Tensor* {
    for (auto& s : slots)
      if (s.name == name) return s.t;
    return nullptr;
  };
  for (std::size_t i = 0; i < g.names.size(); ++i) {
    Tensor* slot = find(g.names[i]);
    if (!slot) throw std::logic_error("unknown parameter " + g.names[i]);
    const auto& grad = g.grads[i];
    if (grad.size() != slot->numel())
      throw std::logic_error("gradient size mismatch for " + g.names[i]);
    const double lr = g.groups[i] == Group::voting ? gamma_lr : beta_lr;
    std::vector<double> v = slot->values();
    if (kind_ == OptimizerKind::adam) {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      State& st = state_[g.names[i]];
      if (st.m.empty()) {
        st.m.assign(v.size(), 0.0);
        st.v.assign(v.size(), 0.0);
      }
      st.t += 1;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
      for (std::size_t c = 0; c < v.size(); ++c) {
        st.m[c] = b1 * st.m[c] + (1.0 - b1) * grad[c];
        st.v[c] = b2 * st.v[c] + (1.0 - b2) * grad[c] * grad[c];
        v[c] -= lr * (st.m[c] / bc1) / (std::sqrt(st.v[c] / bc2) + eps);
      }
    } else {
      for (std::size_t c = 0; c < v.size(); ++c) v[c] -= lr * grad[c];
    }
    *slot = Tensor::leaf(slot->shape(), std::move(v));
  }
}

namespace {

nlohmann::json bundle_json(const losses::LossBundle& b) {
  return {{"cls", b.cls},       {"tri", b.tri},     {"cent", b.cent},
          {"metric", b.metric}, {"decor", b.decor}, {"domain", b.domain},
          {"relation", b.relation}};
}

}  // namespace

void TrainLog::write_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  auto write_iter = [&out](const IterRecord& r) {
    nlohmann::json j;
    j["type"] = "iter";
    j["epoch"] = r.epoch;
    j["iter"] = r.iter;
    j["meta_test_domain"] = r.meta_test_domain + 1;
    std::vector<std::size_t> mt;
    for (std::size_t k : r.meta_train) mt.push_back(k + 1);
    j["meta_train"] = mt;
    j["lr"] = r.lr;
    j["train"] = bundle_json(r.train);
    j["test"] = bundle_json(r.test);
    j["relevance"] = r.test_relevance;
    j["clamped"] = r.clamp_count;
    out << j.dump() << "\n";
  };
  std::size_t next_iter = 0;
  for (const auto& e : epochs) {
    while (next_iter < iters.size() && iters[next_iter].epoch <= e.epoch)
      write_iter(iters[next_iter++]);
    nlohmann::json j;
    j["type"] = "epoch";
    j["epoch"] = e.epoch;
    j["val_map"] = e.val_map;
    j["per_domain_map"] = e.per_domain_map;
    j["best"] = e.best;
    out << j.dump() << "\n";
  }
  while (next_iter < iters.size()) write_iter(iters[next_iter++]);
  if (!out) throw DataError("write failed for " + path);
}

TrainResult train(const synth::MultiDomainDataset& sources,
                  const TrainConfig& cfg, const std::string& run_dir) {
  cfg.validate(sources);
  const std::size_t K = sources.domains.size();
  std::vector<std::size_t> identities;
  for (const auto& dom : sources.domains)
    identities.push_back(dom.num_identities);

  ModelParams params = model::init(identities, cfg.hp, cfg.seed);
  // Distinct deterministic streams: seed for init, +1 for the episode loop,
  // +2 for the fixed validation splits.
  Rng loop_rng(cfg.seed + 1);
  Rng split_rng(cfg.seed + 2);
  std::vector<synth::QueryGallerySplit> vsplits;
  for (const auto& dom : sources.domains)
    vsplits.push_back(
        synth::split_query_gallery(dom, cfg.val_query_fraction, split_rng));

  namespace fs = std::filesystem;
  if (!run_dir.empty()) {
    fs::create_directories(fs::path(run_dir) / "checkpoints");
    fs::create_directories(fs::path(run_dir) / "logs");
  }

  Optimizer opt(cfg.optimizer);
  TrainResult res;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double sched = lr_factor(cfg, epoch);
    const double beta_lr = cfg.hp.beta * sched;
    const double gamma_lr = cfg.hp.gamma * sched;
    for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
      const EpisodicSplit split = episodic_split(K, loop_rng);
      std::vector<EpisodeBatch> batches;
      batches.reserve(K);
      for (std::size_t k = 0; k < K; ++k)
        batches.push_back(synth::sample_pk_batch(sources.domains[k],
                                                 cfg.batch_p, cfg.batch_q,
                                                 loop_rng));
      model::StatsSink sink;
      IterationGradients g;
      try {
        g = compute_iteration_gradients(params, batches, split, cfg.hp,
                                        cfg.use_decorrelation, &sink,
                                        iteration);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " iter " +
                           std::to_string(it) + ": " + e.what());
      }
      opt.step(params, g, beta_lr, gamma_lr, iteration);
      sink.apply();

      IterRecord rec;
      rec.epoch = epoch;
      rec.iter = it;
      rec.meta_test_domain = split.meta_test;
      rec.lr = beta_lr;
      rec.train = g.losses.train_bundle;
      rec.test = g.losses.test_bundle;
      rec.test_relevance = g.losses.test_relevance;
      rec.meta_train = split.meta_train;
      rec.clamp_count = g.losses.clamp_count;
      res.log.iters.push_back(std::move(rec));
      ++iteration;
    }

    EpochRecord er;
    er.epoch = epoch;
    for (std::size_t k = 0; k < K; ++k) {
      const auto r = inference::evaluate_ramoe(params, sources.domains[k],
                                               vsplits[k], cfg.hp.sigma_fn,
                                               cfg.hp.integrate_fn);
      er.per_domain_map.push_back(r.mAP);
      er.val_map += r.mAP;
    }
    er.val_map /= static_cast<double>(K);
    if (epoch == 0 || er.val_map > res.best_val_map) {
      res.best_val_map = er.val_map;
      res.best_epoch = epoch;
      er.best = true;
    }
    res.log.epochs.push_back(er);

    if (!run_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch + 1);
      const fs::path ckpts = fs::path(run_dir) / "checkpoints";
      model::save_checkpoint(params, (ckpts / name).string());
      if (er.best)
        model::save_checkpoint(params, (ckpts / "best.ckpt").string());
    }
  }
  res.params = params;
  if (!run_dir.empty())
    res.log.write_jsonl((fs::path(run_dir) / "logs" / "trainlog.jsonl").string());
  return res;
}

MetaGradCheck check_meta_gradient(const ModelParams& p,
                                  const std::vector<EpisodeBatch>& batches,
                                  const EpisodicSplit& split,
                                  const HyperParams& hp,
                                  std::size_t probes_per_tensor, double step,
                                  std::uint64_t seed) {
  auto combined_objective = [&](const ModelParams& q) {
    auto il = build_iteration(q, batches, split, hp, true, nullptr);
    return (1.0 - hp.eta) * il.relation_train.item() +
           hp.eta * il.relation_test.item();
  };

  auto il = build_iteration(p, batches, split, hp, true, nullptr);
  const std::vector<Tensor> th = theta_tensors(p);
  auto gu = backward(il.relation_test, th);
  std::vector<std::vector<double>> analytic(th.size());
  for (std::size_t i = 0; i < th.size(); ++i) {
    analytic[i].assign(th[i].numel(), 0.0);
    const double* su = gu[i].values().data();
    const double* ss =
        il.inner_step_taken ? il.inner_grads[i].values().data() : nullptr;
    for (std::size_t c = 0; c < analytic[i].size(); ++c)
      analytic[i][c] = (1.0 - hp.eta) * (ss ? ss[c] : 0.0) + hp.eta * su[c];
  }

  MetaGradCheck res;
  Rng rng(seed);
  for (std::size_t i = 0; i < th.size(); ++i) {
    for (std::size_t probe = 0; probe < probes_per_tensor; ++probe) {
      const std::size_t c = rng.integer(th[i].numel());
      auto eval_at = [&](double delta) {
        ModelParams q = model::clone(p);
        auto slots = model::parameter_slots(q);
        for (auto& s : slots) {
          if (s.name == kThetaNames[i]) {
            std::vector<double> v = s.t->values();
            v[c] += delta;
            *s.t = Tensor::leaf(s.t->shape(), std::move(v));
            break;
          }
        }
        return combined_objective(q);
      };
      const double numeric = (eval_at(step) - eval_at(-step)) / (2.0 * step);
      const double a = analytic[i][c];
      const double abs_err = std::fabs(a - numeric);
      const double rel =
          abs_err / (std::fabs(a) + std::fabs(numeric) + 1e-8);
      ++res.probes;
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      if (rel >= res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = kThetaNames[i];
        res.worst_coord = c;
        res.analytic_at_worst = a;
        res.numeric_at_worst = numeric;
      }
    }
  }
  return res;
}

}  // namespace ramoe::meta
