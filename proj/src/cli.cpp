#include "ramoe/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ramoe/errors.hpp"
#include "ramoe/gradcheck.hpp"
#include "ramoe/losses.hpp"
#include "ramoe/model.hpp"
#include "ramoe/rng.hpp"
#include "ramoe/tensor.hpp"

namespace fs = std::filesystem;

namespace ramoe::cli {
namespace {

// Shortest decimal form that parses back to the same double; to_chars and
// from_chars never consult the process locale.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& s, const std::string& ctx) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(ctx + ": invalid number '" + s + "'");
  if (!std::isfinite(v))
    throw ConfigError(ctx + ": number must be finite, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& ctx) {
  std::uint64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(ctx + ": invalid unsigned integer '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s, const std::string& ctx) {
  return static_cast<std::size_t>(parse_u64(s, ctx));
}

bool parse_bool(const std::string& s, const std::string& ctx) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(ctx + ": expected true or false, got '" + s + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& s,
                                         const std::string& ctx) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_size(trim(item), ctx));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

meta::OptimizerKind parse_optimizer(const std::string& s,
                                    const std::string& ctx) {
  if (s == "adam") return meta::OptimizerKind::adam;
  if (s == "sgd") return meta::OptimizerKind::sgd;
  throw ConfigError(ctx + ": optimizer must be adam or sgd, got '" + s + "'");
}

model::SigmaFn parse_sigma(const std::string& s, const std::string& ctx) {
  if (s == "softmax") return model::SigmaFn::softmax;
  if (s == "sigmoid") return model::SigmaFn::sigmoid;
  throw ConfigError(ctx + ": sigma must be softmax or sigmoid, got '" + s + "'");
}

model::IntegrateFn parse_integrate(const std::string& s,
                                   const std::string& ctx) {
  if (s == "concat") return model::IntegrateFn::concat;
  if (s == "sum") return model::IntegrateFn::sum;
  throw ConfigError(ctx + ": integrate must be concat or sum, got '" + s + "'");
}

inference::RelevanceMode parse_mode(const std::string& s,
                                    const std::string& ctx) {
  if (s == "all") return inference::RelevanceMode::all_samples;
  if (s == "gallery_only") return inference::RelevanceMode::gallery_only;
  throw ConfigError(ctx + ": relevance_mode must be all or gallery_only, got '" +
                    s + "'");
}

void apply_key(RunConfig& cfg, const std::string& section,
               const std::string& key, const std::string& value,
               const std::string& ctx) {
  auto& d = cfg.data;
  auto& t = cfg.train;
  auto& e = cfg.eval;
  if (section == "data") {
    if (key == "seed") d.seed = parse_u64(value, ctx);
    else if (key == "d_in") d.d_in = parse_size(value, ctx);
    else if (key == "sources") d.sources = parse_size(value, ctx);
    else if (key == "identities") d.identities = parse_size(value, ctx);
    else if (key == "samples_per_identity")
      d.samples_per_identity = parse_size(value, ctx);
    else if (key == "noise_sigma") d.noise_sigma = parse_double(value, ctx);
    else if (key == "target_toward") d.target_toward = parse_size(value, ctx);
    else if (key == "target_t") d.target_t = parse_double(value, ctx);
    else if (key == "target_identities")
      d.target_identities = parse_size(value, ctx);
    else if (key == "target_samples") d.target_samples = parse_size(value, ctx);
    else if (key == "target_noise_sigma")
      d.target_noise_sigma = parse_double(value, ctx);
    else
      throw ConfigError(ctx + ": unknown key '" + key + "' in [data]");
  } else if (section == "train") {
    if (key == "seed") t.seed = parse_u64(value, ctx);
    else if (key == "max_epochs") t.max_epochs = parse_size(value, ctx);
    else if (key == "iters_per_epoch") t.iters_per_epoch = parse_size(value, ctx);
    else if (key == "warmup_epochs") t.warmup_epochs = parse_size(value, ctx);
    else if (key == "lr_decay_epochs")
      t.lr_decay_epochs = parse_size_list(value, ctx);
    else if (key == "optimizer") t.optimizer = parse_optimizer(value, ctx);
    else if (key == "batch_p") t.batch_p = parse_size(value, ctx);
    else if (key == "batch_q") t.batch_q = parse_size(value, ctx);
    else if (key == "use_decorrelation")
      t.use_decorrelation = parse_bool(value, ctx);
    else if (key == "val_query_fraction")
      t.val_query_fraction = parse_double(value, ctx);
    else if (key == "lambda") t.hp.lambda = parse_double(value, ctx);
    else if (key == "alpha") t.hp.alpha = parse_double(value, ctx);
    else if (key == "beta") t.hp.beta = parse_double(value, ctx);
    else if (key == "gamma") t.hp.gamma = parse_double(value, ctx);
    else if (key == "eta") t.hp.eta = parse_double(value, ctx);
    else if (key == "margin") t.hp.margin = parse_double(value, ctx);
    else if (key == "hidden") t.hp.hidden = parse_size(value, ctx);
    else if (key == "d_feat") t.hp.d_feat = parse_size(value, ctx);
    else if (key == "d_emb") t.hp.d_emb = parse_size(value, ctx);
    else if (key == "sigma") t.hp.sigma_fn = parse_sigma(value, ctx);
    else if (key == "integrate") t.hp.integrate_fn = parse_integrate(value, ctx);
    else
      throw ConfigError(ctx + ": unknown key '" + key + "' in [train]");
  } else if (section == "eval") {
    if (key == "query_fraction") e.query_fraction = parse_double(value, ctx);
    else if (key == "seed") e.seed = parse_u64(value, ctx);
    else if (key == "rank_list") e.rank_list = parse_size_list(value, ctx);
    else if (key == "relevance_mode") e.relevance_mode = parse_mode(value, ctx);
    else
      throw ConfigError(ctx + ": unknown key '" + key + "' in [eval]");
  } else if (section == "output") {
    if (key == "dir") {
      if (value.empty()) throw ConfigError(ctx + ": dir must be non-empty");
      cfg.output.dir = value;
    } else
      throw ConfigError(ctx + ": unknown key '" + key + "' in [output]");
  } else {
    throw ConfigError(ctx + ": unknown section [" + section + "]");
  }
}

}  // namespace

void DataConfig::validate() const {
  if (d_in < 2) throw ConfigError("data: d_in must be >= 2");
  if (sources < 1) throw ConfigError("data: sources must be >= 1");
  if (identities < 2) throw ConfigError("data: identities must be >= 2");
  if (samples_per_identity < 2)
    throw ConfigError("data: samples_per_identity must be >= 2");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
    throw ConfigError("data: noise_sigma must be finite and >= 0");
  if (target_toward < 1 || target_toward > sources)
    throw ConfigError("data: target_toward must be in [1, sources]");
  if (!std::isfinite(target_t) || target_t < 0.0 || target_t > 1.0)
    throw ConfigError("data: target_t must be in [0, 1]");
  if (target_identities < 2)
    throw ConfigError("data: target_identities must be >= 2");
  if (target_samples < 2) throw ConfigError("data: target_samples must be >= 2");
  if (!std::isfinite(target_noise_sigma) || target_noise_sigma < 0.0)
    throw ConfigError("data: target_noise_sigma must be finite and >= 0");
}

void EvalConfig::validate() const {
  if (!std::isfinite(query_fraction) || query_fraction <= 0.0 ||
      query_fraction >= 1.0)
    throw ConfigError("eval: query_fraction must be in (0, 1)");
  if (rank_list.empty()) throw ConfigError("eval: rank_list must be non-empty");
  for (std::size_t r : rank_list)
    if (r < 1) throw ConfigError("eval: rank_list entries must be >= 1");
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(std::istream& in, const std::string& origin) {
  RunConfig cfg = default_config();
  std::string line, section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string ctx = origin + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(ctx + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "train" && section != "eval" &&
          section != "output")
        throw ConfigError(ctx + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(ctx + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(ctx + ": empty key");
    if (section.empty())
      throw ConfigError(ctx + ": key '" + key + "' appears before any [section]");
    if (!seen.insert(section + "." + key).second)
      throw ConfigError(ctx + ": duplicate key '" + key + "' in [" + section +
                        "]");
    apply_key(cfg, section, key, value, ctx);
  }
  cfg.train.hp.d_in = cfg.data.d_in;  // the model reads its input width here
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  return parse_config(in, path);
}

void write_config(const RunConfig& cfg, std::ostream& out) {
  const auto& d = cfg.data;
  const auto& t = cfg.train;
  const auto& e = cfg.eval;
  out << "[data]\n";
  out << "seed = " << d.seed << "\n";
  out << "d_in = " << d.d_in << "\n";
  out << "sources = " << d.sources << "\n";
  out << "identities = " << d.identities << "\n";
  out << "samples_per_identity = " << d.samples_per_identity << "\n";
  out << "noise_sigma = " << fmt_double(d.noise_sigma) << "\n";
  out << "target_toward = " << d.target_toward << "\n";
  out << "target_t = " << fmt_double(d.target_t) << "\n";
  out << "target_identities = " << d.target_identities << "\n";
  out << "target_samples = " << d.target_samples << "\n";
  out << "target_noise_sigma = " << fmt_double(d.target_noise_sigma) << "\n";
  out << "\n[train]\n";
  out << "seed = " << t.seed << "\n";
  out << "max_epochs = " << t.max_epochs << "\n";
  out << "iters_per_epoch = " << t.iters_per_epoch << "\n";
  out << "warmup_epochs = " << t.warmup_epochs << "\n";
  out << "lr_decay_epochs = " << join_sizes(t.lr_decay_epochs) << "\n";
  out << "optimizer = "
      << (t.optimizer == meta::OptimizerKind::adam ? "adam" : "sgd") << "\n";
  out << "batch_p = " << t.batch_p << "\n";
  out << "batch_q = " << t.batch_q << "\n";
  out << "use_decorrelation = " << (t.use_decorrelation ? "true" : "false")
      << "\n";
  out << "val_query_fraction = " << fmt_double(t.val_query_fraction) << "\n";
  out << "lambda = " << fmt_double(t.hp.lambda) << "\n";
  out << "alpha = " << fmt_double(t.hp.alpha) << "\n";
  out << "beta = " << fmt_double(t.hp.beta) << "\n";
  out << "gamma = " << fmt_double(t.hp.gamma) << "\n";
  out << "eta = " << fmt_double(t.hp.eta) << "\n";
  out << "margin = " << fmt_double(t.hp.margin) << "\n";
  out << "hidden = " << t.hp.hidden << "\n";
  out << "d_feat = " << t.hp.d_feat << "\n";
  out << "d_emb = " << t.hp.d_emb << "\n";
  out << "sigma = "
      << (t.hp.sigma_fn == model::SigmaFn::softmax ? "softmax" : "sigmoid")
      << "\n";
  out << "integrate = "
      << (t.hp.integrate_fn == model::IntegrateFn::concat ? "concat" : "sum")
      << "\n";
  out << "\n[eval]\n";
  out << "query_fraction = " << fmt_double(e.query_fraction) << "\n";
  out << "seed = " << e.seed << "\n";
  out << "rank_list = " << join_sizes(e.rank_list) << "\n";
  out << "relevance_mode = "
      << (e.relevance_mode == inference::RelevanceMode::all_samples
              ? "all"
              : "gallery_only")
      << "\n";
  out << "\n[output]\n";
  out << "dir = " << cfg.output.dir << "\n";
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  write_config(cfg, out);
}

synth::GeneratedData build_dataset(const DataConfig& d) {
  d.validate();
  Rng style_rng(d.seed);
  // Source styles come in affinity pairs: every odd-indexed source is pulled
  // partway toward the preceding one. Real multi-domain corpora are not
  // equidistant — some domains resemble each other much more than others —
  // and the voting network only has something to learn when, for each held
  // out domain, one peer expert is genuinely closer than the rest.
  constexpr double kPairPull = 0.65;
  std::vector<synth::StyleParams> styles;
  styles.reserve(d.sources);
  for (std::size_t k = 0; k < d.sources; ++k) {
    synth::StyleParams s = synth::random_style(d.d_in, style_rng);
    if (k % 2 == 1)
      s = synth::interpolate_style(s, styles[k - 1], kPairPull);
    styles.push_back(std::move(s));
  }
  const synth::StyleParams base = synth::random_style(d.d_in, style_rng);
  const synth::StyleParams target_style =
      synth::interpolate_style(base, styles[d.target_toward - 1], d.target_t);

  std::vector<synth::DomainSpec> src(d.sources);
  for (std::size_t k = 0; k < d.sources; ++k) {
    src[k].domain_id = static_cast<int>(k + 1);
    src[k].num_identities = d.identities;
    src[k].samples_per_identity = d.samples_per_identity;
    src[k].style = styles[k];
    src[k].noise_sigma = d.noise_sigma;
  }
  std::vector<synth::DomainSpec> tgt(1);
  tgt[0].domain_id = static_cast<int>(d.sources + 1);
  tgt[0].num_identities = d.target_identities;
  tgt[0].samples_per_identity = d.target_samples;
  tgt[0].style = target_style;
  tgt[0].noise_sigma = d.target_noise_sigma;

  return synth::generate(src, tgt, d.d_in, d.seed + 1);
}

namespace {

Tensor random_leaf(const std::vector<std::size_t>& shape, Rng& rng,
                   double scale = 1.0) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::leaf(shape, std::move(v));
}

std::vector<std::size_t> group_labels(std::size_t P, std::size_t Q) {
  std::vector<std::size_t> labels(P * Q);
  for (std::size_t i = 0; i < P * Q; ++i) labels[i] = i / Q;
  return labels;
}

// Central differences sit 1e-5 from the base point, so reject draws where a
// hinge or a batch-hard mining choice could flip inside that neighborhood.
bool mining_is_stable(const Tensor& emb, const std::vector<std::size_t>& labels,
                      double margin, bool check_hinge) {
  const Tensor dist = pairwise_dist(emb);
  const auto& dv = dist.values();
  const std::size_t n = labels.size();
  const auto hp = losses::mine_batch_hard(dv, n, labels);
  const double gap = 1e-3;
  for (std::size_t i = 0; i < n; ++i) {
    const double dpos = dv[i * n + hp.pos[i]];
    const double dneg = dv[i * n + hp.neg[i]];
    if (check_hinge && std::abs(dpos - dneg + margin) < gap) return false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (j != hp.pos[i] && std::abs(dv[i * n + j] - dpos) < gap) return false;
      } else {
        if (j != hp.neg[i] && std::abs(dv[i * n + j] - dneg) < gap) return false;
      }
    }
  }
  return true;
}

Tensor stable_features(const std::vector<std::size_t>& shape,
                       const std::vector<std::size_t>& labels, double margin,
                       bool check_hinge, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Tensor t = random_leaf(shape, rng);
    if (mining_is_stable(t, labels, margin, check_hinge)) return t;
  }
  throw NumericError("could not draw a mining-stable batch");
}

}  // namespace

std::vector<LossCheckRow> loss_gradient_suite(std::uint64_t seed,
                                              std::size_t instances_per_loss,
                                              double threshold) {
  std::vector<LossCheckRow> rows;
  auto run = [&](const std::string& name, std::uint64_t stream,
                 const std::function<GradCheckResult(Rng&)>& one) {
    LossCheckRow row;
    row.name = name;
    row.instances = instances_per_loss;
    row.threshold = threshold;
    Rng rng(seed + 7919 * stream);
    for (std::size_t i = 0; i < instances_per_loss; ++i) {
      const GradCheckResult r = one(rng);
      row.max_rel_err = std::max(row.max_rel_err, r.max_rel_err);
      row.max_abs_err = std::max(row.max_abs_err, r.max_abs_err);
    }
    row.pass = row.max_rel_err < threshold;
    rows.push_back(row);
  };

  run("classification", 1, [](Rng& rng) {
    const std::size_t n = 4 + rng.integer(5);
    const std::size_t L = 2 + rng.integer(4);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.integer(L);
    labels[0] = 0;
    labels[1] = 1;
    const Tensor logits = random_leaf({n, L}, rng);
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return losses::classification_loss(p[0], labels);
        },
        {logits});
  });

  run("triplet_batch_hard", 2, [](Rng& rng) {
    const double margin = 0.3;
    const std::size_t P = 2 + rng.integer(2);
    const std::size_t Q = 2 + rng.integer(2);
    const std::size_t d = 3 + rng.integer(3);
    const auto labels = group_labels(P, Q);
    const Tensor emb = stable_features({P * Q, d}, labels, margin, true, rng);
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return losses::triplet_batch_hard(p[0], labels, margin);
        },
        {emb});
  });

  run("center", 3, [](Rng& rng) {
    const std::size_t n = 5 + rng.integer(4);
    const std::size_t L = 2 + rng.integer(3);
    const std::size_t d = 3 + rng.integer(3);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.integer(L);
    labels[0] = 0;
    labels[1] = 1;
    const Tensor emb = random_leaf({n, d}, rng);
    const Tensor protos = random_leaf({L, d}, rng);
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return losses::center_loss(p[0], labels, p[1]);
        },
        {emb, protos});
  });

  run("decorrelation", 4, [](Rng& rng) {
    const std::size_t K = 2 + rng.integer(2);
    const std::size_t n = 4 + rng.integer(3);
    const std::size_t d = 3 + rng.integer(3);
    const std::size_t k = rng.integer(K);
    std::vector<Tensor> feats;
    for (std::size_t j = 0; j < K; ++j) feats.push_back(random_leaf({n, d}, rng));
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return losses::decorrelation_loss(k, p);
        },
        feats);
  });

  run("softmax_triplet_relation", 5, [](Rng& rng) {
    const std::size_t P = 2 + rng.integer(2);
    const std::size_t Q = 2 + rng.integer(2);
    const std::size_t d = 3 + rng.integer(3);
    const auto labels = group_labels(P, Q);
    const Tensor feats = stable_features({P * Q, d}, labels, 0.0, false, rng);
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return mean(losses::softmax_triplet_relation(p[0], labels));
        },
        {feats});
  });

  run("relation_alignment", 6, [](Rng& rng) {
    const std::size_t n = 4 + rng.integer(5);
    std::vector<double> pv(n), tv(n);
    for (auto& x : pv) x = rng.uniform(0.05, 0.95);
    for (auto& x : tv) x = rng.uniform(0.05, 0.95);
    const Tensor pred = Tensor::leaf({n}, std::move(pv));
    const Tensor target = Tensor::constant({n}, std::move(tv));
    return finite_difference_check(
        [&](const std::vector<Tensor>& p) {
          return losses::relation_alignment_loss(p[0], target);
        },
        {pred});
  });

  return rows;
}

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool have_seed = false;
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? default_config()
                                           : parse_config_file(opts.config_path);
  if (opts.have_seed) {
    cfg.data.seed = opts.seed;
    cfg.train.seed = opts.seed;
    cfg.eval.seed = opts.seed;
  }
  if (!opts.out_dir.empty()) cfg.output.dir = opts.out_dir;
  cfg.train.hp.d_in = cfg.data.d_in;
  return cfg;
}

std::vector<double> gather_rows(const synth::Domain& dom,
                                const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size() * dom.d_in);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(dom.row(rows[i]), dom.d_in, out.data() + i * dom.d_in);
  return out;
}

void check_d_in(const model::ModelParams& p, const synth::MultiDomainDataset& ds,
                const std::string& data_path) {
  const std::size_t want = p.backbone1.w.size(0);
  if (ds.d_in != want)
    throw DataError("checkpoint expects d_in=" + std::to_string(want) +
                    " but dataset '" + data_path + "' has d_in=" +
                    std::to_string(ds.d_in));
}

std::string rank_label(std::size_t r) { return "rank" + std::to_string(r); }

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const synth::GeneratedData data = build_dataset(cfg.data);
  const std::string dir = cfg.output.dir;
  fs::create_directories(dir);
  synth::save_dataset(data.sources, dir + "/sources.ds");
  synth::save_dataset(data.targets, dir + "/targets.ds");
  write_config_file(cfg, dir + "/config.snapshot");
  out << "generate: " << data.sources.domains.size() << " source domain(s) + "
      << data.targets.domains.size() << " target(s), d_in=" << cfg.data.d_in
      << " -> " << dir << "\n";
  for (const auto& dom : data.sources.domains)
    out << "  source " << dom.domain_id << ": " << dom.num_identities
        << " identities, " << dom.size() << " samples\n";
  for (const auto& dom : data.targets.domains) {
    out << "  target " << dom.domain_id << ": " << dom.num_identities
        << " identities, " << dom.size() << " samples; centroid distance to"
        << " sources =";
    for (const auto& src : data.sources.domains)
      out << " " << fmt_fixed(synth::mean_centroid_distance(dom, src), 4);
    out << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const synth::GeneratedData data = build_dataset(cfg.data);
  const std::string dir = cfg.output.dir;
  fs::create_directories(dir);
  write_config_file(cfg, dir + "/config.snapshot");
  const meta::TrainResult res = meta::train(data.sources, cfg.train, dir);
  out << "train: " << cfg.train.max_epochs << " epochs x "
      << cfg.train.iters_per_epoch << " iterations on "
      << data.sources.domains.size() << " source domains -> " << dir << "\n";
  out << "train: best epoch index " << res.best_epoch << " (validation mAP "
      << fmt_fixed(res.best_val_map, 4) << ")\n";
  out << "train: checkpoints under " << dir << "/checkpoints, log "
      << dir << "/logs/trainlog.jsonl\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path,
             const std::string& data_path, std::ostream& out) {
  cfg.eval.validate();
  const model::ModelParams params = model::load_checkpoint(ckpt_path);
  const synth::MultiDomainDataset ds = synth::load_dataset(data_path);
  if (ds.domains.empty())
    throw DataError("dataset '" + data_path + "' has no domains");
  check_d_in(params, ds, data_path);
  const std::string results = cfg.output.dir + "/results";
  fs::create_directories(results);
  for (const auto& dom : ds.domains) {
    Rng rng(cfg.eval.seed);
    const auto split =
        synth::split_query_gallery(dom, cfg.eval.query_fraction, rng);
    const auto r = inference::evaluate_ramoe(
        params, dom, split, cfg.train.hp.sigma_fn, cfg.train.hp.integrate_fn,
        cfg.eval.relevance_mode, cfg.eval.rank_list);
    const std::string path =
        results + "/eval_domain_" + std::to_string(dom.domain_id) + ".csv";
    inference::write_retrieval_result(r, path);
    out << "eval: domain " << dom.domain_id << " mAP="
        << fmt_fixed(r.mAP, 4);
    for (std::size_t i = 0; i < r.rank_list.size(); ++i)
      out << " " << rank_label(r.rank_list[i]) << "=" << fmt_fixed(r.cmc[i], 4);
    out << " -> " << path << "\n";
  }
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& run_dir,
               const std::string& wo_decor_path, std::ostream& out) {
  CommonOpts eff = opts;
  if (eff.config_path.empty()) eff.config_path = run_dir + "/config.snapshot";
  const RunConfig cfg = resolve_config(eff);
  const synth::GeneratedData data = build_dataset(cfg.data);
  if (data.targets.domains.empty())
    throw DataError("benchmark has no target domain");
  const model::ModelParams full =
      model::load_checkpoint(run_dir + "/checkpoints/best.ckpt");
  std::optional<model::ModelParams> wo;
  if (!wo_decor_path.empty()) wo = model::load_checkpoint(wo_decor_path);

  const auto& target = data.targets.domains.front();
  Rng rng(cfg.eval.seed);
  const auto split =
      synth::split_query_gallery(target, cfg.eval.query_fraction, rng);
  const auto rows = inference::ablation_suite(
      full, wo ? &*wo : nullptr, target, split, cfg.train.hp.sigma_fn,
      cfg.train.hp.integrate_fn);

  const std::string outdir = opts.out_dir.empty() ? run_dir : opts.out_dir;
  fs::create_directories(outdir + "/results");
  const std::string path = outdir + "/results/ablation.csv";
  inference::write_ablation_csv(rows, path);
  for (const auto& row : rows) {
    out << "ablate: " << row.name << " mAP=" << fmt_fixed(row.result.mAP, 4);
    for (std::size_t i = 0; i < row.result.rank_list.size(); ++i)
      out << " " << rank_label(row.result.rank_list[i]) << "="
          << fmt_fixed(row.result.cmc[i], 4);
    out << "\n";
  }
  out << "ablate: table -> " << path << "\n";
  return 0;
}

int cmd_relevance(const RunConfig& cfg, const std::string& ckpt_path,
                  const std::string& data_path, inference::RelevanceMode mode,
                  std::ostream& out) {
  cfg.eval.validate();
  const model::ModelParams params = model::load_checkpoint(ckpt_path);
  const synth::MultiDomainDataset ds = synth::load_dataset(data_path);
  if (ds.domains.empty())
    throw DataError("dataset '" + data_path + "' has no domains");
  check_d_in(params, ds, data_path);
  const std::string results = cfg.output.dir + "/results";
  fs::create_directories(results);

  std::vector<std::string> names;
  std::vector<std::vector<double>> cells;
  for (const auto& dom : ds.domains) {
    std::vector<double> rows_buf;
    std::size_t n = 0;
    if (mode == inference::RelevanceMode::gallery_only) {
      Rng rng(cfg.eval.seed);
      const auto split =
          synth::split_query_gallery(dom, cfg.eval.query_fraction, rng);
      rows_buf = gather_rows(dom, split.gallery_rows);
      n = split.gallery_rows.size();
    } else {
      rows_buf = dom.samples;
      n = dom.size();
    }
    const auto rep = inference::compute_relevance(params, rows_buf, n, mode,
                                                  cfg.train.hp.sigma_fn);
    const std::string path =
        results + "/relevance_domain_" + std::to_string(dom.domain_id) + ".csv";
    inference::write_relevance_report(rep, path);
    names.push_back("domain_" + std::to_string(dom.domain_id));
    cells.push_back(rep.per_domain);
    const std::size_t argmax =
        std::max_element(rep.per_domain.begin(), rep.per_domain.end()) -
        rep.per_domain.begin();
    out << "relevance: domain " << dom.domain_id << " (" << n
        << " rows) weights=[";
    for (std::size_t k = 0; k < rep.weights.size(); ++k)
      out << (k ? " " : "") << fmt_fixed(rep.weights[k], 4);
    out << "] most relevant source = " << (argmax + 1) << " -> " << path
        << "\n";
  }
  const std::string heat = results + "/relevance_heatmap.csv";
  inference::write_heatmap_csv(names, params.num_experts(), cells, heat);
  out << "relevance: heatmap -> " << heat << "\n";
  return 0;
}

// Small but fully live second-order scenario: four sources so every
// meta-train domain has two peers, prototypes nudged off their zero start so
// the relevance path carries gradient.
struct MetaScenario {
  model::ModelParams params;
  std::vector<synth::EpisodeBatch> batches;
  meta::EpisodicSplit split;
  model::HyperParams hp;
};

MetaScenario make_meta_scenario(std::uint64_t seed) {
  MetaScenario sc;
  sc.hp.d_in = 8;
  sc.hp.hidden = 10;
  sc.hp.d_feat = 8;
  sc.hp.d_emb = 6;
  sc.hp.alpha = 0.05;

  DataConfig d;
  d.seed = seed;
  d.d_in = 8;
  d.sources = 4;
  d.identities = 10;
  d.samples_per_identity = 6;
  d.noise_sigma = 0.1;
  d.target_identities = 4;
  d.target_samples = 2;
  const synth::GeneratedData data = build_dataset(d);

  sc.params = model::init({10, 10, 10, 10}, sc.hp, seed);
  Rng proto_rng(seed + 5);
  for (auto& proto : sc.params.prototypes) {
    std::vector<double> v(proto.numel());
    for (auto& x : v) x = 0.1 * proto_rng.normal();
    proto = Tensor::leaf(proto.shape(), std::move(v));
  }

  Rng batch_rng(seed + 6);
  for (const auto& dom : data.sources.domains)
    sc.batches.push_back(synth::sample_pk_batch(dom, 4, 2, batch_rng));
  sc.split.meta_train = {0, 1, 2};
  sc.split.meta_test = 3;
  return sc;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const double loss_threshold = 1e-4;
  const double meta_threshold = 1e-3;
  bool ok = true;
  const auto rows = loss_gradient_suite(seed, 20, loss_threshold);
  for (const auto& row : rows) {
    out << "gradcheck: " << row.name << " instances=" << row.instances
        << " max_rel_err=" << fmt_double(row.max_rel_err)
        << " max_abs_err=" << fmt_double(row.max_abs_err)
        << (row.pass ? " PASS" : " FAIL") << "\n";
    ok = ok && row.pass;
  }

  const MetaScenario sc = make_meta_scenario(seed);
  const meta::MetaGradCheck mg = meta::check_meta_gradient(
      sc.params, sc.batches, sc.split, sc.hp, 2, 1e-4, seed + 9);
  const bool meta_ok = mg.max_rel_err < meta_threshold;
  out << "gradcheck: meta_combined_voting probes=" << mg.probes
      << " max_rel_err=" << fmt_double(mg.max_rel_err)
      << " max_abs_err=" << fmt_double(mg.max_abs_err)
      << (meta_ok ? " PASS" : " FAIL") << "\n";
  ok = ok && meta_ok;

  if (!ok) {
    err << "error: numeric: gradient check failed\n";
    return 3;
  }
  out << "gradcheck: all checks passed\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{
      "relevance-weighted mixture of domain experts: synthetic benchmark "
      "generation, meta-training, and retrieval evaluation"};
  app.name("ramoe");
  app.require_subcommand(1);

  CommonOpts opts;
  std::vector<CLI::Option*> seed_opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path,
                    "sectioned key=value config file");
    seed_opts.push_back(sub->add_option(
        "--seed", opts.seed, "override the data/train/eval seeds"));
    sub->add_option("--out", opts.out_dir, "override the output directory");
  };

  CLI::App* gen = app.add_subcommand(
      "generate", "write the multi-domain benchmark to disk");
  add_common(gen);

  CLI::App* train = app.add_subcommand(
      "train", "meta-train on the benchmark's source domains");
  add_common(train);

  std::string arg_checkpoint, arg_data;
  CLI::App* eval = app.add_subcommand(
      "eval", "retrieval metrics for a checkpoint on a dataset file");
  eval->add_option("checkpoint", arg_checkpoint, "model checkpoint")
      ->required();
  eval->add_option("data", arg_data, "dataset file")->required();
  add_common(eval);

  std::string arg_run_dir, arg_wo_decor;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "per-expert / ensemble / full comparison for a training run");
  ablate->add_option("run_dir", arg_run_dir, "training run directory")
      ->required();
  ablate->add_option("--wo-decor", arg_wo_decor,
                     "checkpoint trained without decorrelation");
  add_common(ablate);

  std::string arg_mode;
  CLI::App* relevance = app.add_subcommand(
      "relevance", "per-domain relevance scores and aggregation weights");
  relevance->add_option("checkpoint", arg_checkpoint, "model checkpoint")
      ->required();
  relevance->add_option("data", arg_data, "dataset file")->required();
  relevance->add_option("--mode", arg_mode, "all or gallery_only")
      ->check(CLI::IsMember({"all", "gallery_only"}));
  add_common(relevance);

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every loss gradient");
  add_common(gradcheck);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("ramoe");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 1;
  }
  for (const CLI::Option* o : seed_opts) opts.have_seed |= o->count() > 0;

  try {
    if (gen->parsed()) return cmd_generate(resolve_config(opts), out);
    if (train->parsed()) return cmd_train(resolve_config(opts), out);
    if (eval->parsed())
      return cmd_eval(resolve_config(opts), arg_checkpoint, arg_data, out);
    if (ablate->parsed()) return cmd_ablate(opts, arg_run_dir, arg_wo_decor, out);
    if (relevance->parsed()) {
      const RunConfig cfg = resolve_config(opts);
      const inference::RelevanceMode mode =
          arg_mode.empty() ? cfg.eval.relevance_mode
                           : parse_mode(arg_mode, "--mode");
      return cmd_relevance(cfg, arg_checkpoint, arg_data, mode, out);
    }
    if (gradcheck->parsed()) {
      const RunConfig cfg = resolve_config(opts);
      return cmd_gradcheck(cfg.train.seed, out, err);
    }
    err << "error: usage: no command given\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ramoe::cli
