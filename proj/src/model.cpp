#include "ramoe/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ramoe/errors.hpp"
#include "ramoe/rng.hpp"

namespace ramoe::model {

namespace {

constexpr double kNormEps = 1e-5;

Tensor uniform_leaf(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.uniform() * 2.0 - 1.0) * bound;
  return Tensor::leaf(std::move(shape), std::move(v));
}

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {uniform_leaf({in, out}, in, rng), uniform_leaf({out}, in, rng)};
}

NormParams init_norm(std::size_t d) {
  NormParams np;
  np.gamma = Tensor::leaf({d}, std::vector<double>(d, 1.0));
  np.beta = Tensor::leaf({d}, std::vector<double>(d, 0.0));
  np.running_mean.assign(d, 0.0);
  np.running_var.assign(d, 1.0);
  return np;
}

Tensor clone_leaf(const Tensor& t) {
  return Tensor::leaf(t.shape(), t.values(), t.requires_grad());
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void HyperParams::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (alpha <= 0.0 || beta <= 0.0 || gamma <= 0.0)
    throw ConfigError("learning rates must be > 0");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
  if (margin < 0.0) throw ConfigError("margin must be >= 0");
  if (d_in == 0 || hidden == 0 || d_feat == 0 || d_emb == 0)
    throw ConfigError("widths must be positive");
}

void StatsSink::apply(double momentum) {
  for (auto& u : updates) {
    for (std::size_t i = 0; i < u.mean->size(); ++i) {
      (*u.mean)[i] = (1.0 - momentum) * (*u.mean)[i] + momentum * u.batch_mean[i];
      (*u.var)[i] = (1.0 - momentum) * (*u.var)[i] + momentum * u.batch_var[i];
    }
  }
  updates.clear();
}

ModelParams init(const std::vector<std::size_t>& identities_per_domain,
                 const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  if (identities_per_domain.empty())
    throw ConfigError("need at least one source domain");
  Rng rng(seed);
  ModelParams p;
  p.backbone1 = init_linear(hp.d_in, hp.hidden, rng);
  p.backbone2 = init_linear(hp.hidden, hp.d_feat, rng);
  for (std::size_t lk : identities_per_domain) {
    if (lk == 0) throw ConfigError("domain with zero identities");
    ExpertParams e;
    e.embed = init_linear(hp.d_feat, hp.d_emb, rng);
    e.norm = init_norm(hp.d_emb);
    e.cls = init_linear(hp.d_emb, lk, rng);
    p.experts.push_back(std::move(e));
    p.prototypes.push_back(
        Tensor::leaf({lk, hp.d_emb}, std::vector<double>(lk * hp.d_emb, 0.0)));
  }
  p.voting.fc = init_linear(hp.d_feat, hp.d_emb, rng);
  p.voting.norm = init_norm(hp.d_emb);
  return p;
}

ModelParams clone(const ModelParams& p) {
  ModelParams c;
  c.backbone1 = {clone_leaf(p.backbone1.w), clone_leaf(p.backbone1.b)};
  c.backbone2 = {clone_leaf(p.backbone2.w), clone_leaf(p.backbone2.b)};
  for (const auto& e : p.experts) {
    ExpertParams ce;
    ce.embed = {clone_leaf(e.embed.w), clone_leaf(e.embed.b)};
    ce.norm.gamma = clone_leaf(e.norm.gamma);
    ce.norm.beta = clone_leaf(e.norm.beta);
    ce.norm.running_mean = e.norm.running_mean;
    ce.norm.running_var = e.norm.running_var;
    ce.cls = {clone_leaf(e.cls.w), clone_leaf(e.cls.b)};
    c.experts.push_back(std::move(ce));
  }
  for (const auto& t : p.prototypes) c.prototypes.push_back(clone_leaf(t));
  c.voting.fc = {clone_leaf(p.voting.fc.w), clone_leaf(p.voting.fc.b)};
  c.voting.norm.gamma = clone_leaf(p.voting.norm.gamma);
  c.voting.norm.beta = clone_leaf(p.voting.norm.beta);
  c.voting.norm.running_mean = p.voting.norm.running_mean;
  c.voting.norm.running_var = p.voting.norm.running_var;
  return c;
}

Tensor linear(const LinearParams& lp, const Tensor& x) {
  return add(matmul(x, lp.w), lp.b);
}

Tensor norm_apply(const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean,
                  std::vector<double>& running_var, const Tensor& x, Mode mode,
                  StatsSink* sink) {
  const std::size_t d = gamma.numel();
  if (x.rank() != 2 || x.size(1) != d)
    throw std::invalid_argument("norm_apply: input " + shape_str(x.shape()) +
                                " does not match width " + std::to_string(d));
  if (mode == Mode::train) {
    const std::size_t n = x.size(0);
    Tensor mu = mean_axis(x, 0, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean_axis(square(centered), 0, true);  // biased, for scaling
    Tensor out =
        add(mul(div(centered, sqrt(add_const(var, kNormEps))), gamma), beta);
    if (sink) {
      StatsUpdate u;
      u.mean = &running_mean;
      u.var = &running_var;
      u.batch_mean = mu.values();
      u.batch_var = var.values();
      if (n > 1) {
        const double corr = static_cast<double>(n) / static_cast<double>(n - 1);
        for (auto& v : u.batch_var) v *= corr;
      }
      sink->updates.push_back(std::move(u));
    }
    return out;
  }
  std::vector<double> denom(d);
  for (std::size_t i = 0; i < d; ++i)
    denom[i] = std::sqrt(running_var[i] + kNormEps);
  Tensor mu = Tensor::constant({d}, running_mean);
  Tensor sd = Tensor::constant({d}, std::move(denom));
  return add(mul(div(sub(x, mu), sd), gamma), beta);
}

Tensor norm_forward(const NormParams& np, const Tensor& x, Mode mode,
                    StatsSink* sink) {
  return norm_apply(np.gamma, np.beta, np.running_mean, np.running_var, x, mode,
                    sink);
}

Tensor backbone_forward(const ModelParams& p, const Tensor& x) {
  return linear(p.backbone2, relu(linear(p.backbone1, x)));
}

ExpertOut expert_forward(const ExpertParams& e, const Tensor& f, Mode mode,
                         StatsSink* sink) {
  Tensor m = norm_forward(e.norm, linear(e.embed, f), mode, sink);
  return {m, linear(e.cls, m)};
}

Tensor voting_forward(const VotingParams& v, const Tensor& f, Mode mode,
                      StatsSink* sink) {
  return norm_forward(v.norm, relu(linear(v.fc, f)), mode, sink);
}

std::vector<NamedTensor> trainable_parameters(const ModelParams& p) {
  std::vector<NamedTensor> out;
  out.push_back({"backbone.layer1.w", p.backbone1.w});
  out.push_back({"backbone.layer1.b", p.backbone1.b});
  out.push_back({"backbone.layer2.w", p.backbone2.w});
  out.push_back({"backbone.layer2.b", p.backbone2.b});
  for (std::size_t k = 0; k < p.experts.size(); ++k) {
    const std::string pre = "expert" + std::to_string(k + 1) + ".";
    const auto& e = p.experts[k];
    out.push_back({pre + "embed.w", e.embed.w});
    out.push_back({pre + "embed.b", e.embed.b});
    out.push_back({pre + "norm.gamma", e.norm.gamma});
    out.push_back({pre + "norm.beta", e.norm.beta});
    out.push_back({pre + "cls.w", e.cls.w});
    out.push_back({pre + "cls.b", e.cls.b});
  }
  for (std::size_t k = 0; k < p.prototypes.size(); ++k)
    out.push_back({"proto" + std::to_string(k + 1), p.prototypes[k]});
  out.push_back({"voting.fc.w", p.voting.fc.w});
  out.push_back({"voting.fc.b", p.voting.fc.b});
  out.push_back({"voting.norm.gamma", p.voting.norm.gamma});
  out.push_back({"voting.norm.beta", p.voting.norm.beta});
  return out;
}

std::vector<NamedSlot> parameter_slots(ModelParams& p) {
  std::vector<NamedSlot> out;
  out.push_back({"backbone.layer1.w", &p.backbone1.w});
  out.push_back({"backbone.layer1.b", &p.backbone1.b});
  out.push_back({"backbone.layer2.w", &p.backbone2.w});
  out.push_back({"backbone.layer2.b", &p.backbone2.b});
  for (std::size_t k = 0; k < p.experts.size(); ++k) {
    const std::string pre = "expert" + std::to_string(k + 1) + ".";
    auto& e = p.experts[k];
    out.push_back({pre + "embed.w", &e.embed.w});
    out.push_back({pre + "embed.b", &e.embed.b});
    out.push_back({pre + "norm.gamma", &e.norm.gamma});
    out.push_back({pre + "norm.beta", &e.norm.beta});
    out.push_back({pre + "cls.w", &e.cls.w});
    out.push_back({pre + "cls.b", &e.cls.b});
  }
  for (std::size_t k = 0; k < p.prototypes.size(); ++k)
    out.push_back({"proto" + std::to_string(k + 1), &p.prototypes[k]});
  out.push_back({"voting.fc.w", &p.voting.fc.w});
  out.push_back({"voting.fc.b", &p.voting.fc.b});
  out.push_back({"voting.norm.gamma", &p.voting.norm.gamma});
  out.push_back({"voting.norm.beta", &p.voting.norm.beta});
  return out;
}

namespace {

struct RawTensor {
  Shape shape;
  std::vector<double> values;
};

void write_entry(std::ofstream& out, const std::string& name, const Shape& shape,
                 const std::vector<double>& values) {
  out << "tensor " << name << " " << shape.size();
  for (std::size_t d : shape) out << " " << d;
  out << "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << " ";
    out << fmt_double(values[i]);
  }
  out << "\n";
}

std::vector<std::pair<std::string, const std::vector<double>*>> buffer_entries(
    const ModelParams& p) {
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  for (std::size_t k = 0; k < p.experts.size(); ++k) {
    const std::string pre = "expert" + std::to_string(k + 1) + ".norm.";
    out.push_back({pre + "running_mean", &p.experts[k].norm.running_mean});
    out.push_back({pre + "running_var", &p.experts[k].norm.running_var});
  }
  out.push_back({"voting.norm.running_mean", &p.voting.norm.running_mean});
  out.push_back({"voting.norm.running_var", &p.voting.norm.running_var});
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "checkpoint v1\n";
  out << "experts " << p.num_experts() << "\n";
  for (const auto& nt : trainable_parameters(p))
    write_entry(out, nt.name, nt.t.shape(), nt.t.values());
  for (const auto& [name, buf] : buffer_entries(p))
    write_entry(out, name, {buf->size()}, *buf);
  if (!out) throw DataError("write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);

  auto fail = [&](const std::string& msg) -> void {
    throw DataError(path + ": " + msg);
  };

  std::string line;
  if (!std::getline(in, line) || line != "checkpoint v1")
    fail("expected 'checkpoint v1' header");
  std::size_t num_experts = 0;
  {
    if (!std::getline(in, line)) fail("missing experts line");
    std::istringstream iss(line);
    std::string word;
    if (!(iss >> word >> num_experts) || word != "experts" || num_experts == 0)
      fail("expected 'experts <k>'");
  }

  std::map<std::string, RawTensor> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::string word, name;
    std::size_t rank = 0;
    if (!(iss >> word >> name >> rank) || word != "tensor")
      fail("malformed tensor header: '" + line + "'");
    RawTensor rt;
    for (std::size_t i = 0; i < rank; ++i) {
      std::size_t d = 0;
      if (!(iss >> d) || d == 0) fail(name + ": bad shape");
      rt.shape.push_back(d);
    }
    std::string extra;
    if (iss >> extra) fail(name + ": trailing tokens in tensor header");
    if (!std::getline(in, line)) fail(name + ": missing value line");
    std::istringstream vals(line);
    const std::size_t expect = shape_numel(rt.shape);
    rt.values.reserve(expect);
    std::string tok;
    while (vals >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        fail(name + ": non-numeric value '" + tok + "'");
      rt.values.push_back(v);
    }
    if (rt.values.size() != expect)
      fail(name + ": expected " + std::to_string(expect) + " values, got " +
           std::to_string(rt.values.size()));
    if (!entries.emplace(name, std::move(rt)).second)
      fail("duplicate tensor '" + name + "'");
  }

  auto take = [&](const std::string& name, std::size_t rank) -> RawTensor {
    auto it = entries.find(name);
    if (it == entries.end()) fail("missing tensor '" + name + "'");
    RawTensor rt = std::move(it->second);
    entries.erase(it);
    if (rt.shape.size() != rank)
      fail(name + ": expected rank " + std::to_string(rank) + ", got " +
           std::to_string(rt.shape.size()));
    return rt;
  };
  auto take_leaf = [&](const std::string& name, std::size_t rank) {
    RawTensor rt = take(name, rank);
    return Tensor::leaf(std::move(rt.shape), std::move(rt.values));
  };

  ModelParams p;
  p.backbone1.w = take_leaf("backbone.layer1.w", 2);
  p.backbone1.b = take_leaf("backbone.layer1.b", 1);
  p.backbone2.w = take_leaf("backbone.layer2.w", 2);
  p.backbone2.b = take_leaf("backbone.layer2.b", 1);

  const std::size_t d_in = p.backbone1.w.size(0);
  const std::size_t hidden = p.backbone1.w.size(1);
  const std::size_t d_feat = p.backbone2.w.size(1);
  if (p.backbone1.b.numel() != hidden || p.backbone2.w.size(0) != hidden ||
      p.backbone2.b.numel() != d_feat)
    fail("backbone shapes disagree");
  (void)d_in;

  std::size_t d_emb = 0;
  for (std::size_t k = 1; k <= num_experts; ++k) {
    const std::string pre = "expert" + std::to_string(k) + ".";
    ExpertParams e;
    e.embed.w = take_leaf(pre + "embed.w", 2);
    e.embed.b = take_leaf(pre + "embed.b", 1);
    e.norm.gamma = take_leaf(pre + "norm.gamma", 1);
    e.norm.beta = take_leaf(pre + "norm.beta", 1);
    e.cls.w = take_leaf(pre + "cls.w", 2);
    e.cls.b = take_leaf(pre + "cls.b", 1);
    e.norm.running_mean = take(pre + "norm.running_mean", 1).values;
    e.norm.running_var = take(pre + "norm.running_var", 1).values;

    if (e.embed.w.size(0) != d_feat) fail(pre + "embed.w: input width mismatch");
    if (d_emb == 0) d_emb = e.embed.w.size(1);
    if (e.embed.w.size(1) != d_emb || e.embed.b.numel() != d_emb ||
        e.norm.gamma.numel() != d_emb || e.norm.beta.numel() != d_emb ||
        e.norm.running_mean.size() != d_emb ||
        e.norm.running_var.size() != d_emb || e.cls.w.size(0) != d_emb ||
        e.cls.b.numel() != e.cls.w.size(1))
      fail(pre + "*: embedding width mismatch");
    p.experts.push_back(std::move(e));
  }
  for (std::size_t k = 1; k <= num_experts; ++k) {
    Tensor proto = take_leaf("proto" + std::to_string(k), 2);
    if (proto.size(1) != d_emb ||
        proto.size(0) != p.experts[k - 1].cls.w.size(1))
      fail("proto" + std::to_string(k) + ": shape disagrees with classifier");
    p.prototypes.push_back(proto);
  }

  p.voting.fc.w = take_leaf("voting.fc.w", 2);
  p.voting.fc.b = take_leaf("voting.fc.b", 1);
  p.voting.norm.gamma = take_leaf("voting.norm.gamma", 1);
  p.voting.norm.beta = take_leaf("voting.norm.beta", 1);
  p.voting.norm.running_mean = take("voting.norm.running_mean", 1).values;
  p.voting.norm.running_var = take("voting.norm.running_var", 1).values;
  if (p.voting.fc.w.size(0) != d_feat || p.voting.fc.w.size(1) != d_emb ||
      p.voting.fc.b.numel() != d_emb || p.voting.norm.gamma.numel() != d_emb ||
      p.voting.norm.beta.numel() != d_emb ||
      p.voting.norm.running_mean.size() != d_emb ||
      p.voting.norm.running_var.size() != d_emb)
    fail("voting shapes disagree");

  if (!entries.empty()) fail("unknown tensor '" + entries.begin()->first + "'");
  return p;
}

}  // namespace ramoe::model
