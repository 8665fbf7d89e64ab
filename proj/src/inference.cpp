#include "ramoe/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ramoe/errors.hpp"
#include "ramoe/kernels.hpp"
#include "ramoe/losses.hpp"

namespace ramoe::inference {

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t input_dim(const model::ModelParams& p) {
  return p.backbone1.w.shape()[0];
}

Tensor as_input(const model::ModelParams& p, const std::vector<double>& samples,
                std::size_t n) {
  const std::size_t d = input_dim(p);
  if (n == 0) throw DataError("inference: empty sample set");
  if (samples.size() != n * d)
    throw DataError("inference: expected " + std::to_string(n * d) +
                    " values for " + std::to_string(n) + " rows of width " +
                    std::to_string(d) + ", got " +
                    std::to_string(samples.size()));
  return Tensor::constant({n, d}, samples);
}

std::vector<double> gather_rows(const synth::Domain& dom,
                                const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size() * dom.d_in);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= dom.size())
      throw DataError("inference: row index " + std::to_string(rows[i]) +
                      " out of range for domain " +
                      std::to_string(dom.domain_id));
    std::copy_n(dom.row(rows[i]), dom.d_in, out.data() + i * dom.d_in);
  }
  return out;
}

std::vector<std::size_t> gather_labels(const synth::Domain& dom,
                                       const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = dom.labels[rows[i]];
  return out;
}

std::vector<double> sigma_weights(const std::vector<double>& s,
                                  model::SigmaFn sigma) {
  std::vector<double> w(s.size());
  if (sigma == model::SigmaFn::softmax) {
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      w[k] = std::exp(s[k] - mx);
      z += w[k];
    }
    for (auto& v : w) v /= z;
  } else {
    for (std::size_t k = 0; k < s.size(); ++k)
      w[k] = s[k] >= 0.0 ? 1.0 / (1.0 + std::exp(-s[k]))
                         : std::exp(s[k]) / (1.0 + std::exp(s[k]));
  }
  return w;
}

}  // namespace

std::uint64_t prototype_checksum(const model::ModelParams& p) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a over prototype shapes
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  mix(p.prototypes.size());
  for (const auto& c : p.prototypes) {
    mix(c.shape()[0]);
    mix(c.shape()[1]);
  }
  return h;
}

RelevanceReport compute_relevance(const model::ModelParams& p,
                                  const std::vector<double>& samples,
                                  std::size_t n, RelevanceMode mode,
                                  model::SigmaFn sigma) {
  const std::size_t K = p.num_experts();
  if (K == 0) throw DataError("inference: model has no experts");
  NoGradGuard ng;
  const Tensor x = as_input(p, samples, n);
  const Tensor f = model::backbone_forward(p, x);
  const Tensor q = model::voting_forward(p.voting, f, model::Mode::eval, nullptr);

  RelevanceReport r;
  r.mode = mode;
  r.n = n;
  r.num_domains = K;
  r.proto_checksum = prototype_checksum(p);
  r.per_sample.assign(n * K, 0.0);
  r.per_domain.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor s = losses::relevance_scores(q, p.prototypes[k]);
    for (std::size_t i = 0; i < n; ++i) {
      r.per_sample[i * K + k] = s.values()[i];
      r.per_domain[k] += s.values()[i];
    }
    r.per_domain[k] /= static_cast<double>(n);
  }
  r.weights = sigma_weights(r.per_domain, sigma);
  return r;
}

Tensor extract_aggregated(const model::ModelParams& p,
                          const std::vector<double>& samples, std::size_t n,
                          const RelevanceReport& report,
                          model::IntegrateFn integrate_fn) {
  const std::size_t K = p.num_experts();
  if (report.proto_checksum != prototype_checksum(p))
    throw DataError("inference: relevance report does not match these model "
                    "parameters (prototype checksum mismatch)");
  if (report.weights.size() != K)
    throw DataError("inference: report has " +
                    std::to_string(report.weights.size()) + " weights for " +
                    std::to_string(K) + " experts");
  NoGradGuard ng;
  const Tensor x = as_input(p, samples, n);
  const Tensor f = model::backbone_forward(p, x);
  Tensor v;
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor m =
        model::expert_forward(p.experts[k], f, model::Mode::eval, nullptr).m;
    const Tensor wm = scale(m, report.weights[k]);
    if (k == 0)
      v = wm;
    else
      v = integrate_fn == model::IntegrateFn::concat ? concat_last({v, wm})
                                                     : add(v, wm);
  }
  return l2_normalize_last(v);
}

Tensor extract_single_expert(const model::ModelParams& p,
                             const std::vector<double>& samples, std::size_t n,
                             std::size_t k) {
  if (k >= p.num_experts())
    throw DataError("inference: expert index " + std::to_string(k) +
                    " out of range");
  NoGradGuard ng;
  const Tensor x = as_input(p, samples, n);
  const Tensor f = model::backbone_forward(p, x);
  const Tensor m =
      model::expert_forward(p.experts[k], f, model::Mode::eval, nullptr).m;
  return l2_normalize_last(m);
}

RetrievalResult evaluate(const Tensor& features_query,
                         const Tensor& features_gallery,
                         const std::vector<std::size_t>& labels_query,
                         const std::vector<std::size_t>& labels_gallery,
                         const std::vector<std::size_t>& rank_list,
                         bool camera_free) {
  if (!camera_free)
    throw ConfigError("evaluate: camera-aware protocol not available "
                      "(samples carry no camera id)");
  if (features_query.shape().size() != 2 || features_gallery.shape().size() != 2)
    throw DataError("evaluate: features must be rank-2");
  const std::size_t nq = features_query.shape()[0];
  const std::size_t ng = features_gallery.shape()[0];
  const std::size_t d = features_query.shape()[1];
  if (features_gallery.shape()[1] != d)
    throw DataError("evaluate: query dim " + std::to_string(d) +
                    " != gallery dim " +
                    std::to_string(features_gallery.shape()[1]));
  if (nq == 0 || ng == 0) throw DataError("evaluate: empty query or gallery");
  if (labels_query.size() != nq || labels_gallery.size() != ng)
    throw DataError("evaluate: label count does not match feature rows");
  for (std::size_t r : rank_list)
    if (r == 0) throw ConfigError("evaluate: rank list entries must be >= 1");

  for (std::size_t i = 0; i < nq; ++i) {
    if (std::find(labels_gallery.begin(), labels_gallery.end(),
                  labels_query[i]) == labels_gallery.end())
      throw DataError("evaluate: query " + std::to_string(i) + " (label " +
                      std::to_string(labels_query[i]) +
                      ") has no gallery positive");
  }

  // similarity = q @ g^T
  std::vector<double> gt(d * ng);
  kernels::transpose(features_gallery.values().data(), gt.data(), ng, d);
  std::vector<double> sim(nq * ng);
  kernels::matmul(features_query.values().data(), gt.data(), sim.data(), nq, d,
                  ng);

  RetrievalResult res;
  res.rank_list = rank_list;
  res.per_query_ap.assign(nq, 0.0);
  std::vector<std::size_t> first_pos(nq, 0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long qi = 0; qi < static_cast<long long>(nq); ++qi) {
    const double* row = sim.data() + qi * ng;
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;  // ties: lower gallery index ranks first
    });
    std::size_t hits = 0;
    double ap = 0.0;
    std::size_t first = 0;
    for (std::size_t r = 0; r < ng; ++r) {
      if (labels_gallery[order[r]] == labels_query[qi]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        if (first == 0) first = r + 1;
      }
    }
    res.per_query_ap[qi] = ap / static_cast<double>(hits);
    first_pos[qi] = first;
  }

  double sum_ap = 0.0;
  for (double ap : res.per_query_ap) sum_ap += ap;
  res.mAP = sum_ap / static_cast<double>(nq);
  res.cmc.assign(rank_list.size(), 0.0);
  for (std::size_t j = 0; j < rank_list.size(); ++j) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < nq; ++i)
      if (first_pos[i] <= rank_list[j]) ++count;
    res.cmc[j] = static_cast<double>(count) / static_cast<double>(nq);
  }
  return res;
}

RetrievalResult evaluate_ramoe(const model::ModelParams& p,
                               const synth::Domain& target,
                               const synth::QueryGallerySplit& split,
                               model::SigmaFn sigma,
                               model::IntegrateFn integrate_fn,
                               RelevanceMode mode,
                               const std::vector<std::size_t>& rank_list) {
  std::vector<double> rel_rows;
  std::size_t rel_n = 0;
  if (mode == RelevanceMode::gallery_only) {
    rel_rows = gather_rows(target, split.gallery_rows);
    rel_n = split.gallery_rows.size();
  } else {
    rel_rows = target.samples;
    rel_n = target.size();
  }
  const RelevanceReport report =
      compute_relevance(p, rel_rows, rel_n, mode, sigma);

  const auto q_rows = gather_rows(target, split.query_rows);
  const auto g_rows = gather_rows(target, split.gallery_rows);
  const Tensor fq = extract_aggregated(p, q_rows, split.query_rows.size(),
                                       report, integrate_fn);
  const Tensor fg = extract_aggregated(p, g_rows, split.gallery_rows.size(),
                                       report, integrate_fn);
  return evaluate(fq, fg, gather_labels(target, split.query_rows),
                  gather_labels(target, split.gallery_rows), rank_list);
}

std::vector<AblationRow> ablation_suite(const model::ModelParams& full,
                                        const model::ModelParams* without_decor,
                                        const synth::Domain& target,
                                        const synth::QueryGallerySplit& split,
                                        model::SigmaFn sigma,
                                        model::IntegrateFn integrate_fn) {
  std::vector<AblationRow> rows;
  const auto q_rows = gather_rows(target, split.query_rows);
  const auto g_rows = gather_rows(target, split.gallery_rows);
  const auto q_labels = gather_labels(target, split.query_rows);
  const auto g_labels = gather_labels(target, split.gallery_rows);
  const std::size_t nq = split.query_rows.size();
  const std::size_t ngal = split.gallery_rows.size();

  const std::size_t K = full.num_experts();
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor fq = extract_single_expert(full, q_rows, nq, k);
    const Tensor fg = extract_single_expert(full, g_rows, ngal, k);
    rows.push_back({"expert_" + std::to_string(k + 1),
                    evaluate(fq, fg, q_labels, g_labels)});
  }

  {
    RelevanceReport uniform;
    uniform.num_domains = K;
    uniform.n = 0;
    uniform.proto_checksum = prototype_checksum(full);
    uniform.per_domain.assign(K, 0.0);
    uniform.weights.assign(K, 1.0 / static_cast<double>(K));
    const Tensor fq = extract_aggregated(full, q_rows, nq, uniform, integrate_fn);
    const Tensor fg =
        extract_aggregated(full, g_rows, ngal, uniform, integrate_fn);
    rows.push_back(
        {"ensemble_uniform", evaluate(fq, fg, q_labels, g_labels)});
  }

  if (without_decor != nullptr)
    rows.push_back({"wo_decor", evaluate_ramoe(*without_decor, target, split,
                                               sigma, integrate_fn)});
  rows.push_back(
      {"ramoe_full", evaluate_ramoe(full, target, split, sigma, integrate_fn)});
  return rows;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  return out;
}

}  // namespace

void write_relevance_report(const RelevanceReport& r, const std::string& path) {
  auto out = open_out(path);
  out << "row";
  for (std::size_t k = 0; k < r.num_domains; ++k) out << ",source_" << (k + 1);
  out << "\n";
  for (std::size_t i = 0; i < r.n; ++i) {
    out << i;
    for (std::size_t k = 0; k < r.num_domains; ++k)
      out << "," << g17(r.per_sample[i * r.num_domains + k]);
    out << "\n";
  }
  out << "mean";
  for (double v : r.per_domain) out << "," << g17(v);
  out << "\nweight";
  for (double v : r.weights) out << "," << g17(v);
  out << "\n";
  out << "mode,"
      << (r.mode == RelevanceMode::gallery_only ? "gallery_only" : "all")
      << "\n";
}

void write_retrieval_result(const RetrievalResult& r, const std::string& path) {
  auto out = open_out(path);
  out << "metric,value\n";
  out << "mAP," << g17(r.mAP) << "\n";
  for (std::size_t j = 0; j < r.rank_list.size(); ++j)
    out << "rank" << r.rank_list[j] << "," << g17(r.cmc[j]) << "\n";
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path) {
  auto out = open_out(path);
  out << "variant,mAP";
  if (!rows.empty())
    for (std::size_t r : rows.front().result.rank_list) out << ",rank" << r;
  out << "\n";
  for (const auto& row : rows) {
    out << row.name << "," << g17(row.result.mAP);
    for (double c : row.result.cmc) out << "," << g17(c);
    out << "\n";
  }
}

void write_heatmap_csv(const std::vector<std::string>& row_names,
                       std::size_t num_sources,
                       const std::vector<std::vector<double>>& cells,
                       const std::string& path) {
  if (cells.size() != row_names.size())
    throw std::invalid_argument("heatmap: row name/cell count mismatch");
  auto out = open_out(path);
  out << "target";
  for (std::size_t k = 0; k < num_sources; ++k) out << ",source_" << (k + 1);
  out << "\n";
  for (std::size_t i = 0; i < row_names.size(); ++i) {
    if (cells[i].size() != num_sources)
      throw std::invalid_argument("heatmap: row width mismatch");
    out << row_names[i];
    for (double v : cells[i]) out << "," << g17(v);
    out << "\n";
  }
}

}  // namespace ramoe::inference
