#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramoe/model.hpp"
#include "ramoe/synthdata.hpp"
#include "ramoe/tensor.hpp"

namespace ramoe::inference {

enum class RelevanceMode { all_samples, gallery_only };

// Test-time domain relevance of a target set: one score per (sample, source
// domain), the per-domain means, and the aggregation weights sigma(s^k).
struct RelevanceReport {
  std::vector<double> per_sample;  // n x K row-major
  std::vector<double> per_domain;  // K (columnwise mean of per_sample)
  std::vector<double> weights;     // K
  RelevanceMode mode = RelevanceMode::all_samples;
  std::size_t n = 0;
  std::size_t num_domains = 0;
  std::uint64_t proto_checksum = 0;  // ties the report to its ModelParams
};

std::uint64_t prototype_checksum(const model::ModelParams& p);

// `samples` is n x d_in raw inputs (the rows the report should cover; pass
// gallery rows only for gallery_only mode). Voting runs in eval mode.
RelevanceReport compute_relevance(const model::ModelParams& p,
                                  const std::vector<double>& samples,
                                  std::size_t n, RelevanceMode mode,
                                  model::SigmaFn sigma);

// Per-sample expert features weighted by the report's DOMAIN-level weights,
// combined per integrate_fn, and L2-normalized. Returns n x (K*d_emb) for
// concat, n x d_emb for sum.
Tensor extract_aggregated(const model::ModelParams& p,
                          const std::vector<double>& samples, std::size_t n,
                          const RelevanceReport& report,
                          model::IntegrateFn integrate_fn);

// Single expert k's embedding rows, L2-normalized (the single-expert
// ablation rows).
Tensor extract_single_expert(const model::ModelParams& p,
                             const std::vector<double>& samples, std::size_t n,
                             std::size_t k);

struct RetrievalResult {
  double mAP = 0.0;
  std::vector<std::size_t> rank_list;  // the k of each cmc entry
  std::vector<double> cmc;             // Rank-k accuracy per rank_list entry
  std::vector<double> per_query_ap;
};

// Ranks gallery rows by descending inner product (ties by gallery index) and
// scores precision-at-positive-ranks AP plus CMC. Features are used as given;
// callers normalize. camera_free must be true (the data has no cameras).
RetrievalResult evaluate(const Tensor& features_query,
                         const Tensor& features_gallery,
                         const std::vector<std::size_t>& labels_query,
                         const std::vector<std::size_t>& labels_gallery,
                         const std::vector<std::size_t>& rank_list = {1, 5, 10},
                         bool camera_free = true);

// End-to-end: relevance + aggregation + retrieval for one target domain split.
RetrievalResult evaluate_ramoe(const model::ModelParams& p,
                               const synth::Domain& target,
                               const synth::QueryGallerySplit& split,
                               model::SigmaFn sigma,
                               model::IntegrateFn integrate_fn,
                               RelevanceMode mode = RelevanceMode::all_samples,
                               const std::vector<std::size_t>& rank_list = {1, 5,
                                                                            10});

struct AblationRow {
  std::string name;
  RetrievalResult result;
};

// Table rows: each single expert, uniform-weight ensemble, optional
// decorrelation-free variant, and the full pipeline.
std::vector<AblationRow> ablation_suite(const model::ModelParams& full,
                                        const model::ModelParams* without_decor,
                                        const synth::Domain& target,
                                        const synth::QueryGallerySplit& split,
                                        model::SigmaFn sigma,
                                        model::IntegrateFn integrate_fn);

void write_relevance_report(const RelevanceReport& r, const std::string& path);
void write_retrieval_result(const RetrievalResult& r, const std::string& path);
void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path);
// Heatmap: one row per target name, one column per source domain.
void write_heatmap_csv(const std::vector<std::string>& row_names,
                       std::size_t num_sources,
                       const std::vector<std::vector<double>>& cells,
                       const std::string& path);

}  // namespace ramoe::inference
