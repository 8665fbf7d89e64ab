#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ramoe/errors.hpp"
#include "ramoe/inference.hpp"
#include "ramoe/model.hpp"
#include "ramoe/rng.hpp"
#include "ramoe/synthdata.hpp"
#include "ramoe/tensor.hpp"

using namespace ramoe;
using namespace ramoe::inference;

namespace {

model::HyperParams small_hp() {
  model::HyperParams hp;
  hp.d_in = 8;
  hp.hidden = 10;
  hp.d_feat = 8;
  hp.d_emb = 6;
  return hp;
}

void scatter_prototypes(model::ModelParams& p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& proto : p.prototypes) {
    std::vector<double> v(proto.numel());
    for (auto& x : v) x = 0.1 * rng.normal();
    proto = Tensor::leaf(proto.shape(), std::move(v));
  }
}

std::vector<double> random_rows(std::size_t n, std::size_t d,
                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Written from the metric definitions alone, sharing no code with the library:
// rank every gallery row per query (stable in the gallery index), average
// precision at the positive ranks, and count first-hit ranks for CMC.
struct OracleResult {
  double mAP = 0.0;
  std::vector<double> per_query_ap;
  std::vector<double> cmc;
};

OracleResult oracle_retrieval(const std::vector<double>& fq,
                              const std::vector<double>& fg, std::size_t nq,
                              std::size_t ng, std::size_t d,
                              const std::vector<std::size_t>& lq,
                              const std::vector<std::size_t>& lg,
                              const std::vector<std::size_t>& rank_list) {
  OracleResult res;
  res.per_query_ap.assign(nq, 0.0);
  std::vector<std::size_t> first_hit(nq, 0);
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> sim(ng, 0.0);
    for (std::size_t j = 0; j < ng; ++j)
      for (std::size_t c = 0; c < d; ++c)
        sim[j] += fq[i * d + c] * fg[j * d + c];
    // selection ranking: repeatedly take the best remaining (ties -> lowest
    // gallery index), so stability is explicit rather than delegated
    std::vector<bool> used(ng, false);
    std::size_t hits = 0;
    double ap = 0.0;
    for (std::size_t rank = 1; rank <= ng; ++rank) {
      std::size_t best = ng;
      for (std::size_t j = 0; j < ng; ++j) {
        if (used[j]) continue;
        if (best == ng || sim[j] > sim[best]) best = j;
      }
      used[best] = true;
      if (lg[best] == lq[i]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank);
        if (first_hit[i] == 0) first_hit[i] = rank;
      }
    }
    res.per_query_ap[i] = ap / static_cast<double>(hits);
  }
  double total = 0.0;
  for (double ap : res.per_query_ap) total += ap;
  res.mAP = total / static_cast<double>(nq);
  for (std::size_t r : rank_list) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < nq; ++i)
      if (first_hit[i] <= r) ++count;
    res.cmc.push_back(static_cast<double>(count) / static_cast<double>(nq));
  }
  return res;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("retrieval agrees with a brute-force oracle on random instances") {
  Rng rng(2024);
  const std::vector<std::size_t> rank_list = {1, 3, 10};
  for (int instance = 0; instance < 100; ++instance) {
    const std::size_t nq = 1 + rng.integer(20);
    const std::size_t ng = 2 + rng.integer(99);
    const std::size_t d = 2 + rng.integer(5);
    const std::size_t num_labels = 1 + rng.integer(5);

    std::vector<std::size_t> lg(ng);
    for (auto& l : lg) l = rng.integer(num_labels);
    std::vector<std::size_t> lq(nq);
    for (auto& l : lq) l = lg[rng.integer(ng)];  // guarantees a positive

    std::vector<double> fq(nq * d), fg(ng * d);
    for (auto& x : fq) x = rng.normal();
    for (auto& x : fg) x = rng.normal();

    const auto got = evaluate(Tensor::constant({nq, d}, fq),
                              Tensor::constant({ng, d}, fg), lq, lg, rank_list);
    const auto want = oracle_retrieval(fq, fg, nq, ng, d, lq, lg, rank_list);

    REQUIRE(got.per_query_ap.size() == nq);
    for (std::size_t i = 0; i < nq; ++i)
      CHECK(got.per_query_ap[i] == want.per_query_ap[i]);  // difference zero
    CHECK(got.mAP == want.mAP);
    REQUIRE(got.cmc.size() == rank_list.size());
    for (std::size_t j = 0; j < rank_list.size(); ++j)
      CHECK(got.cmc[j] == want.cmc[j]);
  }
}

TEST_CASE("retrieval closed forms") {
  // perfect first hit: AP 1, rank-1 accuracy 1
  Tensor q = Tensor::constant({1, 2}, {1.0, 0.0});
  Tensor g = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto r = evaluate(q, g, {0}, {0, 1}, {1, 2});
  CHECK(r.mAP == 1.0);
  CHECK(r.per_query_ap[0] == 1.0);
  CHECK(r.cmc[0] == 1.0);
  CHECK(r.cmc[1] == 1.0);

  // sole positive at rank 2: AP = 1/2, rank-1 misses, rank-2 hits
  Tensor g2 = Tensor::constant({2, 2}, {0.9, 0.0, 0.5, 0.0});
  auto r2 = evaluate(q, g2, {0}, {7, 0}, {1, 2});
  CHECK(r2.mAP == 0.5);
  CHECK(r2.cmc[0] == 0.0);
  CHECK(r2.cmc[1] == 1.0);

  // equal similarity resolves toward the lower gallery index
  Tensor g3 = Tensor::constant({3, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  auto r3 = evaluate(q, g3, {5}, {9, 5, 5}, {1, 2, 3});
  // ranks: index 0 (negative), index 1 (positive), index 2 (positive)
  CHECK(r3.per_query_ap[0] ==
        doctest::Approx((1.0 / 2.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(r3.cmc[0] == 0.0);
  CHECK(r3.cmc[1] == 1.0);

  // mAP is exactly the mean of the per-query APs, and CMC never decreases
  Rng rng(77);
  const std::size_t nq = 6, ng = 40, d = 4;
  std::vector<std::size_t> lg(ng), lq(nq);
  for (auto& l : lg) l = rng.integer(3);
  for (auto& l : lq) l = lg[rng.integer(ng)];
  std::vector<double> fq(nq * d), fg(ng * d);
  for (auto& x : fq) x = rng.normal();
  for (auto& x : fg) x = rng.normal();
  std::vector<std::size_t> all_ranks(ng);
  for (std::size_t i = 0; i < ng; ++i) all_ranks[i] = i + 1;
  auto r4 = evaluate(Tensor::constant({nq, d}, fq),
                     Tensor::constant({ng, d}, fg), lq, lg, all_ranks);
  double mean_ap = 0.0;
  for (double ap : r4.per_query_ap) mean_ap += ap;
  mean_ap /= static_cast<double>(nq);
  CHECK(r4.mAP == mean_ap);
  for (std::size_t j = 1; j < r4.cmc.size(); ++j)
    CHECK(r4.cmc[j] >= r4.cmc[j - 1]);
  CHECK(r4.cmc.back() == 1.0);  // every query finds its positive eventually
}

TEST_CASE("retrieval rejects malformed setups") {
  Tensor q = Tensor::constant({1, 2}, {1.0, 0.0});
  Tensor g = Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK_THROWS_AS(evaluate(q, g, {0}, {0, 1}, {1}, false), ConfigError);
  CHECK_THROWS_AS(evaluate(q, g, {0}, {0, 1}, {0, 1}), ConfigError);
  Tensor g3 = Tensor::constant({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  CHECK_THROWS_AS(evaluate(q, g3, {0}, {0, 1}), DataError);
  CHECK_THROWS_AS(evaluate(q, g, {0, 1}, {0, 1}), DataError);  // label count
  CHECK_THROWS_AS(evaluate(q, g, {3}, {0, 1}), DataError);     // no positive
  const std::string msg =
      message_of([&] { evaluate(q, g, {3}, {0, 1}); });
  CHECK(msg.find("no gallery positive") != std::string::npos);
}

TEST_CASE("relevance reports summarize per-sample scores") {
  auto hp = small_hp();
  auto p = model::init({4, 4, 4}, hp, 5);
  scatter_prototypes(p, 6);
  const std::size_t n = 7;
  const auto samples = random_rows(n, hp.d_in, 7);

  const auto rep =
      compute_relevance(p, samples, n, RelevanceMode::all_samples, hp.sigma_fn);
  CHECK(rep.n == n);
  CHECK(rep.num_domains == 3);
  CHECK(rep.mode == RelevanceMode::all_samples);
  CHECK(rep.proto_checksum == prototype_checksum(p));
  REQUIRE(rep.per_sample.size() == n * 3);
  REQUIRE(rep.per_domain.size() == 3);
  REQUIRE(rep.weights.size() == 3);

  for (double s : rep.per_sample) {
    CHECK(s >= -1.0 - 1e-12);  // mean of cosines
    CHECK(s <= 1.0 + 1e-12);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += rep.per_sample[i * 3 + k];
    mean /= static_cast<double>(n);
    CHECK(rep.per_domain[k] == mean);
  }
  double wsum = 0.0;
  for (double w : rep.weights) {
    CHECK(w > 0.0);
    wsum += w;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));  // softmax

  const auto sig = compute_relevance(p, samples, n, RelevanceMode::gallery_only,
                                     model::SigmaFn::sigmoid);
  CHECK(sig.mode == RelevanceMode::gallery_only);
  CHECK(sig.per_sample == rep.per_sample);  // mode only labels the rows
  for (double w : sig.weights) {
    CHECK(w > 0.0);
    CHECK(w < 1.0);
  }

  // evaluation mode is deterministic
  const auto rep2 =
      compute_relevance(p, samples, n, RelevanceMode::all_samples, hp.sigma_fn);
  CHECK(rep2.per_sample == rep.per_sample);
  CHECK(rep2.weights == rep.weights);
}

TEST_CASE("aggregated features are unit rows tied to their report") {
  auto hp = small_hp();
  auto p = model::init({4, 4, 4}, hp, 15);
  scatter_prototypes(p, 16);
  const std::size_t n = 6;
  const auto samples = random_rows(n, hp.d_in, 17);
  const auto rep =
      compute_relevance(p, samples, n, RelevanceMode::all_samples, hp.sigma_fn);

  const Tensor cat =
      extract_aggregated(p, samples, n, rep, model::IntegrateFn::concat);
  REQUIRE(cat.shape() == Shape{n, 3 * hp.d_emb});
  const Tensor summed =
      extract_aggregated(p, samples, n, rep, model::IntegrateFn::sum);
  REQUIRE(summed.shape() == Shape{n, hp.d_emb});
  for (const Tensor* t : {&cat, &summed}) {
    const std::size_t d = t->size(1);
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = t->values()[i * d + c];
        norm += x * x;
      }
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  // a report from different parameters is refused
  auto other = model::init({5, 4}, hp, 18);
  CHECK_THROWS_AS(extract_aggregated(other, samples, n, rep,
                                     model::IntegrateFn::concat),
                  DataError);
  const std::string msg = message_of([&] {
    extract_aggregated(other, samples, n, rep, model::IntegrateFn::concat);
  });
  CHECK(msg.find("checksum") != std::string::npos);

  // same checksum but a broken weight count is also refused
  auto bad = rep;
  bad.weights.pop_back();
  CHECK_THROWS_AS(
      extract_aggregated(p, samples, n, bad, model::IntegrateFn::concat),
      DataError);
}

TEST_CASE("one expert aggregates to exactly its own features") {
  auto hp = small_hp();
  auto p = model::init({4}, hp, 25);
  scatter_prototypes(p, 26);
  const std::size_t n = 5;
  const auto samples = random_rows(n, hp.d_in, 27);
  const auto rep =
      compute_relevance(p, samples, n, RelevanceMode::all_samples, hp.sigma_fn);
  REQUIRE(rep.weights.size() == 1);
  CHECK(rep.weights[0] == 1.0);  // softmax over one score

  const Tensor agg =
      extract_aggregated(p, samples, n, rep, model::IntegrateFn::concat);
  const Tensor solo = extract_single_expert(p, samples, n, 0);
  CHECK(agg.values() == solo.values());

  CHECK_THROWS_AS(extract_single_expert(p, samples, n, 1), DataError);
}

TEST_CASE("uniform weights reduce the ensemble to plain concatenation") {
  auto hp = small_hp();
  auto p = model::init({4, 4, 4, 4}, hp, 35);
  scatter_prototypes(p, 36);
  const std::size_t n = 6;
  const auto samples = random_rows(n, hp.d_in, 37);

  RelevanceReport uniform;
  uniform.num_domains = 4;
  uniform.proto_checksum = prototype_checksum(p);
  uniform.per_domain.assign(4, 0.0);
  uniform.weights.assign(4, 0.25);
  const Tensor agg =
      extract_aggregated(p, samples, n, uniform, model::IntegrateFn::concat);

  // the common factor cancels under row normalization
  NoGradGuard ng;
  const Tensor x = Tensor::constant({n, hp.d_in}, samples);
  const Tensor f = model::backbone_forward(p, x);
  std::vector<Tensor> parts;
  for (std::size_t k = 0; k < 4; ++k)
    parts.push_back(
        model::expert_forward(p.experts[k], f, model::Mode::eval, nullptr).m);
  const Tensor plain = l2_normalize_last(concat_last(parts));
  REQUIRE(agg.shape() == plain.shape());
  for (std::size_t i = 0; i < agg.numel(); ++i)
    CHECK(agg.values()[i] ==
          doctest::Approx(plain.values()[i]).epsilon(1e-9));
}

TEST_CASE("end-to-end evaluation works in both relevance modes") {
  auto hp = small_hp();
  Rng style_rng(45);
  std::vector<synth::DomainSpec> sources;
  for (int k = 0; k < 3; ++k) {
    synth::DomainSpec s;
    s.domain_id = k + 1;
    s.num_identities = 4;
    s.samples_per_identity = 4;
    s.style = synth::random_style(hp.d_in, style_rng);
    s.noise_sigma = 0.2;
    sources.push_back(s);
  }
  synth::DomainSpec tgt = sources[0];
  tgt.domain_id = 4;
  auto data = synth::generate(sources, {tgt}, hp.d_in, 46);
  const synth::Domain& target = data.targets.domains[0];

  auto p = model::init({4, 4, 4}, hp, 47);
  scatter_prototypes(p, 48);
  Rng split_rng(49);
  const auto split = synth::split_query_gallery(target, 0.3, split_rng);

  for (RelevanceMode mode :
       {RelevanceMode::all_samples, RelevanceMode::gallery_only}) {
    const auto r = evaluate_ramoe(p, target, split, hp.sigma_fn,
                                  hp.integrate_fn, mode);
    CHECK(r.mAP >= 0.0);
    CHECK(r.mAP <= 1.0);
    CHECK(r.per_query_ap.size() == split.query_rows.size());
    REQUIRE(r.rank_list == std::vector<std::size_t>{1, 5, 10});
    REQUIRE(r.cmc.size() == 3);
    const auto again = evaluate_ramoe(p, target, split, hp.sigma_fn,
                                      hp.integrate_fn, mode);
    CHECK(again.mAP == r.mAP);
    CHECK(again.per_query_ap == r.per_query_ap);
  }
}

TEST_CASE("ablation table lists every variant in a stable order") {
  auto hp = small_hp();
  Rng style_rng(55);
  std::vector<synth::DomainSpec> sources;
  for (int k = 0; k < 3; ++k) {
    synth::DomainSpec s;
    s.domain_id = k + 1;
    s.num_identities = 4;
    s.samples_per_identity = 4;
    s.style = synth::random_style(hp.d_in, style_rng);
    s.noise_sigma = 0.2;
    sources.push_back(s);
  }
  synth::DomainSpec tgt = sources[1];
  tgt.domain_id = 4;
  auto data = synth::generate(sources, {tgt}, hp.d_in, 56);
  const synth::Domain& target = data.targets.domains[0];
  auto p = model::init({4, 4, 4}, hp, 57);
  scatter_prototypes(p, 58);
  auto p2 = model::init({4, 4, 4}, hp, 59);
  scatter_prototypes(p2, 60);
  Rng split_rng(61);
  const auto split = synth::split_query_gallery(target, 0.3, split_rng);

  const auto with = ablation_suite(p, &p2, target, split, hp.sigma_fn,
                                   hp.integrate_fn);
  REQUIRE(with.size() == 6);
  CHECK(with[0].name == "expert_1");
  CHECK(with[1].name == "expert_2");
  CHECK(with[2].name == "expert_3");
  CHECK(with[3].name == "ensemble_uniform");
  CHECK(with[4].name == "wo_decor");
  CHECK(with[5].name == "ramoe_full");
  for (const auto& row : with) {
    CHECK(row.result.mAP >= 0.0);
    CHECK(row.result.mAP <= 1.0);
    CHECK(row.result.cmc.size() == 3);
  }

  const auto without = ablation_suite(p, nullptr, target, split, hp.sigma_fn,
                                      hp.integrate_fn);
  REQUIRE(without.size() == 5);
  CHECK(without[3].name == "ensemble_uniform");
  CHECK(without[4].name == "ramoe_full");
  // shared rows are identical computations
  CHECK(without[0].result.mAP == with[0].result.mAP);
  CHECK(without[4].result.mAP == with[5].result.mAP);
}

TEST_CASE("csv writers emit well-formed tables") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ramoe_inference_csv";
  fs::create_directories(dir);

  auto hp = small_hp();
  auto p = model::init({4, 4}, hp, 65);
  scatter_prototypes(p, 66);
  const std::size_t n = 4;
  const auto samples = random_rows(n, hp.d_in, 67);
  const auto rep =
      compute_relevance(p, samples, n, RelevanceMode::all_samples, hp.sigma_fn);

  {
    const auto path = (dir / "relevance.csv").string();
    write_relevance_report(rep, path);
    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 1 + n + 3);  // header, rows, mean, weight, mode
    CHECK(lines[0] == "row,source_1,source_2");
    CHECK(lines[1 + n].rfind("mean,", 0) == 0);
    CHECK(lines[2 + n].rfind("weight,", 0) == 0);
    CHECK(lines[3 + n] == "mode,all");
    // the printed doubles round-trip exactly
    const std::string first = lines[1].substr(lines[1].find(',') + 1);
    const std::string cell = first.substr(0, first.find(','));
    CHECK(std::strtod(cell.c_str(), nullptr) == rep.per_sample[0]);
  }
  {
    RetrievalResult r;
    r.mAP = 0.625;
    r.rank_list = {1, 5};
    r.cmc = {0.5, 1.0};
    const auto path = (dir / "retrieval.csv").string();
    write_retrieval_result(r, path);
    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "metric,value");
    CHECK(lines[1] == "mAP,0.625");
    CHECK(lines[2] == "rank1,0.5");
    CHECK(lines[3] == "rank5,1");
  }
  {
    std::vector<AblationRow> rows(2);
    rows[0].name = "expert_1";
    rows[0].result.mAP = 0.25;
    rows[0].result.rank_list = {1, 5, 10};
    rows[0].result.cmc = {0.25, 0.5, 0.75};
    rows[1].name = "ramoe_full";
    rows[1].result.mAP = 0.5;
    rows[1].result.rank_list = {1, 5, 10};
    rows[1].result.cmc = {0.5, 0.75, 1.0};
    const auto path = (dir / "ablation.csv").string();
    write_ablation_csv(rows, path);
    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "variant,mAP,rank1,rank5,rank10");
    CHECK(lines[1] == "expert_1,0.25,0.25,0.5,0.75");
    CHECK(lines[2] == "ramoe_full,0.5,0.5,0.75,1");
  }
  {
    const auto path = (dir / "heatmap.csv").string();
    write_heatmap_csv({"t_near_1", "t_mixed"}, 3,
                      {{0.875, 0.25, 0.125}, {0.5, 0.5, 0.375}}, path);
    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "target,source_1,source_2,source_3");
    CHECK(lines[1] == "t_near_1,0.875,0.25,0.125");
    CHECK_THROWS_AS(write_heatmap_csv({"a"}, 3, {{1.0, 2.0}}, path),
                    std::invalid_argument);
    CHECK_THROWS_AS(write_heatmap_csv({"a", "b"}, 2, {{1.0, 2.0}}, path),
                    std::invalid_argument);
  }
  fs::remove_all(dir);
}
