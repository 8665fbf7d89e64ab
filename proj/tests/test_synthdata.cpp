#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "ramoe/errors.hpp"
#include "ramoe/synthdata.hpp"

using namespace ramoe;
using namespace ramoe::synth;

namespace {

DomainSpec spec_for(int id, std::size_t L, std::size_t S, const StyleParams& st,
                    double sigma) {
  DomainSpec s;
  s.domain_id = id;
  s.num_identities = L;
  s.samples_per_identity = S;
  s.style = st;
  s.noise_sigma = sigma;
  return s;
}

GeneratedData small_data(std::uint64_t seed = 7, double sigma = 0.1) {
  const std::size_t d = 10;
  Rng rng(99);
  std::vector<DomainSpec> sources = {
      spec_for(1, 6, 4, random_style(d, rng), sigma),
      spec_for(2, 5, 3, random_style(d, rng), sigma),
  };
  std::vector<DomainSpec> targets = {
      spec_for(1, 4, 3, random_style(d, rng), sigma)};
  return generate(sources, targets, d, seed);
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

std::string temp_path(const char* name) {
  return std::string("/tmp/ramoe_test_") + name;
}

}  // namespace

TEST_CASE("generated domains have the declared arithmetic") {
  auto data = small_data();
  REQUIRE(data.sources.domains.size() == 2);
  REQUIRE(data.targets.domains.size() == 1);
  const auto& a = data.sources.domains[0];
  CHECK(a.size() == 6 * 4);
  CHECK(a.samples.size() == a.size() * 10);
  CHECK(a.num_identities == 6);
  const auto& b = data.sources.domains[1];
  CHECK(b.size() == 5 * 3);
  // labels dense 0..L-1, each with samples_per_identity rows
  std::vector<std::size_t> counts(6, 0);
  for (auto l : a.labels) {
    REQUIRE(l < 6);
    ++counts[l];
  }
  for (auto c : counts) CHECK(c == 4);
}

TEST_CASE("generation is deterministic in the seed") {
  auto d1 = small_data(42);
  auto d2 = small_data(42);
  auto d3 = small_data(43);
  CHECK(d1.sources.domains[0].samples == d2.sources.domains[0].samples);
  CHECK(d1.targets.domains[0].samples == d2.targets.domains[0].samples);
  CHECK(d1.sources.domains[0].samples != d3.sources.domains[0].samples);
}

TEST_CASE("zero noise collapses each identity onto one point") {
  auto data = small_data(3, 0.0);
  const auto& dom = data.sources.domains[0];
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const std::size_t l = dom.labels[i];
    const double* first = dom.row(l * 4);  // rows are identity-major
    const double* here = dom.row(i);
    for (std::size_t j = 0; j < dom.d_in; ++j) CHECK(here[j] == first[j]);
  }
}

TEST_CASE("random styles are orthogonal and style application is invertible "
          "in scale") {
  Rng rng(5);
  const std::size_t d = 9;  // odd width: last feature passes through rotation
  auto st = random_style(d, rng);
  CHECK(orthogonality_error(st, d) < 1e-12);
  // identity style maps x to x
  auto id = identity_style(d);
  std::vector<double> in(d), out(d);
  for (std::size_t i = 0; i < d; ++i) in[i] = 0.1 * static_cast<double>(i) - 0.3;
  apply_style(id, in.data(), out.data(), d);
  for (std::size_t i = 0; i < d; ++i) CHECK(out[i] == doctest::Approx(in[i]));
}

TEST_CASE("interpolating a target style toward a source brings centroids "
          "closer") {
  const std::size_t d = 16;
  Rng rng(11);
  auto style_a = random_style(d, rng);
  auto style_b = random_style(d, rng);
  std::vector<DomainSpec> sources = {spec_for(1, 8, 4, style_a, 0.05),
                                     spec_for(2, 8, 4, style_b, 0.05)};
  std::vector<DomainSpec> targets;
  const double ts[3] = {0.0, 0.5, 1.0};
  for (int i = 0; i < 3; ++i)
    targets.push_back(
        spec_for(10 + i, 8, 4, interpolate_style(style_b, style_a, ts[i]), 0.05));
  auto data = generate(sources, targets, d, 123);
  const auto& src_a = data.sources.domains[0];
  double dist[3];
  for (int i = 0; i < 3; ++i)
    dist[i] = mean_centroid_distance(data.targets.domains[i], src_a);
  CHECK(dist[0] > dist[1]);
  CHECK(dist[1] > dist[2]);
  CHECK(dist[2] < 0.2);  // t=1 reproduces the source style up to noise
}

TEST_CASE("generate validates its specs") {
  const std::size_t d = 6;
  Rng rng(1);
  auto st = random_style(d, rng);
  CHECK_THROWS_AS(generate({spec_for(2, 4, 3, st, 0.1)}, {}, d, 1), DataError);
  CHECK_THROWS_AS(generate({spec_for(1, 1, 3, st, 0.1)}, {}, d, 1), DataError);
  CHECK_THROWS_AS(generate({spec_for(1, 4, 1, st, 0.1)}, {}, d, 1), DataError);
  CHECK_THROWS_AS(generate({spec_for(1, 4, 3, st, -0.1)}, {}, d, 1), DataError);
  auto wrong = random_style(d + 2, rng);
  CHECK_THROWS_AS(generate({spec_for(1, 4, 3, wrong, 0.1)}, {}, d, 1),
                  DataError);
}

TEST_CASE("pk batches are balanced, in-domain, and deterministic") {
  auto data = small_data(21);
  const auto& dom = data.sources.domains[0];
  Rng r1(5), r2(5), r3(6);
  auto b1 = sample_pk_batch(dom, 3, 2, r1);
  auto b2 = sample_pk_batch(dom, 3, 2, r2);
  auto b3 = sample_pk_batch(dom, 3, 2, r3);
  CHECK(b1.labels.size() == 6);
  CHECK(b1.inputs.size() == 6 * dom.d_in);
  CHECK(b1.inputs == b2.inputs);
  CHECK(b1.labels == b2.labels);
  CHECK(b1.inputs != b3.inputs);

  std::set<std::size_t> distinct(b1.labels.begin(), b1.labels.end());
  CHECK(distinct.size() == 3);
  for (auto l : distinct) {
    CHECK(std::count(b1.labels.begin(), b1.labels.end(), l) == 2);
  }
  // every batch row is an actual domain row of the right identity
  for (std::size_t i = 0; i < b1.labels.size(); ++i) {
    bool found = false;
    for (std::size_t r = 0; r < dom.size() && !found; ++r) {
      if (dom.labels[r] != b1.labels[i]) continue;
      found = std::equal(dom.row(r), dom.row(r) + dom.d_in,
                         b1.inputs.data() + i * dom.d_in);
    }
    CHECK(found);
  }
}

TEST_CASE("pk batch errors name the shortfall") {
  auto data = small_data();
  const auto& dom = data.sources.domains[1];  // 5 identities x 3 samples
  Rng rng(1);
  CHECK_THROWS_AS(sample_pk_batch(dom, 1, 2, rng), DataError);
  auto msg = message_of([&] { sample_pk_batch(dom, 6, 2, rng); });
  CHECK(msg.find("domain 2") != std::string::npos);
  CHECK(msg.find("has 5 identities") != std::string::npos);
  msg = message_of([&] { sample_pk_batch(dom, 3, 4, rng); });
  CHECK(msg.find("identity 0 has 3 samples") != std::string::npos);
}

TEST_CASE("save/load round-trips exactly") {
  auto data = small_data(77);
  const auto path = temp_path("roundtrip.txt");
  save_dataset(data.sources, path);
  auto back = load_dataset(path);
  REQUIRE(back.domains.size() == data.sources.domains.size());
  CHECK(back.d_in == data.sources.d_in);
  for (std::size_t k = 0; k < back.domains.size(); ++k) {
    const auto& a = data.sources.domains[k];
    const auto& b = back.domains[k];
    CHECK(a.domain_id == b.domain_id);
    CHECK(a.num_identities == b.num_identities);
    CHECK(a.labels == b.labels);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i)
      CHECK(a.samples[i] == b.samples[i]);  // %.17g round-trips doubles
  }
  std::remove(path.c_str());
}

namespace {

std::string write_lines(const char* name, const std::vector<std::string>& ls) {
  const auto path = temp_path(name);
  std::ofstream out(path);
  for (const auto& l : ls) out << l << "\n";
  return path;
}

}  // namespace

TEST_CASE("loader reports malformed files with line numbers") {
  const std::vector<std::string> good = {
      "dataset v1",
      "d_in 3",
      "domains 1",
      "domain 1 identities 2 samples 4",
      "1 0 0.1 0.2 0.3",
      "1 0 0.4 0.5 0.6",
      "1 1 0.7 0.8 0.9",
      "1 1 1.0 1.1 1.2",
  };
  CHECK_NOTHROW(load_dataset(write_lines("ok.txt", good)));

  auto expect = [&](std::vector<std::string> lines, const char* needle,
                    const char* name) {
    const auto path = write_lines(name, lines);
    const auto msg = message_of([&] { load_dataset(path); });
    INFO(name, ": ", msg);
    CHECK(msg.find(needle) != std::string::npos);
    std::remove(path.c_str());
  };

  auto bad = good;
  bad[4] = "1 0 0.1 0.2";
  expect(bad, "line 5: expected 5 fields, got 4", "arity.txt");

  bad = good;
  bad[5] = "1 0 0.4 x 0.6";
  expect(bad, "line 6: field 4 is not numeric: 'x'", "nonnum.txt");

  bad = good;
  bad[3] = "domain 1 identities 2 samples 5";
  expect(bad, "domain 1: declared 5 rows, found 4", "count.txt");

  bad = good;
  bad[6] = "1 2 0.7 0.8 0.9";
  expect(bad, "line 7: identity label 2 out of range for domain 1",
         "range.txt");

  bad = good;
  bad[4] = "3 0 0.1 0.2 0.3";
  expect(bad, "line 5: row references undeclared domain 3", "undecl.txt");

  bad = good;
  bad[1] = "";
  expect(bad, "line 2: blank line in header", "blank.txt");

  bad = good;
  bad.insert(bad.begin() + 6, "");
  expect(bad, "line 7: blank line inside dataset", "blankrow.txt");

  expect({"dataset v1", "d_in 3", "domains 2",
          "domain 1 identities 2 samples 2", "domain 1 identities 2 samples 2"},
         "line 5: duplicate domain id 1", "dup.txt");

  expect({"dataset v2"}, "line 1: expected 'dataset v1'", "magic.txt");
  expect({"dataset v1", "d_in 3"}, "line 3: unexpected end of file", "eof.txt");

  bad = good;
  bad.resize(6);  // identity 1 vanishes entirely
  bad[3] = "domain 1 identities 2 samples 2";
  expect(bad, "domain 1: identity 1 has 0 sample(s), need at least 2",
         "single.txt");
}

TEST_CASE("query/gallery split covers every row once with both sides "
          "populated") {
  auto data = small_data(13);
  const auto& dom = data.sources.domains[0];
  Rng rng(3);
  auto split = split_query_gallery(dom, 0.3, rng);
  CHECK(split.query_rows.size() + split.gallery_rows.size() == dom.size());
  std::vector<char> seen(dom.size(), 0);
  for (auto r : split.query_rows) seen[r] += 1;
  for (auto r : split.gallery_rows) seen[r] += 1;
  for (auto s : seen) CHECK(s == 1);
  CHECK(std::is_sorted(split.query_rows.begin(), split.query_rows.end()));
  CHECK(std::is_sorted(split.gallery_rows.begin(), split.gallery_rows.end()));
  // every identity present on both sides
  for (std::size_t l = 0; l < dom.num_identities; ++l) {
    auto has = [&](const std::vector<std::size_t>& rows) {
      return std::any_of(rows.begin(), rows.end(),
                         [&](std::size_t r) { return dom.labels[r] == l; });
    };
    CHECK(has(split.query_rows));
    CHECK(has(split.gallery_rows));
  }
  CHECK_THROWS_AS(split_query_gallery(dom, 0.0, rng), DataError);
  CHECK_THROWS_AS(split_query_gallery(dom, 1.0, rng), DataError);
}

TEST_CASE("centroid helpers agree with a direct computation") {
  auto data = small_data(17, 0.0);
  const auto& dom = data.sources.domains[0];
  auto cents = domain_centroids(dom);
  // no noise: centroid of identity l is exactly its styled anchor = any row
  for (std::size_t l = 0; l < dom.num_identities; ++l)
    for (std::size_t j = 0; j < dom.d_in; ++j)
      CHECK(cents[l * dom.d_in + j] == doctest::Approx(dom.row(l * 4)[j]));
  CHECK(mean_centroid_distance(dom, dom) == doctest::Approx(0.0));
}
