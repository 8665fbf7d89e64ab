#include "ramoe/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ramoe/errors.hpp"

namespace ramoe::synth {

namespace {

constexpr double kOrthoTol = 1e-8;

void validate_spec(const DomainSpec& spec, std::size_t d_in) {
  const std::string who = "domain " + std::to_string(spec.domain_id);
  if (spec.domain_id <= 0) throw DataError("domain ids must be positive");
  if (spec.num_identities < 2)
    throw DataError(who + ": needs at least 2 identities");
  if (spec.samples_per_identity < 2)
    throw DataError(who + ": samples_per_identity must be at least 2");
  if (spec.noise_sigma < 0.0) throw DataError(who + ": negative noise_sigma");
  if (spec.style.scale.size() != d_in || spec.style.bias.size() != d_in ||
      spec.style.angles.size() != d_in / 2)
    throw DataError(who + ": style sized for a different d_in");
  if (orthogonality_error(spec.style, d_in) > kOrthoTol)
    throw DataError(who + ": style rotation is not orthogonal");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& tok, std::size_t line, std::size_t field) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    parse_fail(line, "field " + std::to_string(field) + " is not numeric: '" +
                         tok + "'");
  return v;
}

std::size_t parse_count(const std::string& tok, std::size_t line,
                        const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    parse_fail(line, what + " is not a non-negative integer: '" + tok + "'");
  return v;
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> toks;
  std::string t;
  while (iss >> t) toks.push_back(t);
  return toks;
}

}  // namespace

StyleParams random_style(std::size_t d_in, Rng& rng) {
  StyleParams s;
  s.angles.resize(d_in / 2);
  s.scale.resize(d_in);
  s.bias.resize(d_in);
  // Angles stay inside (-pi/2, pi/2) so linear interpolation between any two
  // styles moves each rotation block monotonically (|delta| < pi, no wrap).
  for (auto& a : s.angles) a = (rng.uniform() * 2.0 - 1.0) * 1.5;
  // Bimodal scales: a coordinate is either crushed into the noise floor or
  // strongly informative, with the pattern drawn per domain. Domains then
  // disagree about which coordinates carry identity, which is what makes
  // cross-domain transfer genuinely degrade.
  for (auto& v : s.scale)
    v = rng.uniform() < 0.45 ? 0.05 + 0.1 * rng.uniform()
                             : 1.0 + 0.8 * rng.uniform();
  for (auto& b : s.bias) b = 2.0 * rng.normal();
  return s;
}

StyleParams identity_style(std::size_t d_in) {
  StyleParams s;
  s.angles.assign(d_in / 2, 0.0);
  s.scale.assign(d_in, 1.0);
  s.bias.assign(d_in, 0.0);
  return s;
}

StyleParams interpolate_style(const StyleParams& base, const StyleParams& toward,
                              double t) {
  if (base.angles.size() != toward.angles.size() ||
      base.scale.size() != toward.scale.size() ||
      base.bias.size() != toward.bias.size())
    throw DataError("interpolate_style: mismatched style dimensions");
  StyleParams out = base;
  for (std::size_t i = 0; i < out.angles.size(); ++i)
    out.angles[i] = (1.0 - t) * base.angles[i] + t * toward.angles[i];
  for (std::size_t i = 0; i < out.scale.size(); ++i)
    out.scale[i] = (1.0 - t) * base.scale[i] + t * toward.scale[i];
  for (std::size_t i = 0; i < out.bias.size(); ++i)
    out.bias[i] = (1.0 - t) * base.bias[i] + t * toward.bias[i];
  return out;
}

void apply_style(const StyleParams& s, const double* in, double* out,
                 std::size_t d_in) {
  for (std::size_t i = 0; i + 1 < d_in; i += 2) {
    const double c = std::cos(s.angles[i / 2]);
    const double sn = std::sin(s.angles[i / 2]);
    out[i] = c * in[i] - sn * in[i + 1];
    out[i + 1] = sn * in[i] + c * in[i + 1];
  }
  if (d_in % 2) out[d_in - 1] = in[d_in - 1];
  for (std::size_t i = 0; i < d_in; ++i) out[i] = s.scale[i] * out[i] + s.bias[i];
}

double orthogonality_error(const StyleParams& s, std::size_t d_in) {
  // Block-diagonal rotation: R R^T is diag(c^2+s^2) per pair.
  double err = 0.0;
  for (std::size_t i = 0; i + 1 < d_in; i += 2) {
    const double c = std::cos(s.angles[i / 2]);
    const double sn = std::sin(s.angles[i / 2]);
    err = std::max(err, std::abs(c * c + sn * sn - 1.0));
  }
  return err;
}

GeneratedData generate(const std::vector<DomainSpec>& source_specs,
                       const std::vector<DomainSpec>& target_specs,
                       std::size_t d_in, std::uint64_t seed) {
  if (d_in == 0) throw DataError("d_in must be positive");
  if (source_specs.empty()) throw DataError("need at least one source domain");
  for (std::size_t k = 0; k < source_specs.size(); ++k) {
    validate_spec(source_specs[k], d_in);
    if (source_specs[k].domain_id != static_cast<int>(k) + 1)
      throw DataError("source domain ids must be 1..K in order");
  }
  for (const auto& spec : target_specs) validate_spec(spec, d_in);

  std::size_t pool = 0;
  for (const auto& s : source_specs) pool = std::max(pool, s.num_identities);
  for (const auto& s : target_specs) pool = std::max(pool, s.num_identities);

  Rng rng(seed);
  std::vector<double> anchors(pool * d_in);
  for (auto& v : anchors) v = rng.normal();

  auto render = [&](const DomainSpec& spec) {
    Domain dom;
    dom.domain_id = spec.domain_id;
    dom.num_identities = spec.num_identities;
    dom.d_in = d_in;
    const std::size_t n = spec.num_identities * spec.samples_per_identity;
    dom.samples.resize(n * d_in);
    dom.labels.reserve(n);
    std::vector<double> styled(d_in);
    std::size_t row = 0;
    for (std::size_t l = 0; l < spec.num_identities; ++l) {
      apply_style(spec.style, anchors.data() + l * d_in, styled.data(), d_in);
      for (std::size_t s = 0; s < spec.samples_per_identity; ++s, ++row) {
        double* out = dom.samples.data() + row * d_in;
        for (std::size_t j = 0; j < d_in; ++j)
          out[j] = styled[j] + spec.noise_sigma * rng.normal();
        dom.labels.push_back(l);
      }
    }
    return dom;
  };

  GeneratedData data;
  data.sources.d_in = d_in;
  data.targets.d_in = d_in;
  for (const auto& spec : source_specs) data.sources.domains.push_back(render(spec));
  for (const auto& spec : target_specs) data.targets.domains.push_back(render(spec));
  return data;
}

EpisodeBatch sample_pk_batch(const Domain& domain, std::size_t P, std::size_t Q,
                             Rng& rng) {
  if (P < 2 || Q < 2)
    throw DataError("batch needs P >= 2 and Q >= 2, got P=" + std::to_string(P) +
                    " Q=" + std::to_string(Q));
  const std::size_t L = domain.num_identities;
  if (L < P)
    throw DataError("domain " + std::to_string(domain.domain_id) + " has " +
                    std::to_string(L) + " identities but the batch needs P=" +
                    std::to_string(P));
  std::vector<std::vector<std::size_t>> by_label(L);
  for (std::size_t i = 0; i < domain.size(); ++i)
    by_label[domain.labels[i]].push_back(i);
  for (std::size_t l = 0; l < L; ++l)
    if (by_label[l].size() < Q)
      throw DataError("domain " + std::to_string(domain.domain_id) +
                      ": identity " + std::to_string(l) + " has " +
                      std::to_string(by_label[l].size()) +
                      " samples but the batch needs Q=" + std::to_string(Q));

  EpisodeBatch batch;
  batch.domain_id = domain.domain_id;
  batch.P = P;
  batch.Q = Q;
  batch.d_in = domain.d_in;
  batch.inputs.reserve(P * Q * domain.d_in);
  batch.labels.reserve(P * Q);
  for (std::size_t id : rng.choose(L, P)) {
    const auto& rows = by_label[id];
    for (std::size_t pick : rng.choose(rows.size(), Q)) {
      const double* src = domain.row(rows[pick]);
      batch.inputs.insert(batch.inputs.end(), src, src + domain.d_in);
      batch.labels.push_back(id);
    }
  }
  return batch;
}

void save_dataset(const MultiDomainDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "dataset v1\n";
  out << "d_in " << ds.d_in << "\n";
  out << "domains " << ds.domains.size() << "\n";
  for (const auto& dom : ds.domains)
    out << "domain " << dom.domain_id << " identities " << dom.num_identities
        << " samples " << dom.size() << "\n";
  for (const auto& dom : ds.domains) {
    for (std::size_t i = 0; i < dom.size(); ++i) {
      out << dom.domain_id << " " << dom.labels[i];
      const double* row = dom.row(i);
      for (std::size_t j = 0; j < ds.d_in; ++j) out << " " << fmt_double(row[j]);
      out << "\n";
    }
  }
  if (!out) throw DataError("write failed for " + path);
}

MultiDomainDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);

  std::size_t ln = 0;
  auto next_tokens = [&]() -> std::vector<std::string> {
    if (ln >= lines.size())
      parse_fail(lines.size() + 1, "unexpected end of file");
    auto toks = tokens_of(lines[ln]);
    ++ln;
    if (toks.empty()) parse_fail(ln, "blank line in header");
    return toks;
  };

  auto header = next_tokens();
  if (header.size() != 2 || header[0] != "dataset" || header[1] != "v1")
    parse_fail(ln, "expected 'dataset v1'");
  auto dline = next_tokens();
  if (dline.size() != 2 || dline[0] != "d_in")
    parse_fail(ln, "expected 'd_in <n>'");
  const std::size_t d_in = parse_count(dline[1], ln, "d_in");
  if (d_in == 0) parse_fail(ln, "d_in must be positive");
  auto kline = next_tokens();
  if (kline.size() != 2 || kline[0] != "domains")
    parse_fail(ln, "expected 'domains <k>'");
  const std::size_t K = parse_count(kline[1], ln, "domain count");
  if (K == 0) parse_fail(ln, "dataset has no domains");

  MultiDomainDataset ds;
  ds.d_in = d_in;
  std::vector<std::size_t> declared(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    auto t = next_tokens();
    if (t.size() != 6 || t[0] != "domain" || t[2] != "identities" ||
        t[4] != "samples")
      parse_fail(ln, "expected 'domain <id> identities <l> samples <n>'");
    Domain dom;
    const std::size_t id = parse_count(t[1], ln, "domain id");
    if (id == 0) parse_fail(ln, "domain id must be positive");
    dom.domain_id = static_cast<int>(id);
    dom.num_identities = parse_count(t[3], ln, "identity count");
    declared[k] = parse_count(t[5], ln, "sample count");
    dom.d_in = d_in;
    for (std::size_t j = 0; j < k; ++j)
      if (ds.domains[j].domain_id == dom.domain_id)
        parse_fail(ln, "duplicate domain id " + t[1]);
    ds.domains.push_back(std::move(dom));
  }

  auto find_domain = [&](std::size_t id, std::size_t at_line) -> Domain& {
    for (auto& dom : ds.domains)
      if (dom.domain_id == static_cast<int>(id)) return dom;
    parse_fail(at_line, "row references undeclared domain " + std::to_string(id));
  };

  while (ln < lines.size()) {
    auto toks = tokens_of(lines[ln]);
    ++ln;
    if (toks.empty()) {
      if (ln == lines.size()) break;  // trailing newline
      parse_fail(ln, "blank line inside dataset");
    }
    if (toks.size() != 2 + d_in)
      parse_fail(ln, "expected " + std::to_string(2 + d_in) + " fields, got " +
                         std::to_string(toks.size()));
    const std::size_t id = parse_count(toks[0], ln, "domain id");
    Domain& dom = find_domain(id, ln);
    const std::size_t label = parse_count(toks[1], ln, "identity label");
    if (label >= dom.num_identities)
      parse_fail(ln, "identity label " + toks[1] + " out of range for domain " +
                         toks[0]);
    dom.labels.push_back(label);
    for (std::size_t j = 0; j < d_in; ++j)
      dom.samples.push_back(parse_double(toks[2 + j], ln, 3 + j));
  }

  for (std::size_t k = 0; k < K; ++k) {
    const Domain& dom = ds.domains[k];
    const std::string who = "domain " + std::to_string(dom.domain_id);
    if (dom.size() == 0) throw DataError(who + ": empty domain section");
    if (dom.size() != declared[k])
      throw DataError(who + ": declared " + std::to_string(declared[k]) +
                      " rows, found " + std::to_string(dom.size()));
    std::vector<std::size_t> counts(dom.num_identities, 0);
    for (std::size_t l : dom.labels) ++counts[l];
    for (std::size_t l = 0; l < counts.size(); ++l)
      if (counts[l] < 2)
        throw DataError(who + ": identity " + std::to_string(l) + " has " +
                        std::to_string(counts[l]) +
                        " sample(s), need at least 2");
  }
  return ds;
}

QueryGallerySplit split_query_gallery(const Domain& domain,
                                      double query_fraction, Rng& rng) {
  if (query_fraction <= 0.0 || query_fraction >= 1.0)
    throw DataError("query_fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_label(domain.num_identities);
  for (std::size_t i = 0; i < domain.size(); ++i)
    by_label[domain.labels[i]].push_back(i);

  QueryGallerySplit split;
  for (auto& rows : by_label) {
    if (rows.size() < 2) continue;  // cannot place one on each side
    rng.shuffle(rows);
    const auto want =
        static_cast<std::size_t>(std::llround(query_fraction * rows.size()));
    const std::size_t nq = std::clamp<std::size_t>(want, 1, rows.size() - 1);
    split.query_rows.insert(split.query_rows.end(), rows.begin(),
                            rows.begin() + static_cast<std::ptrdiff_t>(nq));
    split.gallery_rows.insert(split.gallery_rows.end(),
                              rows.begin() + static_cast<std::ptrdiff_t>(nq),
                              rows.end());
  }
  std::sort(split.query_rows.begin(), split.query_rows.end());
  std::sort(split.gallery_rows.begin(), split.gallery_rows.end());
  return split;
}

std::vector<double> domain_centroids(const Domain& domain) {
  const std::size_t L = domain.num_identities, d = domain.d_in;
  std::vector<double> centroids(L * d, 0.0);
  std::vector<std::size_t> counts(L, 0);
  for (std::size_t i = 0; i < domain.size(); ++i) {
    const std::size_t l = domain.labels[i];
    const double* row = domain.row(i);
    for (std::size_t j = 0; j < d; ++j) centroids[l * d + j] += row[j];
    ++counts[l];
  }
  for (std::size_t l = 0; l < L; ++l)
    if (counts[l])
      for (std::size_t j = 0; j < d; ++j)
        centroids[l * d + j] /= static_cast<double>(counts[l]);
  return centroids;
}

double mean_centroid_distance(const Domain& a, const Domain& b) {
  if (a.d_in != b.d_in)
    throw DataError("mean_centroid_distance: dimension mismatch");
  const std::size_t L = std::min(a.num_identities, b.num_identities);
  if (L == 0) throw DataError("mean_centroid_distance: no identities");
  const auto ca = domain_centroids(a);
  const auto cb = domain_centroids(b);
  double acc = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < a.d_in; ++j) {
      const double diff = ca[l * a.d_in + j] - cb[l * a.d_in + j];
      d2 += diff * diff;
    }
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(L);
}

}  // namespace ramoe::synth
