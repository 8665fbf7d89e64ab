#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ramoe/rng.hpp"

namespace ramoe::synth {

// Per-domain affine "style": a block-diagonal Givens rotation (exactly
// orthogonal), a per-feature scale, and a bias. Identity anchors are shared
// across domains, so two domains differ only by style — which makes domain
// closeness measurable and controllable.
struct StyleParams {
  std::vector<double> angles;  // one per feature pair (2i, 2i+1)
  std::vector<double> scale;   // d_in
  std::vector<double> bias;    // d_in
};

StyleParams random_style(std::size_t d_in, Rng& rng);
StyleParams identity_style(std::size_t d_in);
// Componentwise lerp toward `toward`; t=0 keeps `base`, t=1 lands on `toward`.
StyleParams interpolate_style(const StyleParams& base, const StyleParams& toward,
                              double t);
void apply_style(const StyleParams& s, const double* in, double* out,
                 std::size_t d_in);
// max |R R^T - I| of the rotation component.
double orthogonality_error(const StyleParams& s, std::size_t d_in);

struct DomainSpec {
  int domain_id = 0;  // 1-based
  std::size_t num_identities = 0;
  std::size_t samples_per_identity = 0;
  StyleParams style;
  double noise_sigma = 0.0;
};

struct Domain {
  int domain_id = 0;
  std::size_t num_identities = 0;
  std::size_t d_in = 0;
  std::vector<double> samples;      // N x d_in, row-major
  std::vector<std::size_t> labels;  // dense 0..L-1, length N
  std::size_t size() const { return labels.size(); }
  const double* row(std::size_t i) const { return samples.data() + i * d_in; }
};

struct MultiDomainDataset {
  std::size_t d_in = 0;
  std::vector<Domain> domains;
};

struct GeneratedData {
  MultiDomainDataset sources;
  MultiDomainDataset targets;
};

// Draws one shared anchor per identity, then renders every domain as
// style(anchor) + N(0, sigma^2) noise. Target styles interpolated toward a
// source style land measurably closer to that source.
GeneratedData generate(const std::vector<DomainSpec>& source_specs,
                       const std::vector<DomainSpec>& target_specs,
                       std::size_t d_in, std::uint64_t seed);

struct EpisodeBatch {
  std::vector<double> inputs;       // (P*Q) x d_in, row-major
  std::vector<std::size_t> labels;  // length P*Q
  int domain_id = 0;
  std::size_t P = 0, Q = 0, d_in = 0;
};

// P identities without replacement, Q instances each without replacement.
EpisodeBatch sample_pk_batch(const Domain& domain, std::size_t P, std::size_t Q,
                             Rng& rng);

void save_dataset(const MultiDomainDataset& ds, const std::string& path);
MultiDomainDataset load_dataset(const std::string& path);

struct QueryGallerySplit {
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> gallery_rows;
};

// Per identity: roughly query_fraction of its samples become queries, but
// always at least one query and at least one gallery row, so every query
// identity has a cross-split positive.
QueryGallerySplit split_query_gallery(const Domain& domain,
                                      double query_fraction, Rng& rng);

// Per-identity sample means; L x d_in.
std::vector<double> domain_centroids(const Domain& domain);
// Mean distance between same-identity centroids of two domains (identities
// are aligned across domains because anchors are shared).
double mean_centroid_distance(const Domain& a, const Domain& b);

}  // namespace ramoe::synth
