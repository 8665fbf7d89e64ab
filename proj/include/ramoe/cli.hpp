#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ramoe/inference.hpp"
#include "ramoe/meta.hpp"
#include "ramoe/synthdata.hpp"

namespace ramoe::cli {

// Benchmark generator settings: K source domains plus one held-out target
// whose style sits at `target_t` between a fresh random style (t=0) and
// source `target_toward`'s style (t=1). Styles come from `seed`, anchors and
// noise from `seed + 1`, so the whole family is pinned by one number.
struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t d_in = 64;
  std::size_t sources = 4;
  std::size_t identities = 32;
  std::size_t samples_per_identity = 8;
  double noise_sigma = 0.8;
  std::size_t target_toward = 1;  // 1-based source index
  double target_t = 0.75;
  std::size_t target_identities = 32;
  std::size_t target_samples = 8;
  double target_noise_sigma = 0.8;

  void validate() const;  // throws ConfigError
};

struct EvalConfig {
  double query_fraction = 0.3;
  std::uint64_t seed = 11;
  std::vector<std::size_t> rank_list{1, 5, 10};
  inference::RelevanceMode relevance_mode = inference::RelevanceMode::all_samples;

  void validate() const;
};

struct OutputConfig {
  std::string dir = "runs/default";
};

struct RunConfig {
  DataConfig data;
  meta::TrainConfig train;
  EvalConfig eval;
  OutputConfig output;
};

// Strict sectioned key=value format: unknown sections, unknown keys,
// duplicate keys, and malformed lines are all ConfigError. Values use C-locale
// decimals regardless of the process locale. Missing keys keep their
// defaults, so an empty file parses to default_config().
RunConfig default_config();
RunConfig parse_config(std::istream& in, const std::string& origin);
RunConfig parse_config_file(const std::string& path);
// Writes every key with its resolved value; re-parsing the output reproduces
// the same RunConfig (doubles are printed with shortest round-trip digits).
void write_config(const RunConfig& cfg, std::ostream& out);
void write_config_file(const RunConfig& cfg, const std::string& path);

// The generator call behind `generate` and `train`: same DataConfig, same
// domains, every time.
synth::GeneratedData build_dataset(const DataConfig& d);

// One finite-difference row per loss; `pass` applies `threshold` to
// max_rel_err. Shared by the gradcheck command and the acceptance gate.
struct LossCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t instances = 0;
  double threshold = 0.0;
  bool pass = false;
};
std::vector<LossCheckRow> loss_gradient_suite(std::uint64_t seed,
                                              std::size_t instances_per_loss,
                                              double threshold);

// Entry point used by the binary and the tests: parses `args` (without the
// program name), runs one subcommand, writes human output to `out` and a
// single machine-parseable line per failure to `err`. Returns the process
// exit code: 0 ok, 1 usage or config problem, 2 data problem, 3 numerical
// failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace ramoe::cli
