#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gali/model.hpp"

namespace gali::cli {

inline constexpr int kSchemaVersion = 1;

/// Fully resolved configuration of one invocation. It is echoed into every
/// output file, and replaying the echo regenerates the file byte for byte.
struct RunConfig {
  std::string subcommand;
  std::string mode = "gali";
  std::size_t train_window = 64;
  std::size_t chunk_size = 16;
  std::size_t local_window = 8;
  std::string noise_mode = "alg3";
  double factor = 1.0;
  std::uint64_t seed = 0;
  bool record_attention = false;
  std::string model_path;   // empty: seeded random toy model
  std::string tokens_path;  // empty: seeded random byte tokens
  std::string text;         // generate: prompt text (bytes)
  std::size_t length = 256;
  std::size_t n = 32;
  std::size_t context = 256;
  std::size_t dim = 64;
  double base = 10000.0;
  std::size_t max_dist = 819;
  std::string decay_input = "ones";
  std::vector<std::size_t> chunk_sizes{8, 16, 32};
  std::vector<std::size_t> local_windows{4, 8};
  std::vector<double> trim;  // empty, or {lo, hi} percentiles
  bool quick = false;        // selftest

  RunMode run_mode() const;
};

std::string config_echo(const RunConfig& cfg);
RunConfig parse_config_echo(std::string_view json_text);

/// Reads the config echo from an emitted CSV (first line) or JSON file.
RunConfig read_config_echo(const std::filesystem::path& path);

/// Runs the pipeline for `cfg`, writing <out_prefix>.csv and <out_prefix>.json.
/// Returns the process exit status.
int execute(const RunConfig& cfg, const std::filesystem::path& out_prefix, std::ostream& out);

/// Entry point: subcommands selftest, generate, ppl, analyze-attn, decay,
/// sweep and replay. Failures print a one-line JSON error record to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gali::cli
