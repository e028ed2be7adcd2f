#ifndef ASBD_CLI_HPP
#define ASBD_CLI_HPP

#include "asbd/bidir_model.hpp"
#include "asbd/decoding.hpp"
#include "asbd/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace asbd {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2, kExitNumeric = 3 };

// One JSON object; unknown keys are rejected. Relative paths resolve
// against the directory holding the config file.
struct RunConfig {
  std::filesystem::path train_path;
  std::filesystem::path valid_path;
  std::filesystem::path test_path;       // optional
  std::filesystem::path checkpoint_dir;
  std::filesystem::path report_dir;      // optional

  ModelConfig model;  // vocab sizes are filled from the training corpus
  TrainConfig training;
  int min_freq = 1;
  std::size_t max_vocab = 0;
  MergeStrategy strategy = MergeStrategy::score_split;
  Index beam = 1;
  std::vector<std::size_t> bucket_boundaries{10, 20, 30, 40, 50};
  std::optional<std::uint64_t> seed;

  static RunConfig parse(const std::string& json_text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  // Inputs readable, output directories creatable and writable.
  void validate_paths() const;
};

// Seed precedence: explicit flag, then config, then ASBD_SEED, then 1.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config);

// Entry point behind tools/asbd. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace asbd

#endif  // ASBD_CLI_HPP
