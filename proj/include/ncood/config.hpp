#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncood/benchmark.hpp"
#include "ncood/trainer.hpp"

namespace ncood {

// Everything a `train` run needs. Text form is one `key = value` per line with
// `#` comments; unknown or repeated keys are rejected.
struct RunConfig {
  TrainConfig train;
  WarmupConfig warmup;
  std::vector<std::size_t> hidden_dims{128};
  std::size_t feature_dim = 16;

  // Generator parameters used by gen-data.
  BenchmarkSpec data;
  std::uint64_t data_seed = 0;

  // Relative paths are resolved against the config file's directory.
  std::filesystem::path id_train = "id_train.csv";
  std::filesystem::path ood_aux = "ood_aux.csv";
  std::optional<std::filesystem::path> init_checkpoint;
  std::filesystem::path out_dir = "out";

  void validate() const;
  std::vector<std::size_t> layer_dims(std::size_t input_dim) const;
};

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical text form; parse_run_config(to_text(c)) == c up to path resolution.
std::string to_text(const RunConfig& config);

// Documented keys, in to_text order.
std::vector<std::string> run_config_keys();

}  // namespace ncood
