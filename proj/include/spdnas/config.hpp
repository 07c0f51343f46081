#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spdnas/bilevel.hpp"
#include "spdnas/data.hpp"
#include "spdnas/search_space.hpp"

namespace spdnas {

struct DataConfig {
  // Dataset directory (index.json + samples); empty selects the generator.
  std::string path;
  // The generator's seed is ignored in favour of the run seed.
  SynthConfig synth;
  SplitSpec split;
};

// Everything a command needs, defaulted to the RADAR-scale recipe. One seed
// drives every random stream of a run.
struct RunConfig {
  std::uint64_t seed = 0;
  // Batch-evaluation fan-out; 0 means one per hardware thread.
  int workers = 0;
  DataConfig data;
  ModelConfig model;
  SearchConfig search;
  TrainConfig train;

  std::vector<std::string> problems() const;
  // Throws one ConfigError listing every problem.
  void validate() const;

  int resolved_workers() const;
  // Sub-configs with the run seed and worker count filled in.
  SearchConfig search_config() const;
  TrainConfig train_config() const;
  SynthConfig synth_config() const;
  SplitSpec split_spec() const;
};

std::string run_config_to_json(const RunConfig& cfg);
// Accepts a bare config or a run manifest (its "config" member). Unknown
// keys and type errors are collected and reported together as ConfigError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Loads or generates the dataset named by the config and splits it.
Splits load_splits(const RunConfig& cfg);

// Writes `content` next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

std::string version_string();

// metrics.csv: epoch,train_loss,train_acc,val_loss,val_acc
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace spdnas
