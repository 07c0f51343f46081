#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spdnas/manifold.hpp"

namespace spdnas {

struct Sample {
  Matrix matrix;
  int label = 0;
};

struct Dataset {
  Eigen::Index dim = 0;
  int classes = 0;
  std::vector<Sample> samples;
  // One line per sample whose spectrum had to be lifted on load.
  std::vector<std::string> notes;
};

/// Directory layout:
///   index.json  {"dim": n, "classes": C, "samples": [{"path": "...", "label": k}, ...]}
///   sample files: "SPD1" | u32 n | n·n f64, little-endian, row-major
/// Paths in the index are relative to the directory.
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

Matrix read_sample_file(const std::filesystem::path& path);
void write_sample_file(const std::filesystem::path& path, const Matrix& x);
// First line: n. Then n lines of n comma-separated reals.
Matrix import_csv(const std::filesystem::path& path);

// Symmetrizes and checks positive definiteness. Spectra within 1e-10 below
// the positivity floor are lifted by 1e-10·I (the returned note says so);
// anything worse is a DataError naming `what`.
Matrix validate_sample(const Matrix& x, const std::string& what, std::string* note);

struct SynthConfig {
  int classes = 3;
  Eigen::Index dim = 20;
  int per_class = 300;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

/// Class c has base B_c = A_c A_cᵀ + I (A_c standard normal); each sample is
/// exp_map(B_c, σ·S) with S symmetric, entries standard normal divided by n.
Dataset synth_generate(const SynthConfig& cfg);

struct SplitSpec {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Stratified by class. Per split, per-class quotas are floors of the targets
// topped up by largest remainder until the split total matches its rounded
// global target; test takes what is left.
Splits stratified_split(const Dataset& data, const SplitSpec& spec);

// Index batches for one epoch: a seeded permutation cut into runs of
// batch_size, the final short batch kept. shuffle = false keeps order.
std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch,
                                              bool shuffle = true);

}  // namespace spdnas
