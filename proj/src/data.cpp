#include "spdnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spdnas/binary_io.hpp"
#include "spdnas/error.hpp"
#include "spdnas/rng.hpp"

namespace spdnas {

using nlohmann::json;
namespace fs = std::filesystem;

Matrix read_sample_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open sample file");
  binio::Reader r(is, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "SPD1") r.fail("bad magic (expected SPD1)");
  const std::uint32_t n = r.u32("dimension");
  if (n == 0 || n > 100000) r.fail("implausible dimension " + std::to_string(n));
  Matrix x(n, n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = r.f64("matrix entry");
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return x;
}

void write_sample_file(const fs::path& path, const Matrix& x) {
  if (x.rows() != x.cols()) throw ShapeError("write_sample_file: matrix is not square");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os.write("SPD1", 4);
  binio::put_u32(os, static_cast<std::uint32_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) binio::put_f64(os, x(i, j));
  }
  if (!os) throw DataError(path.string() + ": write failed");
}

Matrix import_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path.string() + ": cannot open CSV file");
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
  long n = 0;
  try {
    n = std::stol(line);
  } catch (const std::exception&) {
    throw DataError(path.string() + ":1: expected the dimension, got '" + line + "'");
  }
  if (n <= 0) throw DataError(path.string() + ":1: dimension must be positive");
  Matrix x(n, n);
  for (long i = 0; i < n; ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 2);
    if (!std::getline(is, line)) throw DataError(where + ": missing row");
    std::stringstream ss(line);
    std::string cell;
    long j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= n) throw DataError(where + ": more than " + std::to_string(n) + " values");
      try {
        std::size_t used = 0;
        x(i, j) = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw DataError(where + ": column " + std::to_string(j + 1) + " is not a number: '" + cell + "'");
      }
      ++j;
    }
    if (j != n) throw DataError(where + ": expected " + std::to_string(n) + " values, got " + std::to_string(j));
  }
  return x;
}

Matrix validate_sample(const Matrix& x, const std::string& what, std::string* note) {
  if (x.rows() != x.cols()) throw DataError(what + ": matrix is not square");
  if (!x.allFinite()) throw DataError(what + ": non-finite entries");
  if (!is_symmetric(x)) throw DataError(what + ": matrix is not symmetric");
  Matrix s = symmetrize(x);
  const double lo = sym_eig(s).values.minCoeff();
  if (lo <= -1e-10) {
    throw DataError(what + ": not positive definite (smallest eigenvalue " + std::to_string(lo) + ")");
  }
  if (lo <= kEigenFloor) {
    s += 1e-10 * Matrix::Identity(s.rows(), s.cols());
    if (note) {
      std::ostringstream os;
      os << what << ": smallest eigenvalue " << lo << " lifted by 1e-10";
      *note = os.str();
    }
  }
  return s;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path index = dir / "index.json";
  std::ifstream is(index);
  if (!is) throw DataError(index.string() + ": cannot open dataset index");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(index.string() + ": " + e.what());
  }
  Dataset d;
  try {
    d.dim = j.at("dim").get<Eigen::Index>();
    d.classes = j.at("classes").get<int>();
    if (d.dim < 1) throw DataError(index.string() + ": dim must be positive");
    if (d.classes < 1) throw DataError(index.string() + ": classes must be positive");
    std::set<int> seen;
    for (const json& s : j.at("samples")) {
      const fs::path p = dir / s.at("path").get<std::string>();
      const int label = s.at("label").get<int>();
      if (label < 0 || label >= d.classes) {
        throw DataError(p.string() + ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(d.classes) + ")");
      }
      Matrix x = read_sample_file(p);
      if (x.rows() != d.dim) {
        throw DataError(p.string() + ": dimension " + std::to_string(x.rows()) + " differs from index dim " +
                        std::to_string(d.dim));
      }
      std::string note;
      x = validate_sample(x, p.string(), &note);
      if (!note.empty()) d.notes.push_back(note);
      d.samples.push_back({std::move(x), label});
      seen.insert(label);
    }
    if (static_cast<int>(seen.size()) != d.classes) {
      throw DataError(index.string() + ": labels are not contiguous from 0 (" + std::to_string(seen.size()) +
                      " distinct labels for " + std::to_string(d.classes) + " classes)");
    }
  } catch (const json::exception& e) {
    throw DataError(index.string() + ": " + e.what());
  }
  return d;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "samples");
  json samples = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "samples/%06zu.spd", i);
    write_sample_file(dir / name, data.samples[i].matrix);
    samples.push_back({{"path", name}, {"label", data.samples[i].label}});
  }
  const json index = {{"dim", data.dim}, {"classes", data.classes}, {"samples", samples}};
  std::ofstream os(dir / "index.json", std::ios::trunc);
  if (!os) throw DataError((dir / "index.json").string() + ": cannot open for writing");
  os << index.dump(1) << "\n";
}

Dataset synth_generate(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synth: classes must be at least 2");
  if (cfg.dim < 2) throw ConfigError("synth: dim must be at least 2");
  if (cfg.per_class < 1) throw ConfigError("synth: per_class must be positive");
  if (!(cfg.noise >= 0.0)) throw ConfigError("synth: noise must be nonnegative");
  Rng rng = substream(cfg.seed, "synth");
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index n = cfg.dim;
  Dataset d;
  d.dim = n;
  d.classes = cfg.classes;
  for (int c = 0; c < cfg.classes; ++c) {
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = normal(rng);
    }
    const Matrix base = symmetrize(a * a.transpose() + Matrix::Identity(n, n));
    for (int k = 0; k < cfg.per_class; ++k) {
      Matrix s(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) s(i, j) = s(j, i) = normal(rng) / static_cast<double>(n);
      }
      Matrix x = cfg.noise == 0.0 ? base : exp_map(base, cfg.noise * s);
      d.samples.push_back({std::move(x), c});
    }
  }
  return d;
}

void SplitSpec::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

namespace {

// Per-class quotas for one split fraction, capped by what is still free.
std::vector<std::size_t> quotas(const std::vector<std::size_t>& sizes, const std::vector<std::size_t>& free,
                                double frac) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  const auto target = static_cast<std::size_t>(std::llround(frac * static_cast<double>(total)));
  std::vector<std::size_t> q(sizes.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t sum = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double t = frac * static_cast<double>(sizes[c]);
    q[c] = std::min(static_cast<std::size_t>(std::floor(t)), free[c]);
    sum += q[c];
    rem.emplace_back(t - std::floor(t), c);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [r, c] : rem) {
    if (sum >= target) break;
    if (q[c] < free[c]) {
      ++q[c];
      ++sum;
    }
  }
  return q;
}

}  // namespace

Splits stratified_split(const Dataset& data, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.classes));
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int l = data.samples[i].label;
    if (l < 0 || l >= data.classes) throw DataError("sample " + std::to_string(i) + " has label out of range");
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  Rng rng = substream(spec.seed, "split");
  for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::size_t> sizes, free;
  for (const auto& idx : by_class) sizes.push_back(idx.size());
  free = sizes;
  const auto qt = quotas(sizes, free, spec.train);
  for (std::size_t c = 0; c < free.size(); ++c) free[c] -= qt[c];
  const auto qv = quotas(sizes, free, spec.val);

  Splits out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& idx = by_class[c];
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Sample& s = data.samples[idx[k]];
      if (k < qt[c]) {
        out.train.push_back(s);
      } else if (k < qt[c] + qv[c]) {
        out.val.push_back(s);
      } else {
        out.test.push_back(s);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch, bool shuffle) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng = substream(seed, "shuffle." + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return out;
}

}  // namespace spdnas
