#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "spdnas/data.hpp"
#include "spdnas/error.hpp"

using namespace spdnas;
using spdnas::testing::diag;
using spdnas::testing::max_abs_diff;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<int, int> class_counts(const std::vector<Sample>& s) {
  std::map<int, int> out;
  for (const Sample& x : s) ++out[x.label];
  return out;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("synthetic samples are SPD, labelled and reproducible") {
    SynthConfig cfg;
    cfg.dim = 6;
    cfg.per_class = 5;
    cfg.seed = 3;
    const Dataset a = synth_generate(cfg);
    CHECK(a.samples.size() == 15);
    CHECK(class_counts(a.samples) == std::map<int, int>{{0, 5}, {1, 5}, {2, 5}});
    for (const Sample& s : a.samples) CHECK(is_spd(s.matrix));
    const Dataset b = synth_generate(cfg);
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].matrix == b.samples[i].matrix);
    cfg.seed = 4;
    CHECK(synth_generate(cfg).samples[0].matrix != a.samples[0].matrix);
    cfg.noise = 0.0;
    const Dataset flat = synth_generate(cfg);
    CHECK(flat.samples[0].matrix == flat.samples[4].matrix);
    cfg.classes = 1;
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
  }

  TEST_CASE("stratified split of 900 samples") {
    SynthConfig cfg;
    cfg.dim = 3;
    cfg.seed = 1;
    const Dataset d = synth_generate(cfg);
    SplitSpec spec;
    spec.seed = 9;
    const Splits s = stratified_split(d, spec);
    CHECK(s.train.size() == 450);
    CHECK(s.val.size() == 225);
    CHECK(s.test.size() == 225);
    CHECK(class_counts(s.train) == std::map<int, int>{{0, 150}, {1, 150}, {2, 150}});
    CHECK(class_counts(s.val) == std::map<int, int>{{0, 75}, {1, 75}, {2, 75}});
    const Splits again = stratified_split(d, spec);
    CHECK(again.val[0].matrix == s.val[0].matrix);
  }

  TEST_CASE("uneven classes use largest remainders") {
    Dataset d;
    d.dim = 2;
    d.classes = 3;
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3 + 2 * c; ++k) d.samples.push_back({(k + 1.0) * Matrix::Identity(2, 2), c});
    }
    // 3 + 5 + 7 = 15 samples; train target round(7.5) = 8.
    const Splits s = stratified_split(d, SplitSpec{});
    CHECK(s.train.size() + s.val.size() + s.test.size() == 15);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 4);
    for (const auto& [c, n] : class_counts(s.train)) CHECK(n >= 1);
  }

  TEST_CASE("split fractions are validated") {
    SplitSpec bad{0.5, 0.5, 0.25, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    SplitSpec zero{1.0, 0.0, 0.0, 0};
    CHECK_THROWS_AS(zero.validate(), ConfigError);
  }

  TEST_CASE("batches cover every index once and depend on seed and epoch") {
    const auto b = batches(95, 30, 1, 0);
    REQUIRE(b.size() == 4);
    CHECK(b[3].size() == 5);
    std::set<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 95);
    CHECK(batches(95, 30, 1, 0) == b);
    CHECK(batches(95, 30, 1, 1) != b);
    CHECK(batches(95, 30, 2, 0) != b);
    const auto ordered = batches(5, 2, 1, 0, false);
    CHECK(ordered == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4}});
    CHECK_THROWS_AS(batches(5, 0, 1, 0), ConfigError);
  }

  TEST_CASE("dataset roundtrip on disk") {
    TempDir dir("spdnas_data_roundtrip");
    SynthConfig cfg;
    cfg.dim = 4;
    cfg.per_class = 3;
    const Dataset d = synth_generate(cfg);
    write_dataset(dir.path, d);
    const Dataset back = load_dataset(dir.path);
    CHECK(back.dim == 4);
    CHECK(back.classes == 3);
    REQUIRE(back.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      CHECK(back.samples[i].label == d.samples[i].label);
      CHECK(max_abs_diff(back.samples[i].matrix, d.samples[i].matrix) == 0.0);
    }
    CHECK(back.notes.empty());
  }

  TEST_CASE("loader errors name the file") {
    TempDir dir("spdnas_data_errors");
    CHECK_THROWS_AS(load_dataset(dir.path / "nope"), DataError);

    Dataset d;
    d.dim = 2;
    d.classes = 2;
    d.samples = {{diag({1.0, 2.0}), 0}, {diag({1.0, 2.0}), 1}};
    write_dataset(dir.path, d);
    {
      std::ofstream os(dir.path / "samples" / "000001.spd", std::ios::binary | std::ios::trunc);
      os << "SPD1";
    }
    try {
      load_dataset(dir.path);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("000001.spd") != std::string::npos);
    }

    write_sample_file(dir.path / "samples" / "000001.spd", diag({1.0, -1.0}));
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);

    write_sample_file(dir.path / "samples" / "000001.spd", diag({1.0, 2.0, 3.0}));
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);

    {
      std::ofstream os(dir.path / "index.json", std::ios::trunc);
      os << "{\"dim\": 2, \"classes\": 2, \"samples\": [{\"path\": \"samples/000000.spd\", \"label\": 5}]}";
    }
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    {
      std::ofstream os(dir.path / "index.json", std::ios::trunc);
      os << "{\"dim\": 2,";
    }
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }

  TEST_CASE("validate_sample lifts near-singular spectra only") {
    std::string note;
    const Matrix lifted = validate_sample(diag({1.0, 0.0}), "s", &note);
    CHECK(lifted(1, 1) == 1e-10);
    CHECK(note.find("lifted") != std::string::npos);
    note.clear();
    CHECK(validate_sample(diag({1.0, 0.5}), "s", &note) == diag({1.0, 0.5}));
    CHECK(note.empty());
    CHECK_THROWS_AS(validate_sample(diag({1.0, -1e-3}), "s", nullptr), DataError);
    Matrix asym(2, 2);
    asym << 1, 0.5, 0, 1;
    CHECK_THROWS_AS(validate_sample(asym, "s", nullptr), DataError);
  }

  TEST_CASE("csv import") {
    TempDir dir("spdnas_data_csv");
    {
      std::ofstream os(dir.path / "x.csv");
      os << "2\n2,0.5\n0.5,1\n";
    }
    Matrix expect(2, 2);
    expect << 2, 0.5, 0.5, 1;
    CHECK(import_csv(dir.path / "x.csv") == expect);
    {
      std::ofstream os(dir.path / "bad.csv");
      os << "2\n2,0.5\n";
    }
    CHECK_THROWS_AS(import_csv(dir.path / "bad.csv"), DataError);
  }
}
