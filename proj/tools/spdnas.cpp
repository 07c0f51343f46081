// spdnas command-line tool: search, derive, train, eval, synth-data,
// gradcheck, export-dot.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "spdnas/config.hpp"
#include "spdnas/error.hpp"
#include "spdnas/gradcheck.hpp"
#include "spdnas/log.hpp"
#include "spdnas/params.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spdnas;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  return cfg;
}

// A manifest given as --config may also carry the genotype it ran with.
std::optional<Genotype> manifest_genotype(const std::string& config_path) {
  if (config_path.empty()) return std::nullopt;
  const json j = json::parse(read_text_file(config_path), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("version") || !j.contains("genotype")) return std::nullopt;
  return genotype_from_json(j.at("genotype").dump());
}

Genotype load_genotype(const std::string& path, const Common& c) {
  if (!path.empty()) {
    std::string text;
    try {
      text = read_text_file(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    return genotype_from_json(text);
  }
  if (auto g = manifest_genotype(c.config)) return *g;
  throw ConfigError("no genotype: pass --genotype or a manifest that contains one");
}

fs::path out_dir(const Common& c, const char* fallback) {
  const fs::path dir = c.out.empty() ? fs::path(fallback) : fs::path(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(dir.string() + ": cannot create output directory: " + ec.message());
  return dir;
}

json metrics_json(const std::vector<EpochMetrics>& ms) {
  json a = json::array();
  for (const EpochMetrics& m : ms) {
    a.push_back({{"epoch", m.epoch},
                 {"train_loss", m.train_loss},
                 {"train_acc", m.train_acc},
                 {"val_loss", m.val_loss},
                 {"val_acc", m.val_acc},
                 {"min_eig", m.min_eig},
                 {"seconds", m.seconds},
                 {"second_order_skips", m.second_order_skips}});
  }
  return a;
}

json report_json(const ParamReport& r) { return {{"count", r.count}, {"megabytes", r.megabytes}}; }

ParamReport discrete_report(const Genotype& g) {
  ParamStore ps;
  Rng init = substream(0, "report");
  Network::discrete(g, ps, init);
  return param_report(ps);
}

json manifest_base(const char* command, const RunConfig& cfg) {
  return {{"version", version_string()},
          {"command", command},
          {"seed", cfg.seed},
          {"config", json::parse(run_config_to_json(cfg))},
          {"conventions",
           {{"aggregation_gradient", "differentiated through the unrolled Karcher iterations"},
            {"cell_inputs", "two parallel preprocessing BiMaps on the previous cell output"},
            {"hypergradient_batch", "one training batch reused for w+ and w-"},
            {"hypergradient_norm_mode", "batch-norm running means frozen"}}}};
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_manifest(const fs::path& dir, const json& m) { write_file_atomic(dir / "manifest.json", m.dump(2) + "\n"); }

int cmd_search(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = out_dir(c, "search_out");
  const auto t0 = std::chrono::steady_clock::now();
  const Splits data = load_splits(cfg);
  log::info("search: " + std::to_string(data.train.size()) + " train / " + std::to_string(data.val.size()) +
            " val samples");
  const SearchResult r = search_loop(data, cfg.model, cfg.search_config());

  write_file_atomic(dir / "genotype.json", genotype_to_json(r.genotype));
  write_file_atomic(dir / "alpha_history.csv", r.alpha_csv);
  write_file_atomic(dir / "metrics.csv", metrics_csv(r.metrics));
  save_checkpoint(dir / "supernet.ckpt", r.params);
  json m = manifest_base("search", cfg);
  m["metrics"] = metrics_json(r.metrics);
  m["wall_time_seconds"] = since(t0);
  m["genotype"] = json::parse(genotype_to_json(r.genotype));
  m["param_report"] = report_json(discrete_report(r.genotype));
  m["supernet_param_report"] = report_json(param_report(r.params));
  write_manifest(dir, m);
  std::cout << genotype_to_json(r.genotype);
  return 0;
}

int cmd_derive(const Common& c, const std::string& checkpoint) {
  const RunConfig cfg = resolve_config(c);
  if (checkpoint.empty()) throw ConfigError("derive needs --checkpoint (a supernet checkpoint)");
  const fs::path dir = out_dir(c, "derive_out");
  ParamStore ps;
  Rng init = substream(cfg.seed, "init");
  Network::supernet(cfg.model, ps, init, cfg.search.activation);
  load_checkpoint(checkpoint, ps);
  const Genotype g = derive_genotype(ps, cfg.model, cfg.search.activation, cfg.search.top_k);
  write_file_atomic(dir / "genotype.json", genotype_to_json(g));
  json m = manifest_base("derive", cfg);
  m["checkpoint"] = checkpoint;
  m["genotype"] = json::parse(genotype_to_json(g));
  m["param_report"] = report_json(discrete_report(g));
  write_manifest(dir, m);
  std::cout << genotype_to_json(g);
  return 0;
}

int cmd_train(const Common& c, const std::string& genotype_path) {
  const RunConfig cfg = resolve_config(c);
  const Genotype g = load_genotype(genotype_path, c);
  const fs::path dir = out_dir(c, "train_out");
  const auto t0 = std::chrono::steady_clock::now();
  const Splits data = load_splits(cfg);
  const TrainResult r = train_loop(data, g, cfg.train_config());

  write_file_atomic(dir / "metrics.csv", metrics_csv(r.metrics));
  save_checkpoint(dir / "model.ckpt", r.params);
  write_file_atomic(dir / "genotype.json", genotype_to_json(g));
  json m = manifest_base("train", cfg);
  m["metrics"] = metrics_json(r.metrics);
  m["test"] = {{"loss", r.test.loss}, {"accuracy", r.test.accuracy}, {"count", r.test.count}};
  m["wall_time_seconds"] = since(t0);
  m["genotype"] = json::parse(genotype_to_json(g));
  m["param_report"] = report_json(param_report(r.params));
  write_manifest(dir, m);
  std::printf("test_loss %.6f test_acc %.6f (%zu samples)\n", r.test.loss, r.test.accuracy, r.test.count);
  return 0;
}

int cmd_eval(const Common& c, const std::string& genotype_path, const std::string& checkpoint) {
  const RunConfig cfg = resolve_config(c);
  const Genotype g = load_genotype(genotype_path, c);
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  ParamStore ps;
  Rng init = substream(cfg.seed, "init");
  const Network net = Network::discrete(g, ps, init);
  load_checkpoint(checkpoint, ps);
  const Splits data = load_splits(cfg);
  check_sample_dims(data.test, g.model, "test");
  const TrainConfig tc = cfg.train_config();
  const EvalResult r = evaluate(net, ps, data.test, tc.wfm, tc.batch_size, tc.workers);
  std::printf("test_loss %.6f test_acc %.6f (%zu samples)\n", r.loss, r.accuracy, r.count);
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c, "");
    json m = manifest_base("eval", cfg);
    m["checkpoint"] = checkpoint;
    m["genotype"] = json::parse(genotype_to_json(g));
    m["test"] = {{"loss", r.loss}, {"accuracy", r.accuracy}, {"count", r.count}};
    write_manifest(dir, m);
  }
  return 0;
}

int cmd_synth(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = out_dir(c, "synth_data");
  const Dataset d = synth_generate(cfg.synth_config());
  write_dataset(dir, d);
  json m = manifest_base("synth-data", cfg);
  m["samples"] = d.samples.size();
  write_manifest(dir, m);
  std::printf("wrote %zu samples (%d classes, %ldx%ld) to %s\n", d.samples.size(), d.classes,
              static_cast<long>(d.dim), static_cast<long>(d.dim), dir.string().c_str());
  return 0;
}

int cmd_gradcheck(const Common& c, bool inject_fault) {
  const std::uint64_t seed = c.seed.value_or(0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = gradcheck_suite(seed, inject_fault);
  std::vector<std::string> failed;
  for (const GradcheckReport& r : reports) {
    std::printf("%-30s %s  worst rel error %.3e over %zu coords", r.name.c_str(), r.passed ? "ok  " : "FAIL",
                r.max_rel_error, r.coords);
    if (!r.error.empty()) std::printf("  error: %s", r.error.c_str());
    std::printf("\n");
    if (!r.passed) failed.push_back(r.name);
  }
  std::printf("%zu/%zu passed in %.1f s\n", reports.size() - failed.size(), reports.size(), since(t0));
  if (failed.empty()) return 0;
  std::string names;
  for (const std::string& f : failed) names += (names.empty() ? "" : ", ") + f;
  std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
  return kExitFailure;
}

int cmd_export_dot(const Common& c, const std::string& genotype_path) {
  const Genotype g = load_genotype(genotype_path, c);
  const std::string dot = export_dot(g);
  if (c.out.empty()) {
    std::cout << dot;
  } else {
    write_file_atomic(c.out, dot);
  }
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_out = true) {
  sub->add_option("--config", c.config, "Run configuration or manifest (JSON)");
  sub->add_option("--seed", c.seed, "Seed for every random stream (overrides the config)");
  sub->add_option("--workers", c.workers, "Batch-evaluation workers (default: hardware threads)")
      ->check(CLI::NonNegativeNumber);
  if (with_out) sub->add_option("--out", c.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search on SPD manifolds"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  Common c;
  std::string genotype, checkpoint;
  bool inject_fault = false;

  auto* search = app.add_subcommand("search", "Run the bi-level architecture search");
  add_common(search, c);
  auto* derive = app.add_subcommand("derive", "Derive a genotype from a supernet checkpoint");
  add_common(derive, c);
  derive->add_option("--checkpoint", checkpoint, "Supernet checkpoint")->required();
  auto* train = app.add_subcommand("train", "Train a genotype from scratch");
  add_common(train, c);
  train->add_option("--genotype", genotype, "Genotype JSON");
  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint on the test split");
  add_common(eval, c);
  eval->add_option("--genotype", genotype, "Genotype JSON");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset directory");
  add_common(synth, c);
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  add_common(grad, c, false);
  grad->add_flag("--inject-fault", inject_fault, "Append a case with a deliberately wrong backward");
  auto* dot = app.add_subcommand("export-dot", "Render a genotype as Graphviz DOT");
  add_common(dot, c);
  dot->add_option("--genotype", genotype, "Genotype JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*search) return cmd_search(c);
    if (*derive) return cmd_derive(c, checkpoint);
    if (*train) return cmd_train(c, genotype);
    if (*eval) return cmd_eval(c, genotype, checkpoint);
    if (*synth) return cmd_synth(c);
    if (*grad) return cmd_gradcheck(c, inject_fault);
    if (*dot) return cmd_export_dot(c, genotype);
  } catch (const ConfigError& e) {
    log::error(std::string("configuration error: ") + e.what());
    return kExitConfig;
  } catch (const ShapeError& e) {
    log::error(std::string("configuration error: ") + e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    log::error(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const NumericError& e) {
    log::error(std::string("numeric abort: ") + e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
