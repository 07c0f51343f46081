#include "spdnas/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "spdnas/error.hpp"

#ifndef SPDNAS_VERSION_STRING
#define SPDNAS_VERSION_STRING "unknown"
#endif

namespace spdnas {

using json = nlohmann::ordered_json;

namespace {

// Reads members of one JSON object, recording problems instead of throwing.
class Section {
 public:
  Section(const json& j, std::string where, std::vector<std::string>& problems)
      : j_(j), where_(std::move(where)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where_ + ": expected an object");
  }
  ~Section() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) problems_.push_back(name(key) + ": unknown key");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const json& v = j_.at(key);
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_unsigned_v<T>) {
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else {
      ok = v.is_string();
    }
    if (!ok) {
      problems_.push_back(name(key) + ": wrong type (" + v.type_name() + ")");
      return;
    }
    out = v.get<T>();
  }

  // Enum members stored as strings.
  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    bool present = j_.is_object() && j_.contains(key);
    get(key, s);
    if (!present || s.empty()) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      problems_.push_back(name(key) + ": " + e.what());
    }
  }

  // Returns a null json when absent.
  const json& child(const std::string& key) {
    seen_.insert(key);
    static const json kNull;
    if (!j_.is_object() || !j_.contains(key)) return kNull;
    return j_.at(key);
  }

  std::string name(const std::string& key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

void read_wfm(const json& j, const std::string& where, WfmConfig& w, std::vector<std::string>& p) {
  if (j.is_null()) return;
  Section s(j, where, p);
  s.get_enum("solver", w.solver, wfm_solver_from_string);
  s.get("max_iters", w.max_iters);
  s.get("tol", w.tol);
}

json wfm_json(const WfmConfig& w) {
  return {{"solver", to_string(w.solver)}, {"max_iters", w.max_iters}, {"tol", w.tol}};
}

void read_model(const json& j, ModelConfig& m, std::vector<std::string>& p) {
  if (j.is_null()) return;
  Section s(j, "model", p);
  s.get("input_dim", m.input_dim);
  s.get("classes", m.classes);
  s.get("channels", m.channels);
  s.get("nodes", m.nodes);
  s.get("share_op_params", m.share_op_params);
  s.get("reeig_epsilon", m.reeig_epsilon);
  s.get("bn_momentum", m.bn_momentum);
  const json& cells = s.child("cells");
  if (cells.is_null()) return;
  if (!cells.is_array()) {
    p.push_back("model.cells: expected an array");
    return;
  }
  m.cells.clear();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellConfig c;
    Section cs(cells[i], "model.cells[" + std::to_string(i) + "]", p);
    cs.get_enum("kind", c.kind, cell_kind_from_string);
    cs.get("in_dim", c.in_dim);
    cs.get("out_dim", c.out_dim);
    m.cells.push_back(c);
  }
}

json model_to_json(const ModelConfig& m) { return json::parse(model_config_to_json(m)); }

}  // namespace

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> p;
  if (workers < 0) p.push_back("workers must be nonnegative");
  if (data.path.empty()) {
    if (data.synth.classes < 2) p.push_back("data.synth.classes must be at least 2");
    if (data.synth.dim < 2) p.push_back("data.synth.dim must be at least 2");
    if (data.synth.per_class < 1) p.push_back("data.synth.per_class must be at least 1");
    if (!(data.synth.noise >= 0.0)) p.push_back("data.synth.noise must be nonnegative");
    if (data.synth.dim != model.input_dim) {
      p.push_back("data.synth.dim " + std::to_string(data.synth.dim) + " does not match model.input_dim " +
                  std::to_string(model.input_dim));
    }
    if (data.synth.classes != model.classes) {
      p.push_back("data.synth.classes " + std::to_string(data.synth.classes) + " does not match model.classes " +
                  std::to_string(model.classes));
    }
  }
  try {
    data.split.validate();
  } catch (const Error& e) {
    p.push_back(std::string("data.split: ") + e.what());
  }
  for (const std::string& s : model.problems()) p.push_back("model: " + s);
  for (const std::string& s : search.problems()) p.push_back("search: " + s);
  for (const std::string& s : train.problems()) p.push_back("train: " + s);
  return p;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(p.size()) + " problem" + (p.size() > 1 ? "s" : "") + ")";
  for (const std::string& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

int RunConfig::resolved_workers() const {
  if (workers > 0) return workers;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

SearchConfig RunConfig::search_config() const {
  SearchConfig c = search;
  c.seed = seed;
  c.workers = resolved_workers();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c = train;
  c.seed = seed;
  c.workers = resolved_workers();
  return c;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig c = data.synth;
  c.seed = seed;
  return c;
}

SplitSpec RunConfig::split_spec() const {
  SplitSpec s = data.split;
  s.seed = seed;
  return s;
}

std::string run_config_to_json(const RunConfig& c) {
  const SearchConfig& s = c.search;
  const TrainConfig& t = c.train;
  json j{
      {"seed", c.seed},
      {"workers", c.workers},
      {"data",
       {{"path", c.data.path},
        {"synth",
         {{"classes", c.data.synth.classes},
          {"dim", c.data.synth.dim},
          {"per_class", c.data.synth.per_class},
          {"noise", c.data.synth.noise}}},
        {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}}}},
      {"model", model_to_json(c.model)},
      {"search",
       {{"eta", s.eta},
        {"momentum", s.momentum},
        {"alpha",
         {{"lr", s.alpha.lr},
          {"beta1", s.alpha.beta1},
          {"beta2", s.alpha.beta2},
          {"weight_decay", s.alpha.weight_decay},
          {"eps", s.alpha.eps}}},
        {"order", to_string(s.order)},
        {"epochs", s.epochs},
        {"batch_size", s.batch_size},
        {"top_k", s.top_k},
        {"activation", to_string(s.activation)},
        {"wfm", wfm_json(s.wfm)},
        {"delta_scale", s.delta_scale},
        {"ambient_delta_norm", s.ambient_delta_norm}}},
      {"train",
       {{"lr", t.lr},
        {"momentum", t.momentum},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"wfm", wfm_json(t.wfm)}}},
  };
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  // A manifest carries the config it was run with.
  if (root.is_object() && root.contains("config") && root.contains("version")) root = root.at("config");

  RunConfig c;
  std::vector<std::string> p;
  {
    Section top(root, "config", p);
    top.get("seed", c.seed);
    top.get("workers", c.workers);

    const json& data = top.child("data");
    if (!data.is_null()) {
      Section d(data, "data", p);
      d.get("path", c.data.path);
      const json& synth = d.child("synth");
      if (!synth.is_null()) {
        Section s(synth, "data.synth", p);
        s.get("classes", c.data.synth.classes);
        s.get("dim", c.data.synth.dim);
        s.get("per_class", c.data.synth.per_class);
        s.get("noise", c.data.synth.noise);
      }
      const json& split = d.child("split");
      if (!split.is_null()) {
        Section s(split, "data.split", p);
        s.get("train", c.data.split.train);
        s.get("val", c.data.split.val);
        s.get("test", c.data.split.test);
      }
    }

    read_model(top.child("model"), c.model, p);

    const json& search = top.child("search");
    if (!search.is_null()) {
      SearchConfig& sc = c.search;
      Section s(search, "search", p);
      s.get("eta", sc.eta);
      s.get("momentum", sc.momentum);
      const json& alpha = s.child("alpha");
      if (!alpha.is_null()) {
        Section a(alpha, "search.alpha", p);
        a.get("lr", sc.alpha.lr);
        a.get("beta1", sc.alpha.beta1);
        a.get("beta2", sc.alpha.beta2);
        a.get("weight_decay", sc.alpha.weight_decay);
        a.get("eps", sc.alpha.eps);
      }
      s.get_enum("order", sc.order, hyper_order_from_string);
      s.get("epochs", sc.epochs);
      s.get("batch_size", sc.batch_size);
      s.get("top_k", sc.top_k);
      s.get_enum("activation", sc.activation, activation_from_string);
      read_wfm(s.child("wfm"), "search.wfm", sc.wfm, p);
      s.get("delta_scale", sc.delta_scale);
      s.get("ambient_delta_norm", sc.ambient_delta_norm);
    }

    const json& train = top.child("train");
    if (!train.is_null()) {
      TrainConfig& tc = c.train;
      Section s(train, "train", p);
      s.get("lr", tc.lr);
      s.get("momentum", tc.momentum);
      s.get("epochs", tc.epochs);
      s.get("batch_size", tc.batch_size);
      read_wfm(s.child("wfm"), "train.wfm", tc.wfm, p);
    }
  }
  for (const std::string& s : c.problems()) p.push_back(s);
  if (!p.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(p.size()) + " problem" + (p.size() > 1 ? "s" : "") + ")";
    for (const std::string& s : p) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  return c;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(path.string() + ": cannot open configuration");
  std::ostringstream os;
  os << is.rdbuf();
  try {
    return run_config_from_json(os.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Splits load_splits(const RunConfig& cfg) {
  const Dataset d = cfg.data.path.empty() ? synth_generate(cfg.synth_config()) : load_dataset(cfg.data.path);
  return stratified_split(d, cfg.split_spec());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError(tmp.string() + ": cannot open for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw DataError(tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError(path.string() + ": rename failed: " + ec.message());
}

std::string version_string() { return SPDNAS_VERSION_STRING; }

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const EpochMetrics& m : metrics) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.train_loss, m.train_acc, m.val_loss,
                  m.val_acc);
    out += buf;
  }
  return out;
}

}  // namespace spdnas
