#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spdnas/bilevel.hpp"
#include "spdnas/config.hpp"
#include "spdnas/error.hpp"
#include "spdnas/frechet.hpp"
#include "spdnas/gradcheck.hpp"
#include "spdnas/layers.hpp"
#include "spdnas/random.hpp"
#include "spdnas/simplex.hpp"
#include "spdnas/stiefel.hpp"

namespace py = pybind11;
using namespace spdnas;

namespace {

py::dict wfm_dict(const WfmResult& r) {
  py::dict d;
  d["mean"] = r.mean;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  d["residual"] = r.residual;
  return d;
}

py::list metrics_list(const std::vector<EpochMetrics>& ms) {
  py::list out;
  for (const EpochMetrics& m : ms) {
    py::dict d;
    d["epoch"] = m.epoch;
    d["train_loss"] = m.train_loss;
    d["train_acc"] = m.train_acc;
    d["val_loss"] = m.val_loss;
    d["val_acc"] = m.val_acc;
    d["min_eig"] = m.min_eig;
    d["seconds"] = m.seconds;
    out.append(d);
  }
  return out;
}

Vector to_weights(const std::vector<double>& w) { return Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SPD manifold layers and differentiable architecture search";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  m.attr("__version__") = version_string();

  // Manifold geometry.
  m.def("sym_eig", [](const Matrix& s) {
    const EigDecomp d = sym_eig(s);
    return py::make_tuple(d.values, d.vectors);
  }, py::arg("s"), "Eigenvalues (descending) and eigenvectors of a symmetric matrix.");
  m.def("is_spd", &is_spd, py::arg("x"));
  m.def("spd_distance", &spd_distance, py::arg("x1"), py::arg("x2"));
  m.def("exp_map", &exp_map, py::arg("base"), py::arg("tangent"));
  m.def("log_map", &log_map, py::arg("base"), py::arg("point"));
  m.def("logm", [](const Matrix& x) { return spd_fn(x, MatrixFunction::log()); }, py::arg("x"));
  m.def("expm", [](const Matrix& s) { return spd_fn(s, MatrixFunction::exp()); }, py::arg("s"));
  m.def("sqrtm", [](const Matrix& x) { return spd_fn(x, MatrixFunction::sqrt()); }, py::arg("x"));
  m.def("powm", [](const Matrix& x, double p) { return spd_fn(x, MatrixFunction::power(p)); }, py::arg("x"),
        py::arg("p"));
  m.def("transport", [](const Matrix& x, const Matrix& a, bool toward_identity) {
    return congruence_transport(x, a, toward_identity ? Transport::kTowardIdentity : Transport::kFromIdentity);
  }, py::arg("x"), py::arg("a"), py::arg("toward_identity") = true);
  m.def("random_spd", [](Eigen::Index n, double cond, std::uint64_t seed) {
    Rng rng = substream(seed, "python.random_spd");
    return random_spd(n, rng, cond);
  }, py::arg("n"), py::arg("cond") = 10.0, py::arg("seed") = 0);

  // Fréchet means.
  m.def("karcher_wfm", [](const std::vector<Matrix>& pts, const std::vector<double>& w, int max_iters, double tol) {
    return wfm_dict(karcher_wfm(pts, to_weights(w), {WfmSolver::kKarcher, max_iters, tol}));
  }, py::arg("points"), py::arg("weights"), py::arg("max_iters") = 10, py::arg("tol") = 1e-6);
  m.def("recursive_wfm", [](const std::vector<Matrix>& pts, const std::vector<double>& w) {
    return wfm_dict(recursive_wfm(pts, to_weights(w)));
  }, py::arg("points"), py::arg("weights"));

  // Simplex maps.
  m.def("sparsemax", &sparsemax, py::arg("z"));
  m.def("softmax", &softmax, py::arg("z"));
  m.def("normalized_sigmoid", &normalized_sigmoid, py::arg("z"));

  // Layers (forward only).
  m.def("bimap", &bimap_forward, py::arg("x"), py::arg("w"));
  m.def("reeig", [](const Matrix& x, double eps) { return reeig_forward(x, {eps}); }, py::arg("x"),
        py::arg("epsilon") = 1e-4);
  m.def("logeig", &logeig_forward, py::arg("x"));
  m.def("expeig", &expeig_forward, py::arg("s"));
  m.def("avg_pool_reduced", &avg_pool_reduced, py::arg("x"), py::arg("kernel"));
  m.def("max_pool_reduced", &max_pool_reduced, py::arg("x"), py::arg("kernel"));

  // Stiefel manifold.
  m.def("random_stiefel", [](Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    Rng rng = substream(seed, "python.random_stiefel");
    return random_stiefel(n, p, rng);
  }, py::arg("n"), py::arg("p"), py::arg("seed") = 0);
  m.def("qr_retract", &qr_retract, py::arg("a"));
  m.def("riem_sgd_step", &riem_sgd_step, py::arg("w"), py::arg("grad"), py::arg("lr"));
  m.def("orthonormality_error", &orthonormality_error, py::arg("w"));

  // Data.
  m.def("synth_generate", [](int classes, Eigen::Index dim, int per_class, double noise, std::uint64_t seed) {
    const Dataset d = synth_generate({classes, dim, per_class, noise, seed});
    std::vector<Matrix> xs;
    std::vector<int> ys;
    for (const Sample& s : d.samples) {
      xs.push_back(s.matrix);
      ys.push_back(s.label);
    }
    return py::make_tuple(xs, ys);
  }, py::arg("classes") = 3, py::arg("dim") = 20, py::arg("per_class") = 300, py::arg("noise") = 0.5,
        py::arg("seed") = 0);

  // Genotypes.
  m.def("export_dot", [](const std::string& genotype_json) { return export_dot(genotype_from_json(genotype_json)); },
        py::arg("genotype_json"));
  m.def("param_report", [](const std::string& genotype_json) {
    ParamStore ps;
    Rng init = substream(0, "python.param_report");
    Network::discrete(genotype_from_json(genotype_json), ps, init);
    const ParamReport r = param_report(ps);
    return py::make_tuple(r.count, r.megabytes);
  }, py::arg("genotype_json"), "Learnable parameter count and megabytes (4 bytes per real).");

  // Whole runs, driven by the same JSON configuration as the command line.
  m.def("default_config", [] { return run_config_to_json(RunConfig{}); });
  m.def("search", [](const std::string& config_json) {
    const RunConfig cfg = run_config_from_json(config_json);
    cfg.validate();
    SearchResult r;
    {
      py::gil_scoped_release release;
      const Splits sp = load_splits(cfg);
      r = search_loop(sp, cfg.model, cfg.search_config());
    }
    py::dict d;
    d["genotype"] = genotype_to_json(r.genotype);
    d["metrics"] = metrics_list(r.metrics);
    d["alpha_csv"] = r.alpha_csv;
    return d;
  }, py::arg("config_json"));
  m.def("train", [](const std::string& config_json, const std::string& genotype_json) {
    const RunConfig cfg = run_config_from_json(config_json);
    cfg.validate();
    const Genotype g = genotype_from_json(genotype_json);
    TrainResult r;
    {
      py::gil_scoped_release release;
      const Splits sp = load_splits(cfg);
      r = train_loop(sp, g, cfg.train_config());
    }
    py::dict d;
    d["metrics"] = metrics_list(r.metrics);
    d["test_loss"] = r.test.loss;
    d["test_acc"] = r.test.accuracy;
    return d;
  }, py::arg("config_json"), py::arg("genotype_json"));

  m.def("gradcheck_suite", [](std::uint64_t seed) {
    std::vector<GradcheckReport> reports;
    {
      py::gil_scoped_release release;
      reports = gradcheck_suite(seed);
    }
    py::list out;
    for (const auto& r : reports) {
      py::dict d;
      d["name"] = r.name;
      d["max_rel_error"] = r.max_rel_error;
      d["passed"] = r.passed;
      d["error"] = r.error;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 0);
}
