// Thin bindings: configs and results cross the boundary as JSON text; the
// Python package turns them into dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "poolcal/errors.hpp"
#include "poolcal/io.hpp"

namespace py = pybind11;
using namespace poolcal;

namespace {

FitConfig parse_config(const std::string& text) {
  return fit_config_from_json(text.empty() ? json::object() : json::parse(text));
}

std::string fit(const std::string& path, const std::string& config, unsigned threads) {
  FitConfig cfg = parse_config(config);
  cfg.options.threads = threads;
  const PooledDataset ds = load_dataset(path, cfg.columns);
  FitResult res;
  LogisticFit naive;
  {
    py::gil_scoped_release release;
    res = fit_with_uncertainty(ds, cfg.options);
    naive = fit_naive(ds, cfg.options.logistic);
  }
  json out = to_json(res, ds);
  out["naive"] = {{"beta_x", naive.beta_x()}, {"se", naive.se_x()}};
  out["summary"] = format_fit_summary(res, naive);
  out["data_warnings"] = ds.warnings();
  return out.dump();
}

std::string calibrate(const std::string& path, const std::string& config, const std::string& icc) {
  FitConfig cfg = parse_config(config);
  if (!icc.empty()) cfg.options.icc = parse_icc_convention(icc);
  const PooledDataset ds = load_dataset(path, cfg.columns);
  ds.require_fit_ready();
  LmmFit lmm;
  {
    py::gil_scoped_release release;
    lmm = fit_lmm(assemble_design(ds), cfg.options.minque);
  }
  const auto values = calibrate_dataset(ds, lmm.params());
  json subjects = json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& r = ds.subjects()[i];
    subjects.push_back({{"subject_id", r.id},
                        {"study", ds.studies()[static_cast<std::size_t>(r.study)].label},
                        {"x_tilde", values[i].x_tilde},
                        {"conditional_variance", values[i].conditional_variance},
                        {"subject_kind", to_string(values[i].kind)}});
  }
  json out = parameters_to_json(lmm, ds, compute_icc(lmm.minque.sigma2, cfg.options.icc), cfg.options.icc);
  out["subjects"] = subjects;
  out["warnings"] = lmm.warnings;
  return out.dump();
}

std::vector<std::string> simulate(const std::string& preset, double prevalence, const std::string& overrides,
                                  std::uint64_t seed, unsigned threads) {
  std::vector<ScenarioConfig> scenarios =
      preset.empty() ? std::vector<ScenarioConfig>{ScenarioConfig{}} : preset_scenarios(preset, prevalence);
  const json doc = overrides.empty() ? json::object() : json::parse(overrides);
  std::vector<std::string> out;
  for (auto& s : scenarios) {
    s = scenario_from_json(doc, s);
    s.seed = seed;
    s.threads = threads;
    ScenarioReport report;
    {
      py::gil_scoped_release release;
      report = run_scenario(s);
    }
    out.push_back(to_json(report).dump());
  }
  return out;
}

void generate(const std::string& overrides, double odds_ratio, std::uint64_t seed, const std::string& path) {
  ScenarioConfig cfg = scenario_from_json(overrides.empty() ? json::object() : json::parse(overrides));
  cfg.validate();
  if (!(odds_ratio > 0.0)) throw ValidationError("odds_ratio must be positive");
  const double beta_x = std::log(odds_ratio);
  Rng irng = child_rng(seed, {1});
  const auto beta0 = solve_intercepts_for_prevalence(cfg, beta_x, irng);
  Rng rng = child_rng(seed, {2});
  write_dataset(path, generate_dataset(cfg, beta_x, beta0, rng).dataset, ',', true);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "poolcal native core";
  m.attr("__version__") = kVersion;

  auto base = py::register_exception<Error>(m, "PoolcalError", PyExc_RuntimeError);
  auto parse = py::register_exception<ParseError>(m, "ParseError", base.ptr());
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  (void)parse;
  (void)validation;
  (void)numerical;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("fit", &fit, py::arg("path"), py::arg("config") = "", py::arg("threads") = 1);
  m.def("calibrate", &calibrate, py::arg("path"), py::arg("config") = "", py::arg("icc") = "");
  m.def("simulate", &simulate, py::arg("preset"), py::arg("prevalence"), py::arg("overrides"),
        py::arg("seed"), py::arg("threads") = 1);
  m.def("generate", &generate, py::arg("overrides"), py::arg("odds_ratio"), py::arg("seed"), py::arg("path"));
  m.def("presets", [] { return preset_names(); });
}
