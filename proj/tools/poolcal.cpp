// poolcal: fit, calibrate, simulate and report from the command line.
//
// Exit codes: 0 success, 2 invalid input or arguments, 3 numerical failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "poolcal/calibration.hpp"
#include "poolcal/data.hpp"
#include "poolcal/errors.hpp"
#include "poolcal/io.hpp"
#include "poolcal/mixed_model.hpp"
#include "poolcal/simulation.hpp"
#include "poolcal/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace poolcal;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

template <class F>
int guarded(const char* command, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    std::cerr << "poolcal " << command << ": numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ParseError& e) {
    std::cerr << "poolcal " << command << ": parse error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& e) {
    std::cerr << "poolcal " << command << ": invalid input: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    std::cerr << "poolcal " << command << ": invalid JSON: " << e.what() << "\n";
    return kExitInput;
  }
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

void write_json(const std::string& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

FitConfig load_fit_config(const std::string& path) {
  return path.empty() ? FitConfig{} : fit_config_from_json(read_json_file(path));
}

struct FitArgs {
  std::string data, config, out, summary, diagnostics, manifest;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int cmd_fit(const FitArgs& a) {
  RunManifest manifest;
  manifest.command = "fit";
  manifest.started = utc_timestamp();
  FitConfig cfg = load_fit_config(a.config);
  if (a.seed) cfg.options.seed = *a.seed;
  cfg.options.threads = a.threads == 0 ? default_threads() : a.threads;

  const PooledDataset ds = load_dataset(a.data, cfg.columns);
  const FitResult res = fit_with_uncertainty(ds, cfg.options);
  const LogisticFit naive = fit_naive(ds, cfg.options.logistic);

  const std::string summary = format_fit_summary(res, naive);
  std::cout << summary;
  for (const auto& w : ds.warnings()) std::cerr << "warning: data: " << w << "\n";
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";

  if (!a.out.empty()) {
    write_json(a.out, to_json(res, ds));
    manifest.outputs.push_back(a.out);
  }
  if (!a.summary.empty()) {
    write_text_file(a.summary, summary);
    manifest.outputs.push_back(a.summary);
  }
  if (!a.diagnostics.empty()) {
    write_json(a.diagnostics, lmm_diagnostics(assemble_design(ds), res.lmm, ds));
    manifest.outputs.push_back(a.diagnostics);
  }
  if (!a.manifest.empty()) {
    manifest.config_path = a.config;
    manifest.config_hash = hex64(fnv1a64(to_json(cfg).dump()));
    manifest.seed = cfg.options.seed;
    manifest.inputs.emplace_back(a.data, file_hash(a.data));
    for (const auto& w : ds.warnings()) manifest.warnings.push_back("data: " + w);
    manifest.warnings.insert(manifest.warnings.end(), res.warnings.begin(), res.warnings.end());
    manifest.finished = utc_timestamp();
    write_json(a.manifest, to_json(manifest));
  }
  return 0;
}

struct CalibrateArgs {
  std::string data, config, out, params, icc;
};

int cmd_calibrate(const CalibrateArgs& a) {
  FitConfig cfg = load_fit_config(a.config);
  if (!a.icc.empty()) cfg.options.icc = parse_icc_convention(a.icc);
  const PooledDataset ds = load_dataset(a.data, cfg.columns);
  ds.require_fit_ready();
  const LmmFit lmm = fit_lmm(assemble_design(ds), cfg.options.minque);
  const auto values = calibrate_dataset(ds, lmm.params());

  std::ofstream out(a.out);
  if (!out) throw ValidationError("cannot write '" + a.out + "'");
  write_calibration_csv(out, ds, values);
  if (!a.params.empty())
    write_json(a.params, parameters_to_json(lmm, ds, compute_icc(lmm.minque.sigma2, cfg.options.icc),
                                            cfg.options.icc));
  for (const auto& w : ds.warnings()) std::cerr << "warning: data: " << w << "\n";
  for (const auto& w : lmm.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "calibrated " << values.size() << " subjects -> " << a.out << "\n";
  return 0;
}

struct SimulateArgs {
  std::vector<std::string> presets;
  std::string config, out_dir;
  double prevalence = 0.10;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool replicate_records = false;
};

int cmd_simulate(const SimulateArgs& a) {
  if (!a.seed) throw ValidationError("simulate needs --seed");
  RunManifest manifest;
  manifest.command = "simulate";
  manifest.started = utc_timestamp();
  manifest.seed = a.seed;
  for (const auto& p : a.presets)
    if (std::find(preset_names().begin(), preset_names().end(), p) == preset_names().end())
      throw ValidationError("unknown preset '" + p + "'");

  std::vector<ScenarioConfig> scenarios;
  if (a.presets.empty()) {
    if (a.config.empty()) throw ValidationError("choose a preset or pass --config");
    scenarios.push_back(ScenarioConfig{});
  }
  for (const auto& p : a.presets)
    for (auto& s : preset_scenarios(p, a.prevalence)) scenarios.push_back(std::move(s));
  if (!a.config.empty()) {
    const json doc = read_json_file(a.config);
    for (auto& s : scenarios) s = scenario_from_json(doc, s);
    manifest.config_path = a.config;
  }
  json canonical = json::array();
  for (auto& s : scenarios) {
    s.seed = *a.seed;
    s.threads = a.threads == 0 ? default_threads() : a.threads;
    s.validate();
    canonical.push_back(to_json(s));
  }
  manifest.config_hash = hex64(fnv1a64(canonical.dump()));
  if (!a.config.empty()) manifest.inputs.emplace_back(a.config, file_hash(a.config));

  fs::create_directories(a.out_dir);
  std::vector<MetricsRow> all_rows;
  json details = json::array();
  bool ok = true;
  for (const auto& s : scenarios) {
    std::cerr << "running " << s.name << " (" << s.replicates << " replicates x "
              << s.odds_ratios.size() << " odds ratios)\n";
    const ScenarioReport report = run_scenario(s);
    const std::string stem = (fs::path(a.out_dir) / s.name).string();
    std::ostringstream csv;
    write_metrics_csv(csv, report.rows);
    write_text_file(stem + ".csv", csv.str());
    write_json(stem + ".json", to_json(report, a.replicate_records));
    manifest.outputs.push_back(stem + ".csv");
    manifest.outputs.push_back(stem + ".json");
    for (const auto& w : report.warnings) manifest.warnings.push_back(s.name + ": " + w);
    details.push_back({{"scenario", s.name},
                       {"runtime_seconds", report.runtime_seconds},
                       {"exclusions", report.exclusions},
                       {"ok", report.ok}});
    all_rows.insert(all_rows.end(), report.rows.begin(), report.rows.end());
    ok = ok && report.ok;
  }
  std::cout << format_metrics_table(all_rows);
  manifest.details = {{"scenarios", details}};
  manifest.finished = utc_timestamp();
  write_json((fs::path(a.out_dir) / "manifest.json").string(), to_json(manifest));
  for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
  if (!ok) {
    std::cerr << "poolcal simulate: exclusions reached 1% of replicates in at least one cell\n";
    return kExitNumerical;
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> files;
  std::string csv;
};

int cmd_report(const ReportArgs& a) {
  std::vector<MetricsRow> rows;
  for (const auto& f : a.files) {
    auto more = load_report_rows(f);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  std::cout << format_metrics_table(rows);
  if (!a.csv.empty()) {
    std::ostringstream csv;
    write_metrics_csv(csv, rows);
    write_text_file(a.csv, csv.str());
  }
  return 0;
}

struct GenerateArgs {
  std::string config, out;
  double odds_ratio = 1.25;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a) {
  if (!a.seed) throw ValidationError("generate needs --seed");
  ScenarioConfig cfg;
  if (!a.config.empty()) cfg = scenario_from_json(read_json_file(a.config), cfg);
  cfg.validate();
  if (!(a.odds_ratio > 0.0)) throw ValidationError("--odds-ratio must be positive");
  const double beta_x = std::log(a.odds_ratio);
  Rng irng = child_rng(*a.seed, {1});
  const auto beta0 = solve_intercepts_for_prevalence(cfg, beta_x, irng);
  Rng rng = child_rng(*a.seed, {2});
  const SimulatedData sim = generate_dataset(cfg, beta_x, beta0, rng);
  write_dataset(a.out, sim.dataset, ',', true);
  std::cout << "wrote " << sim.dataset.size() << " subjects in " << sim.dataset.num_studies()
            << " studies -> " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration of pooled multi-study biomarker data treated as repeated measures"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Estimate the biomarker-outcome association with resampling SEs");
  fit_cmd->add_option("data", fit.data, "Pooled data file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--config", fit.config, "Fit configuration (JSON)")->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit.out, "FitResult JSON output");
  fit_cmd->add_option("--summary", fit.summary, "Write the printed estimate table here too");
  fit_cmd->add_option("--diagnostics", fit.diagnostics, "Measurement-model diagnostics JSON");
  fit_cmd->add_option("--manifest", fit.manifest, "Run manifest JSON");
  fit_cmd->add_option("--seed", fit.seed, "Seed for the pseudo datasets (overrides the config)");
  fit_cmd->add_option("--threads", fit.threads, "Worker threads (0: all cores)");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit the measurement model and write calibrated values");
  cal_cmd->add_option("data", cal.data, "Pooled data file")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--config", cal.config, "Fit configuration (JSON)")->check(CLI::ExistingFile);
  cal_cmd->add_option("--out", cal.out, "Calibrated values (CSV)")->required();
  cal_cmd->add_option("--params", cal.params, "Estimated parameters (JSON)");
  cal_cmd->add_option("--icc-convention", cal.icc, "paper | conventional")
      ->check(CLI::IsMember({"paper", "conventional"}));

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run Monte Carlo scenarios");
  for (const auto& name : preset_names()) {
    sim_cmd->add_flag_callback("--" + name, [&sim, name] { sim.presets.push_back(name); },
                               "Preset scenario family " + name);
  }
  sim_cmd->add_option_function<std::string>(
      "--preset", [&sim](const std::string& p) { sim.presets.push_back(p); }, "Preset by name");
  sim_cmd->add_option("--prevalence", sim.prevalence, "Target prevalence for --table1");
  sim_cmd->add_option("--config", sim.config, "Scenario overrides (JSON)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--seed", sim.seed, "Master seed")->required();
  sim_cmd->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  sim_cmd->add_option("--threads", sim.threads, "Worker threads (0: all cores)");
  sim_cmd->add_flag("--replicate-records", sim.replicate_records, "Keep per-replicate estimates in the JSON");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Print tables from simulation reports");
  rep_cmd->add_option("reports", rep.files, "Report JSON files")->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("--csv", rep.csv, "Also write the combined rows as CSV");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Write one simulated pooled dataset");
  gen_cmd->add_option("--config", gen.config, "Scenario overrides (JSON)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--odds-ratio", gen.odds_ratio, "True odds ratio per unit of the biomarker");
  gen_cmd->add_option("--seed", gen.seed, "Seed")->required();
  gen_cmd->add_option("--out", gen.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  if (*fit_cmd) return guarded("fit", [&] { return cmd_fit(fit); });
  if (*cal_cmd) return guarded("calibrate", [&] { return cmd_calibrate(cal); });
  if (*sim_cmd) return guarded("simulate", [&] { return cmd_simulate(sim); });
  if (*rep_cmd) return guarded("report", [&] { return cmd_report(rep); });
  if (*gen_cmd) return guarded("generate", [&] { return cmd_generate(gen); });
  return kExitInput;
}
