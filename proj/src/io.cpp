#include "poolcal/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "poolcal/errors.hpp"

namespace poolcal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_keys(const json& doc, const char* where, std::initializer_list<const char*> allowed) {
  if (!doc.is_object()) throw ValidationError(std::string(where) + ": expected a JSON object");
  for (const auto& item : doc.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw ValidationError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

void check_schema_version(const json& doc, const char* where) {
  if (!doc.contains("schema_version")) return;
  if (!doc["schema_version"].is_number_integer() || doc["schema_version"].get<int>() != kSchemaVersion)
    throw ValidationError(std::string(where) + ": unsupported schema_version " +
                          doc["schema_version"].dump() + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
}

template <class T>
void read_into(const json& doc, const char* key, T& out, const char* where) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(where) + "." + key + ": " + e.what());
  }
}

json vector_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

json minque_options_json(const MinqueOptions& o) {
  return {{"iterate", o.iterate}, {"max_iterations", o.max_iterations}, {"tolerance", o.tolerance}};
}

MinqueOptions minque_options_from_json(const json& doc, MinqueOptions o) {
  check_keys(doc, "minque", {"iterate", "max_iterations", "tolerance"});
  read_into(doc, "iterate", o.iterate, "minque");
  read_into(doc, "max_iterations", o.max_iterations, "minque");
  read_into(doc, "tolerance", o.tolerance, "minque");
  if (o.max_iterations < 0) throw ValidationError("minque.max_iterations must be non-negative");
  if (!(o.tolerance > 0.0)) throw ValidationError("minque.tolerance must be positive");
  return o;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string format_g(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::vector<std::string> lab_labels(const PooledDataset& ds) {
  std::vector<std::string> out;
  for (int d = 0; d < ds.num_labs(); ++d) out.push_back(ds.lab_label(d));
  return out;
}

json sigma2_json(const VarianceComponents& s2, const PooledDataset& ds) {
  json lab = json::object();
  for (int d = 0; d < s2.num_labs(); ++d) lab[ds.lab_label(d)] = s2.lab[d];
  return {{"lab", lab}, {"xi", s2.xi}, {"x", s2.x}};
}

json named_values(const std::vector<std::string>& names, const VectorXd& values) {
  json out = json::object();
  for (std::size_t k = 0; k < names.size(); ++k) out[names[k]] = values[static_cast<Index>(k)];
  return out;
}

std::vector<std::string> theta_names(const PooledDataset& ds) {
  std::vector<std::string> out;
  for (const auto& s : ds.studies()) out.push_back("alpha0[" + s.label + "]");
  for (const auto& w : ds.w_names()) out.push_back("tau[" + w + "]");
  return out;
}

}  // namespace

const char* to_string(IccConvention convention) noexcept {
  return convention == IccConvention::conventional ? "conventional" : "paper";
}

IccConvention parse_icc_convention(const std::string& name) {
  if (name == "paper") return IccConvention::paper;
  if (name == "conventional") return IccConvention::conventional;
  throw ValidationError("unknown ICC convention '" + name + "' (expected paper|conventional)");
}

FitConfig fit_config_from_json(const json& doc) {
  check_keys(doc, "config", {"schema_version", "pseudo_datasets", "variance_rule", "seed",
                             "icc_convention", "minque", "logistic", "columns"});
  check_schema_version(doc, "config");
  FitConfig cfg;
  auto& o = cfg.options;
  read_into(doc, "pseudo_datasets", o.pseudo_datasets, "config");
  if (o.pseudo_datasets < 2)
    throw ValidationError("config.pseudo_datasets must be at least 2, got " +
                          std::to_string(o.pseudo_datasets));
  if (doc.contains("variance_rule"))
    o.rule = parse_variance_rule(doc["variance_rule"].get<std::string>());
  read_into(doc, "seed", o.seed, "config");
  if (doc.contains("icc_convention"))
    o.icc = parse_icc_convention(doc["icc_convention"].get<std::string>());
  if (doc.contains("minque")) o.minque = minque_options_from_json(doc["minque"], o.minque);
  if (doc.contains("logistic")) {
    const json& l = doc["logistic"];
    check_keys(l, "logistic", {"score_tolerance", "deviance_tolerance", "max_iterations",
                               "divergence_bound"});
    read_into(l, "score_tolerance", o.logistic.score_tolerance, "logistic");
    read_into(l, "deviance_tolerance", o.logistic.deviance_tolerance, "logistic");
    read_into(l, "max_iterations", o.logistic.max_iterations, "logistic");
    read_into(l, "divergence_bound", o.logistic.divergence_bound, "logistic");
    if (o.logistic.max_iterations < 1) throw ValidationError("logistic.max_iterations must be positive");
  }
  if (doc.contains("columns")) {
    const json& c = doc["columns"];
    check_keys(c, "columns", {"subject_id", "study", "local_lab", "local_measurement",
                              "central_measurement", "outcome", "w", "z", "true_value", "delimiter"});
    auto& s = cfg.columns;
    read_into(c, "subject_id", s.subject_id, "columns");
    read_into(c, "study", s.study, "columns");
    read_into(c, "local_lab", s.local_lab, "columns");
    read_into(c, "local_measurement", s.local_measurement, "columns");
    read_into(c, "central_measurement", s.central_measurement, "columns");
    read_into(c, "outcome", s.outcome, "columns");
    read_into(c, "w", s.w_columns, "columns");
    read_into(c, "z", s.z_columns, "columns");
    read_into(c, "true_value", s.true_value, "columns");
    if (c.contains("delimiter")) {
      const auto d = c["delimiter"].get<std::string>();
      if (d.size() != 1) throw ValidationError("columns.delimiter must be a single character");
      s.delimiter = d[0];
    }
  }
  return cfg;
}

json to_json(const FitConfig& cfg) {
  const auto& o = cfg.options;
  const auto& s = cfg.columns;
  return {{"schema_version", kSchemaVersion},
          {"pseudo_datasets", o.pseudo_datasets},
          {"variance_rule", to_string(o.rule)},
          {"seed", o.seed},
          {"icc_convention", to_string(o.icc)},
          {"minque", minque_options_json(o.minque)},
          {"logistic",
           {{"score_tolerance", o.logistic.score_tolerance},
            {"deviance_tolerance", o.logistic.deviance_tolerance},
            {"max_iterations", o.logistic.max_iterations},
            {"divergence_bound", o.logistic.divergence_bound}}},
          {"columns",
           {{"subject_id", s.subject_id},
            {"study", s.study},
            {"local_lab", s.local_lab},
            {"local_measurement", s.local_measurement},
            {"central_measurement", s.central_measurement},
            {"outcome", s.outcome},
            {"w", s.w_columns},
            {"z", s.z_columns},
            {"true_value", s.true_value},
            {"delimiter", std::string(1, s.delimiter)}}}};
}

ScenarioConfig scenario_from_json(const json& doc, ScenarioConfig c) {
  check_keys(doc, "scenario",
             {"schema_version", "name", "studies", "n_per_study", "n_calibration_per_study", "alpha0",
              "tau", "sigma2_x", "sigma2_lab", "sigma2_xi", "odds_ratios", "beta_z",
              "target_prevalence", "error_family", "uniform_printed_bounds", "xi_mean", "replicates",
              "pseudo_datasets", "pseudo_dataset_grid", "methods", "variance_rule", "minque",
              "prevalence_draws", "seed"});
  check_schema_version(doc, "scenario");
  read_into(doc, "name", c.name, "scenario");
  read_into(doc, "studies", c.studies, "scenario");
  read_into(doc, "n_per_study", c.n_per_study, "scenario");
  read_into(doc, "n_calibration_per_study", c.n_calibration_per_study, "scenario");
  read_into(doc, "alpha0", c.alpha0, "scenario");
  read_into(doc, "tau", c.tau, "scenario");
  read_into(doc, "sigma2_x", c.sigma2_x, "scenario");
  read_into(doc, "sigma2_lab", c.sigma2_lab, "scenario");
  read_into(doc, "sigma2_xi", c.sigma2_xi, "scenario");
  read_into(doc, "odds_ratios", c.odds_ratios, "scenario");
  read_into(doc, "beta_z", c.beta_z, "scenario");
  read_into(doc, "target_prevalence", c.target_prevalence, "scenario");
  if (doc.contains("error_family")) c.error_family = parse_error_family(doc["error_family"].get<std::string>());
  read_into(doc, "uniform_printed_bounds", c.uniform_printed_bounds, "scenario");
  read_into(doc, "xi_mean", c.xi_mean, "scenario");
  read_into(doc, "replicates", c.replicates, "scenario");
  read_into(doc, "pseudo_datasets", c.pseudo_datasets, "scenario");
  read_into(doc, "pseudo_dataset_grid", c.pseudo_dataset_grid, "scenario");
  if (doc.contains("methods")) {
    c.methods.clear();
    for (const auto& m : doc["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (doc.contains("variance_rule")) c.rule = parse_variance_rule(doc["variance_rule"].get<std::string>());
  if (doc.contains("minque")) c.minque = minque_options_from_json(doc["minque"], c.minque);
  read_into(doc, "prevalence_draws", c.prevalence_draws, "scenario");
  if (doc.contains("seed")) {
    std::uint64_t seed = 0;
    read_into(doc, "seed", seed, "scenario");
    c.seed = seed;
  }
  return c;
}

json to_json(const ScenarioConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json out = {{"schema_version", kSchemaVersion},
              {"name", c.name},
              {"studies", c.studies},
              {"n_per_study", c.n_per_study},
              {"n_calibration_per_study", c.n_calibration_per_study},
              {"alpha0", c.alpha0},
              {"tau", c.tau},
              {"sigma2_x", c.sigma2_x},
              {"sigma2_lab", c.sigma2_lab},
              {"sigma2_xi", c.sigma2_xi},
              {"odds_ratios", c.odds_ratios},
              {"beta_z", c.beta_z},
              {"target_prevalence", c.target_prevalence},
              {"error_family", to_string(c.error_family)},
              {"uniform_printed_bounds", c.uniform_printed_bounds},
              {"xi_mean", c.xi_mean},
              {"replicates", c.replicates},
              {"pseudo_datasets", c.pseudo_datasets},
              {"pseudo_dataset_grid", c.pseudo_dataset_grid},
              {"methods", methods},
              {"variance_rule", to_string(c.rule)},
              {"minque", minque_options_json(c.minque)},
              {"prevalence_draws", c.prevalence_draws}};
  if (c.seed) out["seed"] = *c.seed;
  return out;
}

json to_json(const MetricsRow& r) {
  return {{"scenario", r.scenario},
          {"method", to_string(r.method)},
          {"odds_ratio", r.odds_ratio},
          {"beta_x_true", r.beta_x_true},
          {"pseudo_datasets", r.pseudo_datasets},
          {"mean_estimate", r.mean_estimate},
          {"percent_bias", r.percent_bias},
          {"empirical_se", r.empirical_se},
          {"mse", r.mse},
          {"coverage_95", r.coverage_95},
          {"mean_se", r.mean_se},
          {"used", r.used},
          {"excluded", r.excluded}};
}

MetricsRow metrics_row_from_json(const json& d) {
  MetricsRow r;
  try {
    r.scenario = d.at("scenario").get<std::string>();
    r.method = parse_method(d.at("method").get<std::string>());
    r.odds_ratio = d.at("odds_ratio").get<double>();
    r.beta_x_true = d.at("beta_x_true").get<double>();
    r.pseudo_datasets = d.at("pseudo_datasets").get<int>();
    r.mean_estimate = d.at("mean_estimate").get<double>();
    r.percent_bias = d.at("percent_bias").get<double>();
    r.empirical_se = d.at("empirical_se").get<double>();
    r.mse = d.at("mse").get<double>();
    r.coverage_95 = d.at("coverage_95").get<double>();
    r.mean_se = d.at("mean_se").get<double>();
    r.used = d.at("used").get<int>();
    r.excluded = d.at("excluded").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report row: ") + e.what());
  }
  return r;
}

json to_json(const ScenarioReport& report, bool include_replicates) {
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back(to_json(r));
  json intercepts = json::array();
  for (std::size_t o = 0; o < report.intercepts.size(); ++o)
    intercepts.push_back({{"odds_ratio", report.config.odds_ratios[o]}, {"beta0", report.intercepts[o]}});
  json out = {{"schema_version", kSchemaVersion},
              {"scenario", to_json(report.config)},
              {"ok", report.ok},
              {"exclusions", report.exclusions},
              {"intercepts", intercepts},
              {"warnings", report.warnings},
              {"rows", rows}};
  if (include_replicates) {
    json reps = json::array();
    for (const auto& r : report.replicates)
      reps.push_back({{"odds_ratio", report.config.odds_ratios[static_cast<std::size_t>(r.or_index)]},
                      {"replicate", r.replicate},
                      {"method", to_string(r.method)},
                      {"ok", r.ok},
                      {"beta_x", r.beta_x},
                      {"se", r.se},
                      {"se_by_draws", r.se_by_draws}});
    out["replicates"] = reps;
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "scenario,method,odds_ratio,beta_x_true,pseudo_datasets,mean_estimate,percent_bias,"
         "empirical_se,mse,coverage_95,mean_se,used,excluded\n";
  const auto old = out.precision(10);
  for (const auto& r : rows)
    out << r.scenario << ',' << to_string(r.method) << ',' << r.odds_ratio << ',' << r.beta_x_true
        << ',' << r.pseudo_datasets << ',' << r.mean_estimate << ',' << r.percent_bias << ','
        << r.empirical_se << ',' << r.mse << ',' << r.coverage_95 << ',' << r.mean_se << ','
        << r.used << ',' << r.excluded << '\n';
  out.precision(old);
}

std::vector<MetricsRow> load_report_rows(const std::string& path) {
  const json doc = read_json_file(path);
  if (!doc.is_object() || !doc.contains("rows"))
    throw ValidationError(path + ": not a simulation report (no \"rows\")");
  check_schema_version(doc, path.c_str());
  std::vector<MetricsRow> rows;
  for (const auto& r : doc["rows"]) rows.push_back(metrics_row_from_json(r));
  return rows;
}

std::string format_metrics_table(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  std::vector<std::string> scenarios;
  for (const auto& r : rows)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end())
      scenarios.push_back(r.scenario);

  for (const auto& name : scenarios) {
    // Primary rows: one per (method, OR). For the repeated method the first
    // row emitted is the configured I; later ones form the I grid.
    std::vector<Method> methods;
    std::vector<double> ors;
    std::map<std::pair<int, double>, const MetricsRow*> primary;
    std::map<int, std::map<double, const MetricsRow*>> grid;
    for (const auto& r : rows) {
      if (r.scenario != name) continue;
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
      if (std::find(ors.begin(), ors.end(), r.odds_ratio) == ors.end()) ors.push_back(r.odds_ratio);
      const auto key = std::make_pair(static_cast<int>(r.method), r.odds_ratio);
      if (!primary.count(key)) primary[key] = &r;
      if (r.method == Method::repeated) grid[r.pseudo_datasets][r.odds_ratio] = &r;
    }

    out << "scenario " << name << "\n";
    out << std::left << std::setw(8) << "OR";
    for (Method m : methods) out << std::setw(18) << to_string(m);
    out << "\n";
    auto block = [&](const char* title, auto cell) {
      out << title << "\n";
      for (double o : ors) {
        out << std::left << std::setw(8) << format_g(o);
        for (Method m : methods) {
          const auto it = primary.find({static_cast<int>(m), o});
          out << std::setw(18) << (it == primary.end() ? std::string("-") : cell(*it->second));
        }
        out << "\n";
      }
    };
    block("percent bias (empirical SE)", [](const MetricsRow& r) {
      return fixed(r.percent_bias, 1) + " (" + fixed(r.empirical_se, 3) + ")";
    });
    block("MSE", [](const MetricsRow& r) { return fixed(r.mse, 4); });
    block("95% coverage", [](const MetricsRow& r) { return fixed(r.coverage_95, 3); });

    if (grid.size() > 1) {
      out << "repeated-method coverage (%) by number of pseudo datasets\n";
      out << std::left << std::setw(8) << "I";
      for (double o : ors) out << std::setw(8) << format_g(o);
      out << "\n";
      for (const auto& [draws, by_or] : grid) {
        out << std::left << std::setw(8) << draws;
        for (double o : ors) {
          const auto it = by_or.find(o);
          out << std::setw(8) << (it == by_or.end() ? std::string("-") : fixed(100.0 * it->second->coverage_95, 1));
        }
        out << "\n";
      }
    }
    out << "\n";
  }
  return out.str();
}

json to_json(const FitResult& res, const PooledDataset& ds) {
  const auto& s2 = res.lmm.minque.sigma2;
  json coefficients = json::array();
  for (std::size_t k = 0; k < res.coefficient_names.size(); ++k)
    coefficients.push_back({{"name", res.coefficient_names[k]},
                            {"estimate", res.beta[static_cast<Index>(k)]},
                            {"se", res.se[static_cast<Index>(k)]}});
  const Index x = ds.num_studies();
  json icc = json::object();
  for (int d = 0; d < ds.num_labs(); ++d) icc[ds.lab_label(d)] = res.icc[d];
  return {{"schema_version", kSchemaVersion},
          {"beta_x", res.beta_x},
          {"se", res.se_x},
          {"ci_low", res.ci_low},
          {"ci_high", res.ci_high},
          {"odds_ratio", res.odds_ratio()},
          {"or_ci_low", res.or_ci_low()},
          {"or_ci_high", res.or_ci_high()},
          {"variance",
           {{"within", res.variance.within(x, x)},
            {"between", res.variance.between(x, x)},
            {"total", res.variance.total(x, x)},
            {"between_factor", res.variance.between_factor()}}},
          {"pseudo_datasets", res.variance.draws},
          {"variance_rule", to_string(res.variance.rule)},
          {"seed", res.options.seed},
          {"redraws", res.redraws},
          {"coefficients", coefficients},
          {"measurement_model",
           {{"theta", named_values(theta_names(ds), res.lmm.gls.theta)},
            {"xi", named_values(lab_labels(ds), res.lmm.blup.xi)},
            {"sigma2", sigma2_json(s2, ds)},
            {"minque_iterations", res.lmm.minque.iterations},
            {"minque_converged", res.lmm.minque.converged}}},
          {"icc", {{"convention", to_string(res.icc_convention)}, {"values", icc}}},
          {"outcome_fit",
           {{"converged", res.point.converged},
            {"iterations", res.point.iterations},
            {"deviance", res.point.deviance}}},
          {"n_subjects", ds.size()},
          {"warnings", res.warnings}};
}

json lmm_diagnostics(const DesignSystem& design, const LmmFit& fit, const PooledDataset& ds) {
  const MinqueSystem sys = minque_system(design);
  std::vector<std::string> components;
  for (int k = 0; k < fit.minque.sigma2.size(); ++k)
    components.push_back(VarianceComponents::component_name(k, design.num_labs));
  return {{"rows", design.rows()},
          {"subjects", design.num_subjects},
          {"calibration_pairs", design.pairs.size()},
          {"fixed_effects", design.column_names},
          {"labs", lab_labels(ds)},
          {"variance_components", components},
          {"minque",
           {{"identity_prior_S", matrix_json(sys.S)},
            {"identity_prior_q", vector_json(sys.q)},
            {"raw", vector_json(fit.minque.raw)},
            {"estimate", vector_json(fit.minque.sigma2.to_vector())},
            {"floor", fit.minque.floor_value},
            {"floored", fit.minque.floored},
            {"iterations", fit.minque.iterations},
            {"converged", fit.minque.converged},
            {"last_change", fit.minque.last_change}}},
          {"gls", {{"theta", vector_json(fit.gls.theta)}, {"cov", matrix_json(fit.gls.cov)}}},
          {"blup", {{"xi", vector_json(fit.blup.xi)}, {"cov", matrix_json(fit.blup.cov)}}},
          {"warnings", fit.warnings}};
}

json parameters_to_json(const LmmFit& fit, const PooledDataset& ds, const VectorXd& icc,
                        IccConvention convention) {
  json icc_values = json::object();
  for (int d = 0; d < ds.num_labs(); ++d) icc_values[ds.lab_label(d)] = icc[d];
  return {{"schema_version", kSchemaVersion},
          {"theta", named_values(theta_names(ds), fit.gls.theta)},
          {"xi", named_values(lab_labels(ds), fit.blup.xi)},
          {"sigma2", sigma2_json(fit.minque.sigma2, ds)},
          {"icc", {{"convention", to_string(convention)}, {"values", icc_values}}},
          {"warnings", fit.warnings}};
}

void write_calibration_csv(std::ostream& out, const PooledDataset& ds,
                           const std::vector<CalibratedValue>& values) {
  if (values.size() != ds.size())
    throw ContractError("write_calibration_csv: one calibrated value per subject is required");
  out << "subject_id,study,x_tilde,conditional_variance,subject_kind\n";
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& r = ds.subjects()[i];
    out << r.id << ',' << ds.studies()[static_cast<std::size_t>(r.study)].label << ','
        << values[i].x_tilde << ',' << values[i].conditional_variance << ','
        << to_string(values[i].kind) << '\n';
  }
  out.precision(old);
}

LogisticFit fit_naive(const PooledDataset& ds, const LogisticOptions& options) {
  VectorXd h(static_cast<Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) h[static_cast<Index>(i)] = ds.subjects()[i].local;
  return fit_outcome(outcome_data(ds), h, options);
}

std::string format_fit_summary(const FitResult& res, const LogisticFit& naive) {
  auto line = [](const std::string& label, double b, double se) {
    std::ostringstream s;
    const double lo = std::exp(b - kNormalQuantile975 * se);
    const double hi = std::exp(b + kNormalQuantile975 * se);
    s << std::left << std::setw(20) << label << std::setw(18)
      << (fixed(b, 3) + " (" + fixed(se, 3) + ")")
      << fixed(std::exp(b), 3) << " (" << fixed(lo, 3) << ", " << fixed(hi, 3) << ")\n";
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(20) << "Method" << std::setw(18) << "beta_x (SE)"
      << "OR (95% CI)\n";
  out << line("Naive", naive.beta_x(), naive.se_x());
  out << line("Repeated measures", res.beta_x, res.se_x);
  out << "I = " << res.variance.draws << " pseudo datasets, " << to_string(res.variance.rule)
      << " variance rule, seed " << res.options.seed << "\n";
  return out.str();
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const RunManifest& m) {
  json out = {{"command", m.command},
              {"config_path", m.config_path},
              {"config_hash", m.config_hash},
              {"tool_version", kVersion}};
  out["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  json inputs = json::array();
  for (const auto& [path, hash] : m.inputs) inputs.push_back({{"path", path}, {"fnv1a64", hash}});
  out["inputs"] = inputs;
  out["started"] = m.started;
  out["finished"] = m.finished;
  out["outputs"] = m.outputs;
  out["warnings"] = m.warnings;
  if (!m.details.is_null()) out["details"] = m.details;
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex64(fnv1a64(buf.str()));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ValidationError("write to '" + path + "' failed");
}

}  // namespace poolcal
