#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "poolcal/calibration.hpp"
#include "poolcal/data.hpp"
#include "poolcal/logistic.hpp"
#include "poolcal/mixed_model.hpp"
#include "poolcal/simulation.hpp"
#include "poolcal/uncertainty.hpp"

namespace poolcal {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

// Settings for `fit` and `calibrate`. Every key is optional; unknown keys are
// rejected so that typos cannot silently fall back to defaults.
struct FitConfig {
  FitOptions options;
  ColumnSchema columns;
};

FitConfig fit_config_from_json(const json& doc);
json to_json(const FitConfig& cfg);

// Applies the keys of `doc` on top of `base`.
ScenarioConfig scenario_from_json(const json& doc, ScenarioConfig base = {});
json to_json(const ScenarioConfig& cfg);

json to_json(const MetricsRow& row);
MetricsRow metrics_row_from_json(const json& doc);
// Runtime is left out so reruns give byte-identical files; the run manifest
// carries it instead.
json to_json(const ScenarioReport& report, bool include_replicates = false);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

// Loads rows from report JSON files written by `simulate`.
std::vector<MetricsRow> load_report_rows(const std::string& path);

// Table-1 style text: percent bias (empirical SE), MSE and coverage per
// method and odds ratio. Repeated-method rows for extra I values are listed
// in a separate coverage grid.
std::string format_metrics_table(const std::vector<MetricsRow>& rows);

json to_json(const FitResult& result, const PooledDataset& ds);
json lmm_diagnostics(const DesignSystem& design, const LmmFit& fit, const PooledDataset& ds);

// Parameter file written by `calibrate`.
json parameters_to_json(const LmmFit& fit, const PooledDataset& ds, const Eigen::VectorXd& icc,
                        IccConvention convention);

void write_calibration_csv(std::ostream& out, const PooledDataset& ds,
                           const std::vector<CalibratedValue>& values);

// Two-row estimate table: "beta (SE)" and "OR (95% CI)" for the naive and
// the repeated-measures fit.
std::string format_fit_summary(const FitResult& result, const LogisticFit& naive);

// Naive fit: the outcome regressed on the local measurement.
LogisticFit fit_naive(const PooledDataset& ds, const LogisticOptions& options = {});

IccConvention parse_icc_convention(const std::string& name);
const char* to_string(IccConvention convention) noexcept;

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string hex64(std::uint64_t value);
std::string utc_timestamp();

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_hash;  // FNV-1a of the canonical config JSON
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, FNV-1a of contents
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
  json details;  // command-specific extras such as per-scenario runtimes
};

json to_json(const RunManifest& manifest);

json read_json_file(const std::string& path);
std::string file_hash(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace poolcal
