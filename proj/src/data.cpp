#include "poolcal/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "poolcal/errors.hpp"

namespace poolcal {

namespace {

const std::string kCentralLabel = "central";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    cells.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

double parse_double(std::string_view cell, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw ParseError(line, "column '" + column + "': expected a number, got '" +
                               std::string(cell) + "'");
  if (!std::isfinite(value))
    throw ParseError(line, "column '" + column + "': non-finite value");
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double sample_sd(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

PooledDataset::PooledDataset(std::vector<SubjectRecord> subjects, std::vector<StudyInfo> studies,
                             std::vector<std::string> lab_labels,
                             std::vector<std::string> w_names, std::vector<std::string> z_names)
    : subjects_(std::move(subjects)),
      studies_(std::move(studies)),
      lab_labels_(std::move(lab_labels)),
      w_names_(std::move(w_names)),
      z_names_(std::move(z_names)) {
  if (studies_.size() < 2)
    throw ValidationError("at least two studies are required, got " +
                          std::to_string(studies_.size()));
  if (lab_labels_.empty()) throw ValidationError("no local laboratory declared");
  for (const auto& s : studies_)
    if (s.lab < 1 || s.lab > num_local_labs())
      throw ValidationError("study '" + s.label + "' maps to unknown local lab " +
                            std::to_string(s.lab));

  study_sizes_.assign(studies_.size(), 0);
  calibration_counts_.assign(studies_.size(), 0);
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto& r = subjects_[i];
    const std::string where = "subject '" + r.id + "' (row " + std::to_string(i + 1) + ")";
    if (r.study < 0 || r.study >= num_studies())
      throw ValidationError(where + ": study index out of range");
    if (r.outcome != 0 && r.outcome != 1)
      throw ValidationError(where + ": outcome must be 0 or 1");
    if (static_cast<int>(r.w.size()) != p() || static_cast<int>(r.z.size()) != q())
      throw ValidationError(where + ": covariate dimension mismatch");
    if (!std::isfinite(r.local) || (r.central && !std::isfinite(*r.central)))
      throw ValidationError(where + ": non-finite measurement");
    ++study_sizes_[r.study];
    if (r.is_calibration()) ++calibration_counts_[r.study];
  }
  for (int j = 0; j < num_studies(); ++j) {
    if (study_sizes_[j] == 0)
      throw ValidationError("study '" + studies_[j].label + "' has no subjects");
    if (calibration_counts_[j] == 0)
      warnings_.push_back("study '" + studies_[j].label +
                          "' has no calibration subjects; its calibration is unidentified");
  }
}

const std::string& PooledDataset::lab_label(int lab) const {
  if (lab == 0) return kCentralLabel;
  return lab_labels_.at(lab - 1);
}

bool PooledDataset::has_true_values() const noexcept {
  return !subjects_.empty() &&
         std::all_of(subjects_.begin(), subjects_.end(),
                     [](const SubjectRecord& r) { return r.true_x.has_value(); });
}

void PooledDataset::require_fit_ready() const {
  for (int j = 0; j < num_studies(); ++j)
    if (calibration_counts_[j] == 0)
      throw ValidationError("study '" + studies_[j].label +
                            "' has no calibration subjects; cannot calibrate");
}

PooledDataset read_dataset(std::istream& in, const ColumnSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw ParseError(line_no, "missing header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header_cells = split(line, schema.delimiter);
  std::vector<std::string> header(header_cells.begin(), header_cells.end());
  auto column = [&](const std::string& name, bool required) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw ParseError(line_no, "missing column '" + name + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int c_id = column(schema.subject_id, true);
  const int c_study = column(schema.study, true);
  const int c_lab = column(schema.local_lab, true);
  const int c_local = column(schema.local_measurement, true);
  const int c_central = column(schema.central_measurement, true);
  const int c_outcome = column(schema.outcome, true);
  const int c_true = schema.true_value.empty() ? -1 : column(schema.true_value, true);

  auto covariate_columns = [&](const std::vector<std::string>& names, const std::string& prefix) {
    std::vector<std::string> chosen = names;
    if (chosen.empty())
      for (const auto& h : header)
        if (h.rfind(prefix, 0) == 0) chosen.push_back(h);
    std::vector<int> idx;
    for (const auto& n : chosen) idx.push_back(column(n, true));
    return std::pair{chosen, idx};
  };
  auto [w_names, w_idx] = covariate_columns(schema.w_columns, "w_");
  auto [z_names, z_idx] = covariate_columns(schema.z_columns, "z_");

  std::vector<SubjectRecord> subjects;
  std::vector<StudyInfo> studies;
  std::map<std::string, int> study_index;
  std::vector<std::string> lab_labels;
  std::map<std::string, int> lab_index;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, schema.delimiter);
    if (cells.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(cells.size()));
    SubjectRecord r;
    r.id = std::string(cells[c_id]);
    if (r.id.empty()) throw ParseError(line_no, "empty subject id");

    const std::string study_label(cells[c_study]);
    const std::string lab(cells[c_lab]);
    if (study_label.empty()) throw ParseError(line_no, "empty study");
    if (lab.empty()) throw ParseError(line_no, "empty local_lab");
    auto [lab_it, lab_new] = lab_index.try_emplace(lab, static_cast<int>(lab_labels.size()) + 1);
    if (lab_new) lab_labels.push_back(lab);
    auto [st_it, st_new] = study_index.try_emplace(study_label, static_cast<int>(studies.size()));
    if (st_new) studies.push_back({study_label, lab_it->second});
    if (studies[st_it->second].lab != lab_it->second)
      throw ValidationError("line " + std::to_string(line_no) + ": study '" + study_label +
                            "' already mapped to a different local lab");
    r.study = st_it->second;

    const auto outcome_cell = cells[c_outcome];
    if (outcome_cell == "0") {
      r.outcome = 0;
    } else if (outcome_cell == "1") {
      r.outcome = 1;
    } else {
      throw ValidationError("line " + std::to_string(line_no) + ": subject '" + r.id +
                            "': outcome must be 0 or 1, got '" + std::string(outcome_cell) +
                            "'");
    }
    r.local = parse_double(cells[c_local], line_no, schema.local_measurement);
    if (!cells[c_central].empty())
      r.central = parse_double(cells[c_central], line_no, schema.central_measurement);
    if (c_true >= 0 && !cells[c_true].empty())
      r.true_x = parse_double(cells[c_true], line_no, schema.true_value);

    auto read_covariates = [&](const std::vector<int>& idx, const std::vector<std::string>& names) {
      std::vector<double> v;
      v.reserve(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (cells[idx[k]].empty())
          throw ValidationError("line " + std::to_string(line_no) + ": missing covariate '" +
                                names[k] + "'");
        v.push_back(parse_double(cells[idx[k]], line_no, names[k]));
      }
      return v;
    };
    r.w = read_covariates(w_idx, w_names);
    r.z = read_covariates(z_idx, z_names);
    subjects.push_back(std::move(r));
  }

  return PooledDataset(std::move(subjects), std::move(studies), std::move(lab_labels),
                       std::move(w_names), std::move(z_names));
}

PooledDataset load_dataset(const std::string& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_dataset(in, schema);
}

void write_dataset(std::ostream& out, const PooledDataset& ds, char delimiter,
                   bool include_true_values) {
  const char d = delimiter;
  std::vector<std::string> z_only;
  std::vector<int> z_only_idx;
  for (int k = 0; k < ds.q(); ++k) {
    const auto& name = ds.z_names()[k];
    if (std::find(ds.w_names().begin(), ds.w_names().end(), name) == ds.w_names().end()) {
      z_only.push_back(name);
      z_only_idx.push_back(k);
    }
  }
  out << "subject_id" << d << "study" << d << "local_lab" << d << "local_measurement" << d
      << "central_measurement" << d << "outcome";
  for (const auto& n : ds.w_names()) out << d << n;
  for (const auto& n : z_only) out << d << n;
  if (include_true_values) out << d << "true_x";
  out << '\n';
  for (const auto& r : ds.subjects()) {
    const int lab = ds.lab_of_study(r.study);
    out << r.id << d << ds.studies()[r.study].label << d << ds.lab_label(lab) << d
        << format_double(r.local) << d << (r.central ? format_double(*r.central) : "") << d
        << r.outcome;
    for (double v : r.w) out << d << format_double(v);
    for (int k : z_only_idx) out << d << format_double(r.z[k]);
    if (include_true_values) out << d << (r.true_x ? format_double(*r.true_x) : "");
    out << '\n';
  }
}

void write_dataset(const std::string& path, const PooledDataset& ds, char delimiter,
                   bool include_true_values) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_dataset(out, ds, delimiter, include_true_values);
}

DatasetSummary summarize_dataset(const PooledDataset& ds) {
  DatasetSummary s;
  s.n_subjects = ds.size();
  s.lab_count = ds.num_labs();
  std::vector<std::size_t> cases(ds.num_studies(), 0);
  std::vector<std::vector<double>> by_lab(ds.num_labs());
  for (const auto& r : ds.subjects()) {
    cases[r.study] += static_cast<std::size_t>(r.outcome);
    by_lab[ds.lab_of_study(r.study)].push_back(r.local);
    if (r.central) by_lab[0].push_back(*r.central);
  }
  for (int j = 0; j < ds.num_studies(); ++j) {
    StudySummary row;
    row.study = ds.studies()[j].label;
    row.lab = ds.lab_of_study(j);
    row.n = ds.study_size(j);
    row.n_calibration = ds.calibration_count(j);
    row.calibration_fraction = static_cast<double>(row.n_calibration) / row.n;
    row.prevalence = static_cast<double>(cases[j]) / row.n;
    s.n_calibration += row.n_calibration;
    s.studies.push_back(row);
  }
  for (int d = 0; d < ds.num_labs(); ++d) {
    LabSummary row;
    row.lab = d;
    row.label = ds.lab_label(d);
    row.n_measurements = by_lab[d].size();
    if (!by_lab[d].empty()) {
      double sum = 0.0;
      for (double v : by_lab[d]) sum += v;
      row.mean = sum / by_lab[d].size();
      row.sd = sample_sd(by_lab[d], row.mean);
    }
    s.labs.push_back(row);
  }
  return s;
}

}  // namespace poolcal
