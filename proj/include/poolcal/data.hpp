#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace poolcal {

// One participant of the pooled analysis.
struct SubjectRecord {
  std::string id;
  int study = 0;  // 0-based index into PooledDataset::studies()
  int outcome = 0;
  std::vector<double> w;  // covariates of the biomarker model
  std::vector<double> z;  // covariates of the outcome model
  double local = 0.0;     // measurement at the study's own laboratory
  std::optional<double> central;  // present only for the calibration subset
  std::optional<double> true_x;   // simulation only

  bool is_calibration() const noexcept { return central.has_value(); }
};

struct StudyInfo {
  std::string label;
  int lab = 1;  // local laboratory index, 1..num_local_labs(); 0 is the central lab
};

// Immutable, validated pooled dataset.
//
// Laboratories are indexed d = 0 (central) and d = 1..L (local). Several
// studies may share a local laboratory.
class PooledDataset {
 public:
  PooledDataset(std::vector<SubjectRecord> subjects, std::vector<StudyInfo> studies,
                std::vector<std::string> lab_labels, std::vector<std::string> w_names,
                std::vector<std::string> z_names);

  const std::vector<SubjectRecord>& subjects() const noexcept { return subjects_; }
  const std::vector<StudyInfo>& studies() const noexcept { return studies_; }
  const std::vector<std::string>& w_names() const noexcept { return w_names_; }
  const std::vector<std::string>& z_names() const noexcept { return z_names_; }

  std::size_t size() const noexcept { return subjects_.size(); }
  int num_studies() const noexcept { return static_cast<int>(studies_.size()); }
  int num_local_labs() const noexcept { return static_cast<int>(lab_labels_.size()); }
  // Local labs plus the central lab.
  int num_labs() const noexcept { return num_local_labs() + 1; }
  int p() const noexcept { return static_cast<int>(w_names_.size()); }
  int q() const noexcept { return static_cast<int>(z_names_.size()); }

  int lab_of_study(int study) const { return studies_.at(study).lab; }
  // "central" for d = 0.
  const std::string& lab_label(int lab) const;

  std::size_t calibration_count(int study) const { return calibration_counts_.at(study); }
  std::size_t study_size(int study) const { return study_sizes_.at(study); }
  bool has_true_values() const noexcept;

  // Non-fatal findings from construction, e.g. a study without calibration
  // subjects. They become errors in require_fit_ready().
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  // Throws ValidationError unless every study has at least one calibration
  // subject.
  void require_fit_ready() const;

 private:
  std::vector<SubjectRecord> subjects_;
  std::vector<StudyInfo> studies_;
  std::vector<std::string> lab_labels_;
  std::vector<std::string> w_names_;
  std::vector<std::string> z_names_;
  std::vector<std::size_t> study_sizes_;
  std::vector<std::size_t> calibration_counts_;
  std::vector<std::string> warnings_;
};

// Maps logical fields to header names of a delimited file. A column listed in
// both w_columns and z_columns is shared by the two models.
struct ColumnSchema {
  std::string subject_id = "subject_id";
  std::string study = "study";
  std::string local_lab = "local_lab";
  std::string local_measurement = "local_measurement";
  std::string central_measurement = "central_measurement";
  std::string outcome = "outcome";
  std::vector<std::string> w_columns;  // empty: every header starting with "w_"
  std::vector<std::string> z_columns;  // empty: every header starting with "z_"
  std::string true_value;              // empty: not read
  char delimiter = ',';
};

PooledDataset load_dataset(const std::string& path, const ColumnSchema& schema = {});
PooledDataset read_dataset(std::istream& in, const ColumnSchema& schema = {});

// Writes the header layout read_dataset expects. Values use the shortest
// representation that round-trips exactly.
void write_dataset(std::ostream& out, const PooledDataset& ds, char delimiter = ',',
                   bool include_true_values = false);
void write_dataset(const std::string& path, const PooledDataset& ds, char delimiter = ',',
                   bool include_true_values = false);

struct StudySummary {
  std::string study;
  int lab = 0;
  std::size_t n = 0;
  std::size_t n_calibration = 0;
  double calibration_fraction = 0.0;
  double prevalence = 0.0;
};

struct LabSummary {
  int lab = 0;
  std::string label;
  std::size_t n_measurements = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample SD; 0 with fewer than two measurements
};

struct DatasetSummary {
  std::size_t n_subjects = 0;
  std::size_t n_calibration = 0;
  int lab_count = 0;  // including the central lab
  std::vector<StudySummary> studies;
  std::vector<LabSummary> labs;  // d = 0..L
};

DatasetSummary summarize_dataset(const PooledDataset& ds);

}  // namespace poolcal
