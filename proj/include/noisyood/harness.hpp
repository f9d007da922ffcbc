#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "noisyood/classifier.hpp"
#include "noisyood/detectors.hpp"
#include "noisyood/metrics.hpp"
#include "noisyood/noise.hpp"
#include "noisyood/synth.hpp"

namespace noisyood::bench {

// A dataset is either generated from a mixture spec or read from a split-set
// directory. Split sets whose train bundle already carries "logit" are treated
// as pre-extracted: no model is trained and the architecture, seed and
// checkpoint axes collapse to a single "external" cell.
struct DatasetConfig {
  std::string name;
  std::optional<synth::MixtureSpec> synthetic;
  std::optional<std::filesystem::path> path;
};

// One noise family swept over `rates`. SCC uses T = (1 - rate) I + rate P for
// the off-diagonal `pattern` P (default: every class flips to the next one).
// REAL reads "label.noisy.<real_key>" from the training bundle.
struct NoiseAxisConfig {
  NoiseModel model = NoiseModel::kUniform;
  std::vector<double> rates{0.0};
  uint64_t seed = 0;
  bool bernoulli = false;
  std::optional<Matrix> pattern;
  std::string real_key;
};

struct ArchitectureConfig {
  std::string name;
  std::vector<int> hidden_dims;
};

struct DetectorConfig {
  std::string method;
  nlohmann::json overrides = nlohmann::json::object();
};

struct AsoComparison {
  std::string a;
  std::string b;
};

struct RunMatrixConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<NoiseAxisConfig> noise;
  std::vector<ArchitectureConfig> architectures;
  std::vector<uint64_t> seeds{0};
  TrainOptions training;
  std::vector<std::string> checkpoints{"early", "last"};
  std::vector<detect::LabelSource> label_sources{detect::LabelSource::kTrain};
  std::vector<DetectorConfig> detectors;
  std::vector<std::string> ood_sets;  // empty: every OOD set of the dataset
  std::vector<AsoComparison> aso;
  metrics::AsoOptions aso_options;
  int workers = 1;
  bool save_states = false;
  std::filesystem::path output;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing fields take the defaults above; unknown keys are a ConfigError.
  static RunMatrixConfig from_json(const nlohmann::json& j);
  static RunMatrixConfig load(const std::filesystem::path& file);
};

// The acceptance benchmark: hypercube mixture, SU noise at 0/0.1/0.2/0.4,
// three seeds, both checkpoints, both label sources, all twenty detectors.
RunMatrixConfig default_acceptance_config();

// Row identity shared by results and failures.
struct CellKey {
  std::string dataset;  // "<name>@<arch>" when several architectures are configured
  std::string noise_model;
  double noise_rate = 0.0;
  uint64_t seed = 0;
  std::string checkpoint;
  std::string label_source;
  std::string detector;

  std::string id() const;  // filesystem-safe, unique per cell
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct ResultRow {
  CellKey key;
  std::string ood_set;
  metrics::AurocTriple auroc;
  double id_accuracy = 0.0;
};

struct FailureRecord {
  CellKey key;
  std::string error;
};

struct AsoRow {
  std::string dataset;
  std::string noise_model;
  double noise_rate = 0.0;
  std::string label_source;
  std::string a;
  std::string b;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::optional<metrics::AsoResult> result;
  std::string reason;  // set when result is absent
};

struct EvalReport {
  std::vector<ResultRow> rows;          // sorted by (key, ood_set)
  std::vector<FailureRecord> failures;  // sorted by key
  std::size_t planned_cells = 0;
  // CRC32 of each cell's raw score bytes, used for the label-source cross-check.
  std::map<std::string, uint32_t> score_crc;
  std::vector<AsoRow> aso;

  // Cells whose scores differ between label sources although their detector
  // does not consume class labels. Empty when the invariant holds.
  std::vector<std::string> label_source_violations() const;
};

struct RunOptions {
  bool resume = false;
  std::ostream* log = nullptr;
};

// Runs every cell, isolating failures. Models and per-cell results are cached
// under config.output (cache/, cells/) so that a resumed run skips finished work.
EvalReport run_matrix(const RunMatrixConfig& config, const RunOptions& options = {});

std::size_t planned_cell_count(const RunMatrixConfig& config);

struct MedianRow {
  CellKey key;
  double auroc_id = 0.0;
  std::optional<double> auroc_correct;
  std::optional<double> auroc_incorrect;
  double id_accuracy = 0.0;
  std::size_t n_ood_sets = 0;
};

// Median over OOD sets for every cell.
std::vector<MedianRow> median_table(const EvalReport& report);

struct BestCaseRow {
  std::string dataset;  // architecture suffix stripped
  std::string noise_model;
  double noise_rate = 0.0;
  std::string label_source;
  std::string detector;
  double auroc_id = 0.0;  // max of the per-cell median over architecture, seed and checkpoint
  std::string best_dataset;
  uint64_t best_seed = 0;
  std::string best_checkpoint;
};

std::vector<BestCaseRow> best_case_table(const EvalReport& report);

struct CorrelationRow {
  std::string detector;
  std::string noise_model;
  std::string label_source;
  std::size_t n = 0;
  std::optional<double> rho;
  std::string reason;  // set when rho is absent
};

// Spearman correlation between ID accuracy and the per-cell median AUROC.
std::vector<CorrelationRow> correlation_table(const EvalReport& report);

std::vector<AsoRow> aso_table(const EvalReport& report, const std::vector<AsoComparison>& comparisons,
                              const metrics::AsoOptions& options);

inline constexpr const char* kRowsHeader =
    "dataset,noise_model,noise_rate,seed,checkpoint,label_source,detector,ood_set,auroc_id,auroc_correct,"
    "auroc_incorrect,n_correct,n_incorrect,n_ood,id_accuracy";

std::string rows_csv(const EvalReport& report);
std::string failures_csv(const EvalReport& report);

// rows.csv, failures.csv, medians.csv, best_case.csv, correlation.csv, aso.csv,
// report.md, config.json and metadata.json.
void emit_reports(const EvalReport& report, const RunMatrixConfig& config, const std::filesystem::path& out_dir);

// Rebuilds a report from a rows.csv / failures.csv pair.
EvalReport read_report(const std::filesystem::path& dir);

std::string format_number(double value);

}  // namespace noisyood::bench
