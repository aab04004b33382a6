#pragma once

// Experiment harness behind the command-line tool: dataset loading, fan-out
// of (variant, seed) training jobs, evaluation and aggregation into
// deterministic CSV/JSON files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "consurv/data.hpp"
#include "consurv/metrics.hpp"
#include "consurv/model.hpp"
#include "consurv/synth.hpp"
#include "consurv/trainer.hpp"

namespace consurv::experiment {

namespace fs = std::filesystem;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputEnv = "CONSURV_OUT";

struct DatasetSpec {
  fs::path csv;
  fs::path schema;
  /// Generate instead of loading when set.
  std::optional<synth::SynthConfig> synthetic;
  /// 0 selects the default bin count.
  std::size_t n_bins = 0;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j, const fs::path& base);
};

struct ExperimentSpec {
  DatasetSpec dataset;
  std::vector<trainer::Variant> variants{trainer::Variant::consurv};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  /// Architecture; input_dim and t_max are filled from the data.
  model::ModelConfig model;
  trainer::TrainConfig train;
  /// Overrides train.alpha with this percentile of case-2 gaps when set.
  std::optional<double> alpha_percentile;
  fs::path output_dir = "consurv_out";
  std::size_t jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentSpec from_json(const nlohmann::json& j, const fs::path& base = {});
  static ExperimentSpec load(const fs::path& path);
};

/// Output root: $CONSURV_OUT if set, otherwise "consurv_out".
fs::path default_output_dir();

/// Raw dataset named by the spec (loaded or generated).
data::RawDataset load_dataset(const DatasetSpec& spec);

/// Checkpoint, log and metrics locations of one job.
struct JobPaths {
  fs::path dir;
  fs::path checkpoint;
  fs::path log;
  fs::path metrics;
};
JobPaths job_paths(const fs::path& root, trainer::Variant variant, std::uint64_t seed);

/// MetricReport of `model` on `set`.
metrics::MetricReport evaluate_model(const model::HazardModel& model,
                                     const data::SurvivalData& set);

struct SeedResult {
  trainer::Variant variant = trainer::Variant::consurv;
  std::uint64_t seed = 0;
  metrics::MetricReport report;
};

struct Summary {
  trainer::Variant variant = trainer::Variant::consurv;
  std::size_t n = 0;
  double ci_mean = 0.0;
  double ci_std = 0.0;
  double ibs_mean = 0.0;
  double ibs_std = 0.0;
  double ddc_mean = 0.0;
  double ddc_std = 0.0;
  /// Number of seeds whose D-calibration test passed.
  std::size_t dcal_count = 0;
};

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);
/// One Summary per variant, in first-appearance order.
std::vector<Summary> summarize(const std::vector<SeedResult>& results);

std::string per_seed_csv(const std::vector<SeedResult>& results);
std::string summary_csv(const std::vector<Summary>& summaries);

/// Train every (variant, seed) job; writes checkpoint and log per job.
/// Validates the whole spec before any training starts.
void cmd_train(const ExperimentSpec& spec);

/// Loads each job's checkpoint, evaluates it on its seed's test split and
/// writes per-seed and aggregate metric files. Throws DataError on a missing
/// checkpoint.
std::vector<SeedResult> cmd_evaluate(const ExperimentSpec& spec);

/// cmd_train then cmd_evaluate over all four variants.
std::vector<SeedResult> cmd_ablate(ExperimentSpec spec);

struct SubgroupResult {
  std::string group;
  std::size_t size = 0;
  std::vector<double> model_curve;
  std::vector<double> km_curve;
  double wasserstein = 0.0;
};

/// Mean predicted curve vs Kaplan-Meier per level of a binary or categorical
/// feature on `split` ("train", "validation" or "test"). Groups with fewer
/// than five rows are skipped with a warning.
std::vector<SubgroupResult> subgroup_analysis(const model::HazardModel& model,
                                              const data::RawDataset& raw,
                                              const data::PreparedData& prepared,
                                              const std::string& feature,
                                              const std::string& split);

/// Groups of rows by precomputed curves; the building block of subgroup_analysis.
std::vector<SubgroupResult> subgroup_curves(const metrics::Matrix& survival,
                                            std::span<const int> taus,
                                            std::span<const int> deltas,
                                            const std::vector<std::string>& labels);

std::vector<SubgroupResult> cmd_subgroup(const ExperimentSpec& spec, const fs::path& checkpoint,
                                         const std::string& feature, const std::string& split);

/// One aggregate row per value of `parameter` ("alpha" or "beta").
std::vector<Summary> cmd_sweep(const ExperimentSpec& spec, const std::string& parameter,
                               const std::vector<double>& values);

/// Writes <out>/data.csv, schema.json and (for the exponential process)
/// truth.csv.
void cmd_synth(const synth::SynthConfig& config, const fs::path& out);

struct MarginSummary {
  std::size_t pairs = 0;
  double censoring_mean = 0.0;
  double truth_mean = 0.0;
  /// Fraction of pairs with truth delta >= censoring delta.
  double ordered_fraction = 1.0;
};

MarginSummary summarize_margin(const std::vector<synth::MarginPair>& pairs);
/// Writes <out>/margin_pairs.csv and margin_summary.json.
MarginSummary cmd_margin_study(const synth::SynthConfig& config, std::size_t n_bins,
                               const fs::path& out);

/// Writes `content` only through a temporary file so readers never see a
/// partial file.
void write_file(const fs::path& path, const std::string& content);

}  // namespace consurv::experiment
