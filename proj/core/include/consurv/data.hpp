#pragma once

// Tabular survival data: CSV ingest, time discretization, stratified
// splitting, train-fitted preprocessing, marginal corruption and batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "consurv/autodiff.hpp"
#include "consurv/random.hpp"

namespace consurv::data {

using ad::Matrix;

enum class FeatureKind { real, binary, categorical };
enum class ColumnRole { feature, time, event };

struct ColumnSpec {
  std::string name;
  FeatureKind kind = FeatureKind::real;
  ColumnRole role = ColumnRole::feature;
};

/// Column declarations of an input CSV. Exactly one time and one event column.
struct Schema {
  std::vector<ColumnSpec> columns;

  static Schema from_json(const nlohmann::json& j);
  static Schema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const ColumnSpec& time_column() const;
  const ColumnSpec& event_column() const;
};

/// One input column before preprocessing. Missing entries are NaN;
/// categorical values hold the index into `levels`.
struct RawFeature {
  std::string name;
  FeatureKind kind = FeatureKind::real;
  std::vector<double> values;
  std::vector<std::string> levels;
};

struct RawDataset {
  std::vector<RawFeature> features;
  std::vector<double> times;
  std::vector<int> events;
  /// Rows dropped because time or event was missing.
  std::size_t rejected_rows = 0;

  std::size_t size() const noexcept { return times.size(); }
};

RawDataset parse_csv(std::istream& in, const Schema& schema);
RawDataset load_csv(const std::filesystem::path& path, const Schema& schema);

/// Equal-width bins over [0, max_time].
struct TimeGrid {
  double max_time = 0.0;
  std::size_t n_bins = 0;

  double width() const noexcept { return max_time / static_cast<double>(n_bins); }
  std::size_t t_max() const noexcept { return n_bins - 1; }
  /// Bin index, clamped to [0, t_max].
  int bin(double t) const;
  /// Bin index without the upper clamp (for times beyond the horizon).
  long bin_unclamped(double t) const;
  double midpoint(int tau) const;
  std::vector<double> edges() const;

  nlohmann::json to_json() const;
  static TimeGrid from_json(const nlohmann::json& j);
};

struct Discretized {
  TimeGrid grid;
  std::vector<int> taus;
};

/// min(100, number of distinct times).
std::size_t default_bin_count(std::span<const double> times);
Discretized discretize(std::span<const double> times, std::size_t n_bins);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> validation;
};

inline constexpr double kTrainFraction = 0.64;
inline constexpr double kTestFraction = 0.20;

/// 0.64 : 0.20 : 0.16 split, stratified by event indicator.
Split split(std::span<const int> events, std::uint64_t seed);

/// Median/mode imputation and min-max normalization fitted on training rows,
/// with categorical columns expanded to one-hot blocks.
class Preprocessor {
 public:
  Preprocessor() = default;

  static Preprocessor fit(const RawDataset& raw, std::span<const std::size_t> train_rows);

  Matrix transform(const RawDataset& raw, std::span<const std::size_t> rows) const;
  std::size_t output_dim() const noexcept { return output_names_.size(); }
  const std::vector<std::string>& output_names() const noexcept { return output_names_; }
  /// Output column range [first, first + width) produced by raw feature `name`.
  std::pair<std::size_t, std::size_t> columns_of(const std::string& name) const;

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);

 private:
  struct Column {
    std::string name;
    FeatureKind kind = FeatureKind::real;
    double fill = 0.0;
    double lo = 0.0;
    double hi = 1.0;
    std::size_t levels = 0;
  };
  std::vector<Column> columns_;
  std::vector<std::string> output_names_;
};

/// Rows of (x, tau, delta) after preprocessing.
struct SurvivalData {
  Matrix x;
  std::vector<int> tau;
  std::vector<int> delta;
  std::size_t t_max = 0;

  std::size_t size() const noexcept { return tau.size(); }
  std::size_t dim() const noexcept { return x.cols(); }
  SurvivalData subset(std::span<const std::size_t> rows) const;
};

/// Fully prepared dataset for one seed.
struct PreparedData {
  TimeGrid grid;
  Preprocessor preprocessor;
  Split split;
  SurvivalData train;
  SurvivalData validation;
  SurvivalData test;
};

/// Discretize, split with `seed`, fit preprocessing on train and transform
/// all three parts. `n_bins == 0` selects default_bin_count().
PreparedData prepare(const RawDataset& raw, std::size_t n_bins, std::uint64_t seed);

/// Number of coordinates replaced per row at corruption rate `rate`.
std::size_t corrupted_count(std::size_t dim, double rate);

/// Replaces a uniformly chosen fraction-`rate` subset of each row's
/// coordinates with draws from the column marginals of `pool`.
Matrix corrupt(const Matrix& features, const Matrix& pool, double rate, Rng& rng);

struct Batch {
  std::vector<std::size_t> rows;
  Matrix x;
  Matrix x_corrupted;
  std::vector<int> tau;
  std::vector<int> delta;

  std::size_t size() const noexcept { return rows.size(); }
};

/// Index groups of one epoch: a random permutation cut into chunks of
/// `batch_size`; a trailing chunk with fewer than two rows is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng);

/// Gathers rows of `data` and their corrupted views drawn from `pool`.
Batch make_batch(const SurvivalData& data, std::span<const std::size_t> rows, const Matrix& pool,
                 double corruption_rate, Rng& rng);

/// Epoch-wise batch stream with private RNG state.
class BatchIterator {
 public:
  BatchIterator(const SurvivalData& data, std::size_t batch_size, std::uint64_t seed,
                double corruption_rate);

  /// All batches of the next epoch.
  std::vector<Batch> next_epoch();

 private:
  const SurvivalData* data_;
  std::size_t batch_size_;
  double corruption_rate_;
  Rng order_rng_;
  Rng corrupt_rng_;
};

}  // namespace consurv::data
