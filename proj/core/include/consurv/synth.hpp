#pragma once

// Synthetic survival data: an exponential event/censoring process with hidden
// true times for censored rows, and a discrete-time generator whose hazard is
// known exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "consurv/data.hpp"

namespace consurv::synth {

enum class Generator { appendix_c2, discrete_oracle };

/// Mean or rate reading of the exponential parameter.
enum class ExpParam { scale, rate };

struct SynthConfig {
  std::size_t n_samples = 1000;
  std::size_t feature_dim = 4;
  std::uint64_t seed = 0;
  Generator kind = Generator::appendix_c2;
  ExpParam exp_param = ExpParam::scale;

  void validate() const;
};

/// Exponential process. Times are continuous; discretize via data::prepare.
struct C2Data {
  data::RawDataset raw;
  /// Latent event time T for every row.
  std::vector<double> event_time;
  /// Latent censoring time C for every row.
  std::vector<double> censor_time;
};

/// Parameter of T: (10 x1)^2 + 5 x3. Parameter of C: (10 x2)^2 + 5 x4.
double c2_event_parameter(const std::vector<double>& x);
double c2_censor_parameter(const std::vector<double>& x);

/// x ~ U[0,1]^d; T, C exponential; tau = min(T, C); delta = 1(T <= C).
C2Data generate_c2(const SynthConfig& config);

struct MarginPair {
  std::size_t anchor = 0;
  std::size_t censored = 0;
  long anchor_tau = 0;
  /// |tau_anchor - tau_censored| on the grid.
  long censoring_delta = 0;
  /// |tau_anchor - bin(T_censored)|, unclamped past the horizon.
  long truth_delta = 0;
};

/// Every (uncensored anchor, later censored partner) pair with a gap of at
/// least `alpha` bins, sorted by anchor time then row indices.
std::vector<MarginPair> margin_study(const C2Data& data, std::size_t n_bins = 100,
                                     double alpha = 0.0);

struct OracleConfig {
  std::size_t n_samples = 5000;
  std::size_t feature_dim = 4;
  /// Last grid index; hazards are defined on 0..t_max.
  std::size_t t_max = 1000;
  std::uint64_t seed = 0;
  /// Baseline logits b_t. Empty means constant logit(base_hazard), or with
  /// base_hazard = 0 the hazard 1 / (t_max + 1 - t) of a uniform event time.
  std::vector<double> baseline;
  double base_hazard = 0.0;
  /// Coefficients a; empty means drawn from U[-coef_scale, coef_scale].
  std::vector<double> coefficients;
  double coef_scale = 0.25;
  /// Per-step hazard of independent censoring.
  double censor_hazard = 0.0;
  /// lambda(t_max | x) = 1.
  bool force_terminal = true;

  void validate() const;
};

/// lambda(t | x) = sigmoid(a . x + b_t), sampled exactly.
struct OracleData {
  data::SurvivalData data;
  /// Latent event time per row (t_max + 1 when beyond the horizon).
  std::vector<int> event_time;
  std::vector<double> coefficients;
  std::vector<double> baseline;
  /// a . x per row.
  std::vector<double> linear;
  bool force_terminal = true;

  double hazard(std::size_t row, std::size_t t) const;
  /// S(t | x_row).
  double survival(std::size_t row, std::size_t t) const;
  /// n x (t_max + 1) true hazards / survival curves.
  ad::Matrix hazard_matrix() const;
  ad::Matrix survival_matrix() const;
  /// S(tau_i | x_i) over uncensored rows, without materializing curves.
  std::vector<double> survival_at_events() const;
};

OracleData generate_oracle(const OracleConfig& config);

/// Draws one event time for hazards `lambda` (t_max + 1 when it survives).
int sample_event_time(const std::vector<double>& lambda, Rng& rng);

/// Column declarations of the CSVs written below.
data::Schema synth_schema(std::size_t feature_dim);

/// Features, time and event columns in the data-module CSV shape.
void write_csv(const std::filesystem::path& path, const data::RawDataset& raw);
/// row, event_time, censor_time.
void write_truth_csv(const std::filesystem::path& path, const C2Data& data);
/// data::RawDataset view of oracle data (time = grid index).
data::RawDataset to_raw(const OracleData& data);

}  // namespace consurv::synth
