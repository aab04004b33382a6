#pragma once

// Discrimination and calibration metrics for discrete-time survival curves.
//
// Curves are passed as an n x (T_max + 1) matrix whose row i holds
// S(t | x_i) for t = 0..T_max. Labels are discrete taus and event flags.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "consurv/autodiff.hpp"

namespace consurv::metrics {

using ad::Matrix;

inline constexpr std::size_t kCalibrationBins = 10;
inline constexpr double kCensorFloor = 1e-3;
inline constexpr double kIbsHorizonQuantile = 0.95;
inline constexpr double kDcalAlpha = 0.05;

/// Non-increasing step curve on the grid 0..T_max.
struct SurvivalCurve {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t t) const { return values[t]; }
  /// S(t), with S(-1) = 1.
  double at(long t) const { return t < 0 ? 1.0 : values[static_cast<std::size_t>(t)]; }
};

/// Product-limit estimate over distinct event times, evaluated on 0..t_max.
SurvivalCurve kaplan_meier(std::span<const int> taus, std::span<const int> deltas,
                           std::size_t t_max);
/// Kaplan-Meier of the censoring distribution (event flags flipped).
SurvivalCurve censoring_km(std::span<const int> taus, std::span<const int> deltas,
                           std::size_t t_max);

/// Fraction of comparable pairs (delta_i = 1, tau_i <= t, tau_i < tau_j) with
/// risk(i, tau_i) > risk(j, tau_i); ties count 1/2. nullopt if no pairs.
std::optional<double> c_index_td(const Matrix& risks, std::span<const int> taus,
                                 std::span<const int> deltas, int t);

/// Average of c_index_td over the distinct event times, weighted by the
/// number of pairs that become comparable at each time.
double c_index_integrated(const Matrix& risks, std::span<const int> taus,
                          std::span<const int> deltas);

/// IPCW Brier score at time t.
double brier_score(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas,
                   int t, const SurvivalCurve& censor_km);

/// Integration limit: 95th percentile of observed times (nearest rank).
int ibs_horizon(std::span<const int> taus);
/// Trapezoidal mean of values on 0, 1, ..., K.
double trapezoid_mean(std::span<const double> values);
/// Trapezoidal mean of the Brier score over [0, ibs_horizon].
double ibs(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas);
double ibs(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas,
           const SurvivalCurve& censor_km);

/// Bin index of a probability among ten equal-width bins on [0, 1].
std::size_t calibration_bin(double p);
/// S(tau_i | x_i) over uncensored rows.
std::vector<double> survival_at_events(const Matrix& survival, std::span<const int> taus,
                                       std::span<const int> deltas);

/// Normalized KL divergence (ln 10 scale) between the smoothed histogram of
/// probabilities and the uniform distribution, clipped to [0, 1].
double ddc_from_values(std::span<const double> probabilities);
double ddc(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas);

struct DCalibration {
  std::array<std::size_t, kCalibrationBins> counts{};
  double statistic = 0.0;
  double p_value = 1.0;

  bool passed() const noexcept { return p_value > kDcalAlpha; }
};

/// Upper tail of the chi-squared distribution.
double chi_squared_sf(double statistic, double dof);
DCalibration d_calibration_from_values(std::span<const double> probabilities);
DCalibration d_calibration(const Matrix& survival, std::span<const int> taus,
                           std::span<const int> deltas);

/// sum_t |a(t) - b(t)| / (number of grid points).
double wasserstein_to_km(std::span<const double> model_curve, std::span<const double> km_curve);

/// Midpoints (k + 0.5) / count.
std::vector<double> default_quantiles(std::size_t count);
/// (q, fraction of uncensored rows with 1 - S(tau_i | x_i) <= q) per q.
std::vector<std::pair<double, double>> calibration_plot_data(const Matrix& survival,
                                                             std::span<const int> taus,
                                                             std::span<const int> deltas,
                                                             std::span<const double> quantiles);
/// Same, from precomputed S(tau_i | x_i) of uncensored rows.
std::vector<std::pair<double, double>> calibration_plot_from_values(
    std::span<const double> survival_at_events, std::span<const double> quantiles);

/// Column-wise mean of a set of curves.
std::vector<double> mean_curve(const Matrix& survival);

struct MetricReport {
  double ci_integrated = 0.0;
  std::map<double, double> ci_at;
  double ibs = 0.0;
  std::map<double, double> bs_at;
  double ddc = 0.0;
  double dcal_statistic = 0.0;
  double dcal_pvalue = 1.0;
  std::map<std::string, double> wasserstein;

  bool dcal_passed() const noexcept { return dcal_pvalue > kDcalAlpha; }

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// CI, IBS, DDC, D-CAL pass flag.
  static std::string csv_header();
  std::string csv_row() const;
};

/// Percentiles of event times at which ci_at and bs_at are reported.
inline constexpr std::array<double, 3> kReportQuantiles{0.25, 0.50, 0.75};

/// Every metric of the report on one evaluation set.
MetricReport evaluate(const Matrix& survival, std::span<const int> taus,
                      std::span<const int> deltas);

/// Fixed-format number used in every CSV this library writes.
std::string format_number(double v);

}  // namespace consurv::metrics
