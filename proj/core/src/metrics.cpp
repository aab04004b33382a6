#include "consurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "consurv/error.hpp"

namespace consurv::metrics {

namespace {

void check_labels(const Matrix& curves, std::span<const int> taus, std::span<const int> deltas,
                  const char* what) {
  if (curves.rows() != taus.size() || taus.size() != deltas.size()) {
    throw DimensionError(std::string(what) + ": curves and labels disagree in length");
  }
  for (int tau : taus) {
    if (tau < 0 || static_cast<std::size_t>(tau) >= curves.cols()) {
      throw DimensionError(std::string(what) + ": tau outside the curve grid");
    }
  }
}

// Nearest-rank quantile of integer times.
int nearest_rank(std::vector<int> values, double q) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n)));
  return values[std::min(rank, values.size()) - 1];
}

std::string key_of(double q) { return format_number(q); }

}  // namespace

SurvivalCurve kaplan_meier(std::span<const int> taus, std::span<const int> deltas,
                           std::size_t t_max) {
  if (taus.empty()) throw DataError("kaplan_meier: no samples");
  if (taus.size() != deltas.size()) throw DimensionError("kaplan_meier: length mismatch");
  std::vector<double> events(t_max + 1);
  std::vector<double> exits(t_max + 1);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const auto t = static_cast<std::size_t>(std::clamp(taus[i], 0, static_cast<int>(t_max)));
    if (deltas[i] == 1) events[t] += 1.0;
    exits[t] += 1.0;
  }
  SurvivalCurve curve{std::vector<double>(t_max + 1)};
  double at_risk = static_cast<double>(taus.size());
  double s = 1.0;
  for (std::size_t t = 0; t <= t_max; ++t) {
    if (events[t] > 0.0) s *= 1.0 - events[t] / at_risk;
    curve.values[t] = s;
    at_risk -= exits[t];
  }
  return curve;
}

SurvivalCurve censoring_km(std::span<const int> taus, std::span<const int> deltas,
                           std::size_t t_max) {
  std::vector<int> flipped(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) flipped[i] = deltas[i] == 1 ? 0 : 1;
  return kaplan_meier(taus, flipped, t_max);
}

std::optional<double> c_index_td(const Matrix& risks, std::span<const int> taus,
                                 std::span<const int> deltas, int t) {
  check_labels(risks, taus, deltas, "c_index_td");
  double concordant = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (deltas[i] != 1 || taus[i] > t) continue;
    const auto ti = static_cast<std::size_t>(taus[i]);
    const double ri = risks(i, ti);
    for (std::size_t j = 0; j < taus.size(); ++j) {
      if (taus[j] <= taus[i]) continue;
      const double rj = risks(j, ti);
      pairs += 1.0;
      concordant += ri > rj ? 1.0 : (ri == rj ? 0.5 : 0.0);
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return concordant / pairs;
}

double c_index_integrated(const Matrix& risks, std::span<const int> taus,
                          std::span<const int> deltas) {
  check_labels(risks, taus, deltas, "c_index_integrated");
  const std::size_t horizon = risks.cols();
  // Pairs grouped by the anchor's event time.
  std::vector<double> new_pairs(horizon);
  std::vector<double> new_concordant(horizon);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (deltas[i] != 1) continue;
    const auto ti = static_cast<std::size_t>(taus[i]);
    const double ri = risks(i, ti);
    for (std::size_t j = 0; j < taus.size(); ++j) {
      if (taus[j] <= taus[i]) continue;
      const double rj = risks(j, ti);
      new_pairs[ti] += 1.0;
      new_concordant[ti] += ri > rj ? 1.0 : (ri == rj ? 0.5 : 0.0);
    }
  }
  double cum_pairs = 0.0;
  double cum_concordant = 0.0;
  double weighted = 0.0;
  double total_weight = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    cum_pairs += new_pairs[t];
    cum_concordant += new_concordant[t];
    if (new_pairs[t] == 0.0) continue;
    weighted += new_pairs[t] * (cum_concordant / cum_pairs);
    total_weight += new_pairs[t];
  }
  if (total_weight == 0.0) throw DataError("c_index_integrated: no comparable pairs");
  return weighted / total_weight;
}

double brier_score(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas,
                   int t, const SurvivalCurve& censor_km) {
  check_labels(survival, taus, deltas, "brier_score");
  if (t < 0 || static_cast<std::size_t>(t) >= survival.cols()) {
    throw DimensionError("brier_score: time outside grid");
  }
  const auto tt = static_cast<std::size_t>(t);
  const double g_t = std::max(censor_km.at(t), kCensorFloor);
  double total = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double s = survival(i, tt);
    if (taus[i] <= t && deltas[i] == 1) {
      total += s * s / std::max(censor_km.at(taus[i] - 1), kCensorFloor);
    } else if (taus[i] > t) {
      total += (1.0 - s) * (1.0 - s) / g_t;
    }
  }
  return total / static_cast<double>(taus.size());
}

int ibs_horizon(std::span<const int> taus) {
  if (taus.empty()) throw DataError("ibs: no samples");
  return nearest_rank(std::vector<int>(taus.begin(), taus.end()), kIbsHorizonQuantile);
}

double trapezoid_mean(std::span<const double> values) {
  if (values.size() < 2) throw DataError("trapezoid_mean: degenerate interval");
  double area = 0.0;
  for (std::size_t k = 1; k < values.size(); ++k) area += 0.5 * (values[k - 1] + values[k]);
  return area / static_cast<double>(values.size() - 1);
}

double ibs(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas,
           const SurvivalCurve& censor_km) {
  check_labels(survival, taus, deltas, "ibs");
  const int horizon = ibs_horizon(taus);
  if (horizon <= 0) throw DataError("ibs: degenerate integration interval");
  std::vector<double> bs;
  bs.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int t = 0; t <= horizon; ++t) bs.push_back(brier_score(survival, taus, deltas, t, censor_km));
  return trapezoid_mean(bs);
}

double ibs(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas) {
  return ibs(survival, taus, deltas, censoring_km(taus, deltas, survival.cols() - 1));
}

std::size_t calibration_bin(double p) {
  const double clamped = std::clamp(p, 0.0, 1.0);
  return std::min<std::size_t>(kCalibrationBins - 1,
                               static_cast<std::size_t>(clamped * kCalibrationBins));
}

std::vector<double> survival_at_events(const Matrix& survival, std::span<const int> taus,
                                       std::span<const int> deltas) {
  check_labels(survival, taus, deltas, "survival_at_events");
  std::vector<double> out;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (deltas[i] == 1) out.push_back(survival(i, static_cast<std::size_t>(taus[i])));
  }
  return out;
}

double ddc_from_values(std::span<const double> probabilities) {
  if (probabilities.empty()) throw DataError("ddc: no uncensored samples");
  std::array<double, kCalibrationBins> counts{};
  for (double p : probabilities) counts[calibration_bin(p)] += 1.0;
  const double k = static_cast<double>(kCalibrationBins);
  const double total = static_cast<double>(probabilities.size()) + 0.5 * k;
  double kl = 0.0;
  for (double c : counts) {
    const double p = (c + 0.5) / total;
    kl += p * std::log(k * p);
  }
  return std::clamp(kl / std::log(k), 0.0, 1.0);
}

double ddc(const Matrix& survival, std::span<const int> taus, std::span<const int> deltas) {
  return ddc_from_values(survival_at_events(survival, taus, deltas));
}

double chi_squared_sf(double statistic, double dof) {
  if (statistic <= 0.0) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

DCalibration d_calibration_from_values(std::span<const double> probabilities) {
  if (probabilities.size() < kCalibrationBins) {
    throw DataError("d_calibration: need at least 10 uncensored samples, got " +
                    std::to_string(probabilities.size()));
  }
  DCalibration out;
  for (double p : probabilities) ++out.counts[calibration_bin(p)];
  const double expected =
      static_cast<double>(probabilities.size()) / static_cast<double>(kCalibrationBins);
  for (std::size_t c : out.counts) {
    const double d = static_cast<double>(c) - expected;
    out.statistic += d * d / expected;
  }
  out.p_value = chi_squared_sf(out.statistic, static_cast<double>(kCalibrationBins - 1));
  return out;
}

DCalibration d_calibration(const Matrix& survival, std::span<const int> taus,
                           std::span<const int> deltas) {
  return d_calibration_from_values(survival_at_events(survival, taus, deltas));
}

double wasserstein_to_km(std::span<const double> model_curve, std::span<const double> km_curve) {
  if (model_curve.size() != km_curve.size() || model_curve.empty()) {
    throw DimensionError("wasserstein_to_km: curves are on different grids");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < model_curve.size(); ++t) {
    total += std::abs(model_curve[t] - km_curve[t]);
  }
  return total / static_cast<double>(model_curve.size());
}

std::vector<double> default_quantiles(std::size_t count) {
  std::vector<double> q(count);
  for (std::size_t k = 0; k < count; ++k) {
    q[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(count);
  }
  return q;
}

std::vector<std::pair<double, double>> calibration_plot_from_values(
    std::span<const double> survival_at_events, std::span<const double> quantiles) {
  std::vector<double> risks(survival_at_events.begin(), survival_at_events.end());
  for (double& r : risks) r = 1.0 - r;
  std::sort(risks.begin(), risks.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(quantiles.size());
  for (double q : quantiles) {
    const auto below = std::upper_bound(risks.begin(), risks.end(), q) - risks.begin();
    const double observed =
        risks.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(risks.size());
    out.emplace_back(q, observed);
  }
  return out;
}

std::vector<std::pair<double, double>> calibration_plot_data(const Matrix& survival,
                                                             std::span<const int> taus,
                                                             std::span<const int> deltas,
                                                             std::span<const double> quantiles) {
  return calibration_plot_from_values(survival_at_events(survival, taus, deltas), quantiles);
}

std::vector<double> mean_curve(const Matrix& survival) {
  std::vector<double> out(survival.cols());
  if (survival.rows() == 0) return out;
  for (std::size_t i = 0; i < survival.rows(); ++i) {
    for (std::size_t t = 0; t < survival.cols(); ++t) out[t] += survival(i, t);
  }
  for (double& v : out) v /= static_cast<double>(survival.rows());
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

nlohmann::json MetricReport::to_json() const {
  auto json_map = [](const auto& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) {
      if constexpr (std::is_same_v<std::decay_t<decltype(k)>, double>) {
        j[key_of(k)] = std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
      } else {
        j[k] = v;
      }
    }
    return j;
  };
  return {{"ci_integrated", ci_integrated},
          {"ci_at", json_map(ci_at)},
          {"ibs", ibs},
          {"bs_at", json_map(bs_at)},
          {"ddc", ddc},
          {"dcal_statistic", dcal_statistic},
          {"dcal_pvalue", dcal_pvalue},
          {"dcal_pass", dcal_passed()},
          {"wasserstein", json_map(wasserstein)}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.ci_integrated = j.at("ci_integrated").get<double>();
  r.ibs = j.at("ibs").get<double>();
  r.ddc = j.at("ddc").get<double>();
  r.dcal_statistic = j.at("dcal_statistic").get<double>();
  r.dcal_pvalue = j.at("dcal_pvalue").get<double>();
  const auto read = [](const nlohmann::json& m, std::map<double, double>& out) {
    for (const auto& [k, v] : m.items()) {
      out[std::stod(k)] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  };
  if (j.contains("ci_at")) read(j.at("ci_at"), r.ci_at);
  if (j.contains("bs_at")) read(j.at("bs_at"), r.bs_at);
  if (j.contains("wasserstein")) {
    for (const auto& [k, v] : j.at("wasserstein").items()) r.wasserstein[k] = v.get<double>();
  }
  return r;
}

std::string MetricReport::csv_header() { return "ci,ibs,ddc,dcal_pass"; }

std::string MetricReport::csv_row() const {
  return format_number(ci_integrated) + "," + format_number(ibs) + "," + format_number(ddc) + "," +
         (dcal_passed() ? "1" : "0");
}

MetricReport evaluate(const Matrix& survival, std::span<const int> taus,
                      std::span<const int> deltas) {
  check_labels(survival, taus, deltas, "evaluate");
  Matrix risks(survival.rows(), survival.cols());
  for (std::size_t i = 0; i < survival.size(); ++i) risks[i] = 1.0 - survival[i];

  MetricReport r;
  r.ci_integrated = c_index_integrated(risks, taus, deltas);
  const SurvivalCurve g = censoring_km(taus, deltas, survival.cols() - 1);
  r.ibs = ibs(survival, taus, deltas, g);

  std::vector<int> event_times;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (deltas[i] == 1) event_times.push_back(taus[i]);
  }
  for (double q : kReportQuantiles) {
    const int t = nearest_rank(event_times, q);
    const auto c = c_index_td(risks, taus, deltas, t);
    r.ci_at[q] = c.value_or(std::numeric_limits<double>::quiet_NaN());
    r.bs_at[q] = brier_score(survival, taus, deltas, t, g);
  }
  const auto at_events = survival_at_events(survival, taus, deltas);
  r.ddc = ddc_from_values(at_events);
  if (at_events.size() >= kCalibrationBins) {
    const DCalibration d = d_calibration_from_values(at_events);
    r.dcal_statistic = d.statistic;
    r.dcal_pvalue = d.p_value;
  } else {
    r.dcal_statistic = std::numeric_limits<double>::quiet_NaN();
    r.dcal_pvalue = 0.0;
  }
  return r;
}

}  // namespace consurv::metrics
