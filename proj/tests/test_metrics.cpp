#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "consurv/error.hpp"
#include "consurv/metrics.hpp"
#include "consurv/random.hpp"
#include "consurv/synth.hpp"

using namespace consurv;
using metrics::Matrix;

namespace {

// Product over distinct event times s <= t of (1 - d_s / n_s), with the
// counts taken by enumeration.
std::vector<double> km_oracle(const std::vector<int>& taus, const std::vector<int>& deltas,
                              int t_max) {
  std::set<int> event_times;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (deltas[i] == 1) event_times.insert(taus[i]);
  }
  std::vector<double> curve;
  for (int t = 0; t <= t_max; ++t) {
    double s = 1.0;
    for (int e : event_times) {
      if (e > t) break;
      double d = 0.0;
      double n = 0.0;
      for (std::size_t i = 0; i < taus.size(); ++i) {
        if (taus[i] == e && deltas[i] == 1) d += 1.0;
        if (taus[i] >= e) n += 1.0;
      }
      s *= 1.0 - d / n;
    }
    curve.push_back(s);
  }
  return curve;
}

double pair_score(double ri, double rj) { return ri > rj ? 1.0 : (ri == rj ? 0.5 : 0.0); }

// O(n^2 T): pointwise C-index by enumeration at every grid point, then the
// weighted average over points where new pairs become comparable.
double ci_oracle(const Matrix& risks, const std::vector<int>& taus, const std::vector<int>& deltas) {
  double weighted = 0.0;
  double total = 0.0;
  for (int t = 0; t < static_cast<int>(risks.cols()); ++t) {
    double newly = 0.0;
    double concordant = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < taus.size(); ++i) {
      for (std::size_t j = 0; j < taus.size(); ++j) {
        if (deltas[i] != 1 || taus[i] > t || taus[i] >= taus[j]) continue;
        const auto ti = static_cast<std::size_t>(taus[i]);
        pairs += 1.0;
        concordant += pair_score(risks(i, ti), risks(j, ti));
        if (taus[i] == t) newly += 1.0;
      }
    }
    if (newly > 0.0) {
      weighted += newly * concordant / pairs;
      total += newly;
    }
  }
  return weighted / total;
}

Matrix constant_curves(std::size_t n, std::size_t cols, double v) { return Matrix(n, cols, v); }

}  // namespace

TEST_CASE("kaplan-meier hand example") {
  const std::vector<int> taus{1, 2, 3};
  const std::vector<int> deltas{1, 0, 1};
  const auto s = metrics::kaplan_meier(taus, deltas, 4);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s[3] == 0.0);
  CHECK(s[4] == 0.0);
  CHECK(s.at(-1) == 1.0);

  for (double v : metrics::kaplan_meier(taus, std::vector<int>{0, 0, 0}, 4).values) CHECK(v == 1.0);
  const auto full = metrics::kaplan_meier(std::vector<int>{0, 1, 1, 3}, std::vector<int>{1, 1, 1, 1}, 3);
  CHECK(full[0] == 0.75);
  CHECK(full[1] == 0.25);
  CHECK(full[2] == 0.25);
  CHECK(full[3] == 0.0);
  CHECK_THROWS_AS(metrics::kaplan_meier(std::vector<int>{}, std::vector<int>{}, 3), DataError);
}

TEST_CASE("kaplan-meier matches the product-limit oracle exhaustively") {
  // Every time vector over {0,1,2} with 8 records and every censoring pattern.
  std::vector<int> taus(8);
  std::vector<int> deltas(8);
  double worst = 0.0;
  for (int code = 0; code < 6561; ++code) {
    int c = code;
    for (int& t : taus) {
      t = c % 3;
      c /= 3;
    }
    for (int pattern = 0; pattern < 256; ++pattern) {
      for (int k = 0; k < 8; ++k) deltas[static_cast<std::size_t>(k)] = (pattern >> k) & 1;
      const auto got = metrics::kaplan_meier(taus, deltas, 2);
      const auto expect = km_oracle(taus, deltas, 2);
      for (std::size_t t = 0; t < 3; ++t) worst = std::max(worst, std::abs(got[t] - expect[t]));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("censoring km flips the event flags") {
  const std::vector<int> taus{0, 2, 2, 5};
  const std::vector<int> deltas{1, 0, 1, 0};
  const auto g = metrics::censoring_km(taus, deltas, 5);
  const auto flipped = metrics::kaplan_meier(taus, std::vector<int>{0, 1, 0, 1}, 5);
  CHECK(g.values == flipped.values);
}

TEST_CASE("c-index conventions") {
  const std::vector<int> taus{0, 1, 2, 3};
  const std::vector<int> deltas{1, 1, 1, 1};
  Matrix ordered(4, 4);
  Matrix reversed(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t t = 0; t < 4; ++t) {
      ordered(i, t) = 1.0 - 0.2 * static_cast<double>(i);
      reversed(i, t) = 0.2 * static_cast<double>(i);
    }
  }
  CHECK(metrics::c_index_td(ordered, taus, deltas, 3).value() == 1.0);
  CHECK(metrics::c_index_td(reversed, taus, deltas, 3).value() == 0.0);
  CHECK(metrics::c_index_td(Matrix(4, 4, 0.3), taus, deltas, 3).value() == 0.5);
  CHECK(metrics::c_index_integrated(ordered, taus, deltas) == 1.0);
  CHECK_FALSE(metrics::c_index_td(ordered, taus, std::vector<int>{0, 0, 0, 0}, 3).has_value());
  CHECK_THROWS_AS(metrics::c_index_integrated(ordered, taus, std::vector<int>{0, 0, 0, 0}),
                  DataError);
}

TEST_CASE("c-index matches enumeration on random instances") {
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    const std::size_t t_max = 1 + uniform_index(rng, 12);
    std::vector<int> taus(n);
    std::vector<int> deltas(n);
    Matrix risks(n, t_max + 1);
    for (std::size_t i = 0; i < n; ++i) {
      taus[i] = static_cast<int>(uniform_index(rng, t_max + 1));
      deltas[i] = uniform01(rng) < 0.6 ? 1 : 0;
      // Coarse values so ties occur.
      for (std::size_t t = 0; t <= t_max; ++t) risks(i, t) = static_cast<double>(uniform_index(rng, 6)) / 5.0;
    }
    deltas[0] = 1;
    taus[0] = 0;
    taus[1] = static_cast<int>(t_max);
    worst = std::max(worst, std::abs(metrics::c_index_integrated(risks, taus, deltas) -
                                     ci_oracle(risks, taus, deltas)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("c-index of random risks is near one half") {
  Rng rng(3);
  const std::size_t n = 2000;
  std::vector<int> taus(n);
  std::vector<int> deltas(n);
  Matrix risks(n, 21);
  std::size_t events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    taus[i] = static_cast<int>(uniform_index(rng, 21));
    deltas[i] = uniform01(rng) < 0.5 ? 1 : 0;
    events += static_cast<std::size_t>(deltas[i]);
    for (std::size_t t = 0; t < 21; ++t) risks(i, t) = uniform01(rng);
  }
  const double ci = metrics::c_index_integrated(risks, taus, deltas);
  CHECK(std::abs(ci - 0.5) < 3.0 * 0.5 / std::sqrt(static_cast<double>(events)));
}

TEST_CASE("brier score") {
  const std::vector<int> taus{0, 1, 2, 3, 4};
  const std::vector<int> deltas(5, 1);
  const auto g = metrics::censoring_km(taus, deltas, 4);
  Matrix step(5, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t t = 0; t < 5; ++t) step(i, t) = t < i ? 1.0 : 0.0;
  }
  for (int t = 0; t < 5; ++t) {
    CHECK(metrics::brier_score(step, taus, deltas, t, g) == 0.0);
    CHECK(metrics::brier_score(constant_curves(5, 5, 0.5), taus, deltas, t, g) == 0.25);
  }
  CHECK(metrics::ibs(constant_curves(5, 5, 0.5), taus, deltas) == doctest::Approx(0.25));
  CHECK(metrics::ibs(step, taus, deltas) == 0.0);

  // Uncensored data reduces to the mean squared error against 1(tau > t).
  Rng rng(5);
  Matrix s(5, 5);
  for (double& v : s.data()) v = uniform01(rng);
  for (int t = 0; t < 5; ++t) {
    double mse = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const double y = taus[i] > t ? 1.0 : 0.0;
      mse += (s(i, static_cast<std::size_t>(t)) - y) * (s(i, static_cast<std::size_t>(t)) - y);
    }
    CHECK(metrics::brier_score(s, taus, deltas, t, g) == doctest::Approx(mse / 5.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(metrics::brier_score(s, taus, deltas, 5, g), DimensionError);
}

TEST_CASE("trapezoid and horizon") {
  const std::vector<double> three{0.0, 0.2, 0.1};
  CHECK(metrics::trapezoid_mean(three) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(metrics::trapezoid_mean(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0.25);
  std::vector<int> taus(100);
  for (int i = 0; i < 100; ++i) taus[static_cast<std::size_t>(i)] = i;
  CHECK(metrics::ibs_horizon(taus) == 94);
}

TEST_CASE("ddc") {
  std::vector<double> uniform;
  for (int k = 0; k < 10; ++k) {
    for (int r = 0; r < 100; ++r) uniform.push_back(0.1 * k + 0.05);
  }
  CHECK(metrics::ddc_from_values(uniform) < 1e-15);
  CHECK(metrics::ddc_from_values(std::vector<double>(10000, 0.55)) > 0.99);
  std::vector<double> two(5000, 0.15);
  two.insert(two.end(), 5000, 0.85);
  CHECK(metrics::ddc_from_values(two) == doctest::Approx(std::log(5.0) / std::log(10.0)).epsilon(0.01));
  CHECK_THROWS_AS(metrics::ddc_from_values(std::vector<double>{}), DataError);
}

TEST_CASE("d-calibration") {
  std::vector<double> uniform;
  for (int k = 0; k < 10; ++k) {
    for (int r = 0; r < 7; ++r) uniform.push_back(0.1 * k + 0.01);
  }
  const auto u = metrics::d_calibration_from_values(uniform);
  CHECK(u.statistic == 0.0);
  CHECK(u.p_value == 1.0);
  CHECK(u.passed());
  const auto one = metrics::d_calibration_from_values(std::vector<double>(40, 0.95));
  CHECK(one.statistic == doctest::Approx(9.0 * 40).epsilon(1e-12));
  CHECK_FALSE(one.passed());
  CHECK(metrics::chi_squared_sf(16.919, 9.0) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK_THROWS_AS(metrics::d_calibration_from_values(std::vector<double>(9, 0.5)), DataError);
}

TEST_CASE("wasserstein") {
  const std::vector<double> a{1.0, 0.8, 0.5, 0.2};
  const std::vector<double> b{0.9, 0.7, 0.4, 0.1};
  CHECK(metrics::wasserstein_to_km(a, a) == 0.0);
  CHECK(metrics::wasserstein_to_km(a, b) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(metrics::wasserstein_to_km(a, b) == metrics::wasserstein_to_km(b, a));
  CHECK_THROWS_AS(metrics::wasserstein_to_km(a, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("calibration plot") {
  synth::OracleConfig cfg;
  cfg.seed = 1;
  const auto oracle = synth::generate_oracle(cfg);
  const auto at_events = oracle.survival_at_events();
  const auto q = metrics::default_quantiles(10);
  const auto plot = metrics::calibration_plot_from_values(at_events, q);
  REQUIRE(plot.size() == 10);
  for (const auto& [pred, obs] : plot) CHECK(std::abs(pred - obs) < 0.05);

  // Overstated risk: S^2 in place of S.
  std::vector<double> squared = at_events;
  for (double& s : squared) s *= s;
  for (const auto& [pred, obs] : metrics::calibration_plot_from_values(squared, q)) {
    CHECK(obs < pred);
  }
}

TEST_CASE("true hazard is well calibrated") {
  synth::OracleConfig cfg;
  cfg.seed = 2;
  const auto oracle = synth::generate_oracle(cfg);
  const auto at_events = oracle.survival_at_events();
  CHECK(metrics::ddc_from_values(at_events) < 0.02);
  // Matrix path agrees with the direct evaluation.
  const Matrix s = oracle.survival_matrix();
  const auto via_matrix = metrics::survival_at_events(s, oracle.data.tau, oracle.data.delta);
  REQUIRE(via_matrix.size() == at_events.size());
  for (std::size_t i = 0; i < at_events.size(); ++i) {
    CHECK(via_matrix[i] == doctest::Approx(at_events[i]).epsilon(1e-12));
  }
}

TEST_CASE("report serialization") {
  Rng rng(8);
  const std::size_t n = 60;
  std::vector<int> taus(n);
  std::vector<int> deltas(n);
  Matrix s(n, 8);
  for (std::size_t i = 0; i < n; ++i) {
    taus[i] = static_cast<int>(uniform_index(rng, 8));
    deltas[i] = uniform01(rng) < 0.7 ? 1 : 0;
    double v = 1.0;
    for (std::size_t t = 0; t < 8; ++t) {
      v *= 1.0 - 0.2 * uniform01(rng);
      s(i, t) = v;
    }
  }
  auto report = metrics::evaluate(s, taus, deltas);
  report.wasserstein["x1=0"] = 0.01;
  report.ci_at[0.5] = std::numeric_limits<double>::quiet_NaN();
  const auto back = metrics::MetricReport::from_json(report.to_json());
  CHECK(back.ci_integrated == report.ci_integrated);
  CHECK(back.ibs == report.ibs);
  CHECK(back.ddc == report.ddc);
  CHECK(back.dcal_pvalue == report.dcal_pvalue);
  CHECK(std::isnan(back.ci_at.at(0.5)));
  CHECK(back.wasserstein.at("x1=0") == 0.01);
  CHECK(report.to_json().dump() == back.to_json().dump());
  CHECK(metrics::MetricReport::csv_header() == "ci,ibs,ddc,dcal_pass");
  CHECK(metrics::format_number(0.1) == "0.100000");
  CHECK(metrics::format_number(std::nan("")) == "nan");
}

TEST_CASE("mean curve") {
  const Matrix s = Matrix::from_rows({{1.0, 0.5}, {0.5, 0.0}});
  CHECK(metrics::mean_curve(s) == std::vector<double>{0.75, 0.25});
}
