#include "consurv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <spdlog/spdlog.h>

#include "consurv/error.hpp"

namespace consurv::losses {

namespace ad = consurv::ad;

double weight(int tau_i, int tau_j, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma", "must be positive");
  return -std::expm1(-std::abs(static_cast<double>(tau_i - tau_j)) / sigma);
}

int comparability(int delta_i, int delta_j, int tau_i, int tau_j, double alpha) {
  if (delta_i == 1 && delta_j == 1) return 1;
  if (delta_i == 1 && delta_j == 0 && tau_i < tau_j &&
      static_cast<double>(tau_j - tau_i) >= alpha) {
    return 1;
  }
  return 0;
}

PairWeightMatrix build_pair_weights(std::span<const int> taus, std::span<const int> deltas,
                                    double sigma, double alpha) {
  if (taus.size() != deltas.size()) throw DimensionError("build_pair_weights: length mismatch");
  if (!(sigma > 0.0)) throw ConfigError("sigma", "must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha", "must be non-negative");
  const std::size_t m = taus.size();
  const std::size_t n = 2 * m;
  PairWeightMatrix out{Matrix(n, n), Matrix(n, n), Matrix(n, n), sigma, alpha};
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t i = a % m;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t j = b % m;
      if (i == j) continue;
      out.pool(a, b) = 1.0;
      const int ind = comparability(deltas[i], deltas[j], taus[i], taus[j], alpha);
      out.indicator(a, b) = ind;
      out.weights(a, b) = ind == 1 ? weight(taus[i], taus[j], sigma) : 0.0;
    }
  }
  return out;
}

PairWeightMatrix uniform_pair_weights(std::size_t batch_size) {
  const std::size_t n = 2 * batch_size;
  PairWeightMatrix out{Matrix(n, n), Matrix(n, n), Matrix(n, n), 1.0, 0.0};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a % batch_size == b % batch_size) continue;
      out.pool(a, b) = out.indicator(a, b) = out.weights(a, b) = 1.0;
    }
  }
  return out;
}

void ContrastiveConfig::validate() const {
  if (!(nu > 0.0)) throw ConfigError("nu", "must be positive");
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be non-negative");
}

Var nll_loss(Var hazards, std::span<const int> taus, std::span<const int> deltas) {
  const std::size_t m = hazards.rows();
  const std::size_t horizon = hazards.cols();
  if (m == 0) throw DimensionError("nll_loss: empty batch");
  if (taus.size() != m || deltas.size() != m) throw DimensionError("nll_loss: label mismatch");
  Matrix event_mask(m, horizon);
  Matrix survive_mask(m, horizon);
  for (std::size_t i = 0; i < m; ++i) {
    const auto tau = static_cast<std::size_t>(taus[i]);
    if (taus[i] < 0 || tau >= horizon) throw DimensionError("nll_loss: tau outside horizon");
    // log p = log h(tau) + sum_{t<tau} log(1-h); log S = sum_{t<=tau} log(1-h).
    for (std::size_t t = 0; t < tau; ++t) survive_mask(i, t) = 1.0;
    if (deltas[i] == 1) {
      event_mask(i, tau) = 1.0;
    } else {
      survive_mask(i, tau) = 1.0;
    }
  }
  ad::Tape& tape = *hazards.tape();
  const Var log_h = ad::log(hazards);
  const Var log_1mh = ad::log(ad::add_scalar(ad::scale(hazards, -1.0), 1.0));
  const Var loglik = ad::sum(tape.constant(std::move(event_mask)) * log_h +
                             tape.constant(std::move(survive_mask)) * log_1mh);
  return ad::scale(loglik, -1.0 / static_cast<double>(m));
}

Var snce_loss(Var embeddings, const PairWeightMatrix& weights, double nu) {
  if (!(nu > 0.0)) throw ConfigError("nu", "must be positive");
  const std::size_t n = embeddings.rows();
  if (n < 4 || n % 2 != 0) {
    throw DimensionError("snce_loss: need 2M embeddings with M >= 2, got " + std::to_string(n));
  }
  if (weights.anchors() != n) throw DimensionError("snce_loss: weight matrix size mismatch");
  const std::size_t m = n / 2;
  ad::Tape& tape = *embeddings.tape();

  Matrix positive(n, n);
  Matrix offset(n, 1);
  Matrix contributes(n, 1);
  std::size_t contributing = 0;
  for (std::size_t a = 0; a < n; ++a) {
    positive(a, (a + m) % n) = 1.0;
    double total = 0.0;
    double pool = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      total += weights.weights(a, b);
      pool += weights.pool(a, b);
    }
    if (total > 0.0) {
      // log of the denominator = logsumexp_w(s) - log Z_a, Z_a = total / pool.
      offset[a] = std::log(pool) - std::log(total);
      contributes[a] = 1.0;
      ++contributing;
    }
  }
  if (contributing == 0) {
    spdlog::warn("snce_loss: no anchor has a comparable negative; loss is 0");
    return tape.constant(Matrix::scalar(0.0));
  }

  const Var unit = ad::normalize_rows(embeddings);
  const Var sim = ad::scale(ad::matmul(unit, ad::transpose(unit)), 1.0 / nu);
  const Var log_denominator =
      ad::add(ad::weighted_logsumexp_rows(sim, weights.weights), tape.constant(std::move(offset)));
  const Var log_positive = ad::sum(sim * tape.constant(std::move(positive)), ad::Axis::cols);
  const Var per_anchor = (log_denominator - log_positive) * tape.constant(std::move(contributes));
  return ad::scale(ad::sum(per_anchor), 1.0 / static_cast<double>(contributing));
}

Var infonce_loss(Var embeddings, double nu) {
  const std::size_t n = embeddings.rows();
  if (n < 4 || n % 2 != 0) throw DimensionError("infonce_loss: need M >= 2");
  return snce_loss(embeddings, uniform_pair_weights(n / 2), nu);
}

Var risk_at_event_times(Var hazards, std::span<const int> taus) {
  const std::size_t m = hazards.rows();
  const std::size_t horizon = hazards.cols();
  if (taus.size() != m) throw DimensionError("risk_at_event_times: label mismatch");
  ad::Tape& tape = *hazards.tape();
  Matrix upper(horizon, horizon);  // upper(t', t) = 1 for t' <= t
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t k = 0; k <= t; ++k) upper(k, t) = 1.0;
  }
  Matrix select(horizon, m);  // one-hot column per tau_i
  for (std::size_t i = 0; i < m; ++i) {
    if (taus[i] < 0 || static_cast<std::size_t>(taus[i]) >= horizon) {
      throw DimensionError("risk_at_event_times: tau outside horizon");
    }
    select(static_cast<std::size_t>(taus[i]), i) = 1.0;
  }
  const Var log_1mh = ad::log(ad::add_scalar(ad::scale(hazards, -1.0), 1.0));
  const Var survival = ad::exp(ad::matmul(log_1mh, tape.constant(std::move(upper))));
  // survival_at[j][i] = S(tau_i | x_j)
  const Var survival_at = ad::matmul(survival, tape.constant(std::move(select)));
  return ad::add_scalar(ad::scale(ad::transpose(survival_at), -1.0), 1.0);
}

Var ranking_loss(Var risks, std::span<const int> taus, std::span<const int> deltas, double kappa) {
  if (!(kappa > 0.0)) throw ConfigError("kappa", "must be positive");
  const std::size_t m = risks.rows();
  if (risks.cols() != m || taus.size() != m || deltas.size() != m) {
    throw DimensionError("ranking_loss: shape mismatch");
  }
  ad::Tape& tape = *risks.tape();
  Matrix acceptable(m, m);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j && deltas[i] == 1 && taus[i] < taus[j]) {
        acceptable(i, j) = 1.0;
        ++pairs;
      }
    }
  }
  if (pairs == 0) {
    spdlog::warn("ranking_loss: no acceptable pairs in batch; loss is 0");
    return tape.constant(Matrix::scalar(0.0));
  }
  const Var own = ad::sum(risks * tape.constant(Matrix::identity(m)), ad::Axis::cols);
  // (R[i][j] - R[i][i]) / kappa
  const Var gap = ad::scale(ad::add_col(risks, ad::scale(own, -1.0)), 1.0 / kappa);
  const Var terms = ad::exp(gap) * tape.constant(std::move(acceptable));
  return ad::scale(ad::sum(terms), 1.0 / static_cast<double>(pairs));
}

Var total_loss(Var nll, Var aux, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be non-negative");
  return ad::add(nll, ad::scale(aux, beta));
}

double alpha_from_percentile(std::span<const int> taus, std::span<const int> deltas,
                             double percentile) {
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw ConfigError("alpha_percentile", "must lie in [0, 100]");
  }
  if (taus.empty()) return 0.0;
  const int horizon = *std::max_element(taus.begin(), taus.end()) + 1;
  std::vector<double> events(static_cast<std::size_t>(horizon));
  std::vector<double> censored(static_cast<std::size_t>(horizon));
  for (std::size_t i = 0; i < taus.size(); ++i) {
    (deltas[i] == 1 ? events : censored)[static_cast<std::size_t>(taus[i])] += 1.0;
  }
  // gap_count[g] = number of case-2 pairs with tau_j - tau_i = g.
  std::vector<double> gap_count(static_cast<std::size_t>(horizon));
  double total = 0.0;
  for (int t = 0; t < horizon; ++t) {
    for (int u = t + 1; u < horizon; ++u) {
      const double c = events[static_cast<std::size_t>(t)] * censored[static_cast<std::size_t>(u)];
      gap_count[static_cast<std::size_t>(u - t)] += c;
      total += c;
    }
  }
  if (total == 0.0) return 0.0;
  // Value at 0-based rank r of the sorted gap list.
  auto value_at = [&](double rank) {
    double seen = 0.0;
    for (std::size_t g = 0; g < gap_count.size(); ++g) {
      seen += gap_count[g];
      if (rank < seen) return static_cast<double>(g);
    }
    return static_cast<double>(gap_count.size() - 1);
  };
  const double pos = percentile / 100.0 * (total - 1.0);
  const double lo = std::floor(pos);
  const double frac = pos - lo;
  const double a = value_at(lo);
  const double b = frac > 0.0 ? value_at(lo + 1.0) : a;
  return a + frac * (b - a);
}

}  // namespace consurv::losses
