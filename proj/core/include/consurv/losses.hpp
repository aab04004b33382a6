#pragma once

// Training objectives: discrete-time negative log-likelihood, the pairwise
// ranking loss, InfoNCE, and the survival-outcome-aware contrastive loss whose
// negatives are importance-weighted by event-time differences.
//
// Contrastive batches are laid out as 2M embeddings: rows [0, M) are the
// originals and rows [M, 2M) their corrupted views, view k pairing with
// original k. Every row is an anchor whose positive is its counterpart.

#include <cstddef>
#include <span>

#include "consurv/autodiff.hpp"

namespace consurv::losses {

using ad::Matrix;
using ad::Var;

/// w = 1 - exp(-|tau_i - tau_j| / sigma).
double weight(int tau_i, int tau_j, double sigma);

/// 1 iff both samples are uncensored, or the anchor i is uncensored, j is
/// censored later than tau_i, and the gap is at least alpha. Anchor-indexed.
int comparability(int delta_i, int delta_j, int tau_i, int tau_j, double alpha);

struct PairWeightMatrix {
  /// 1 where column j is in row i's negative pool (not i, not i's counterpart).
  Matrix pool;
  /// Comparability indicators I (zero outside the pool).
  Matrix indicator;
  /// I * w, the importance weights of each negative.
  Matrix weights;
  double sigma = 1.0;
  double alpha = 0.0;

  std::size_t anchors() const noexcept { return weights.rows(); }
};

/// (2M)x(2M) weights for a batch of M records; views inherit tau and delta.
PairWeightMatrix build_pair_weights(std::span<const int> taus, std::span<const int> deltas,
                                    double sigma, double alpha);

/// Weight 1 on every pool entry: the InfoNCE negative distribution.
PairWeightMatrix uniform_pair_weights(std::size_t batch_size);

struct ContrastiveConfig {
  double nu = 0.07;
  double beta = 1.0;

  void validate() const;
};

/// Mean over the batch of -[delta log p(tau|x) + (1 - delta) log S(tau|x)].
/// `hazards` is M x (T_max + 1) with entries in (0, 1).
Var nll_loss(Var hazards, std::span<const int> taus, std::span<const int> deltas);

/// Importance-weighted contrastive loss over 2M embeddings. Anchors with no
/// positive weight are skipped; if all are skipped the result is a constant 0.
Var snce_loss(Var embeddings, const PairWeightMatrix& weights, double nu);

/// snce_loss with uniform weights.
Var infonce_loss(Var embeddings, double nu);

/// Matrix R with R[i][j] = R(tau_i | x_j) computed from M x (T_max + 1) hazards.
Var risk_at_event_times(Var hazards, std::span<const int> taus);

/// Mean over acceptable pairs (delta_i = 1, tau_i < tau_j) of
/// exp(-(R[i][i] - R[i][j]) / kappa), from a risk_at_event_times() matrix.
Var ranking_loss(Var risks, std::span<const int> taus, std::span<const int> deltas, double kappa);

/// nll + beta * aux.
Var total_loss(Var nll, Var aux, double beta);

/// Percentile (0-100, linear interpolation) of |tau_i - tau_j| over all
/// uncensored/censored pairs with tau_i < tau_j. Returns 0 if there are none.
double alpha_from_percentile(std::span<const int> taus, std::span<const int> deltas,
                             double percentile);

}  // namespace consurv::losses
