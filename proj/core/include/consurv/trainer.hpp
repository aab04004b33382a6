#pragma once

// Two-phase mini-batch training: a contrastive (or ranking) step on the
// encoder and one head, then a likelihood step on the encoder and the hazard
// network, with early stopping on the validation total loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "consurv/autodiff.hpp"
#include "consurv/data.hpp"
#include "consurv/model.hpp"

namespace consurv::trainer {

using ad::Matrix;

enum class Variant { nll, nll_nce, nll_rank, consurv };
enum class Optimizer { adam, sgd };

/// "nll", "nll+nce", "nll+rank", "consurv".
Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
Optimizer parse_optimizer(const std::string& name);
std::string optimizer_name(Optimizer o);

struct TrainConfig {
  Variant variant = Variant::consurv;
  std::size_t epochs = 500;
  std::size_t batch_size = 32;
  /// Step size of the contrastive (or ranking) phase.
  double lr_contrastive = 1e-3;
  /// Step size of the likelihood phase.
  double lr_nll = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double beta = 1.0;
  double sigma = 0.75;
  double alpha = 7.0;
  double nu = 0.07;
  double kappa = 0.1;
  double corruption_rate = 0.5;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. State is lazily shaped on first use.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr);
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double train_aux = 0.0;
  double train_total = 0.0;
  double val_nll = 0.0;
  double val_aux = 0.0;
  double val_total = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;

  /// One row per epoch. Wall time is excluded so reruns are byte-stable.
  std::string to_csv() const;
};

struct TrainResult {
  model::HazardModel model;
  TrainLog log;
};

/// Mean validation losses of `model` under `config`; the auxiliary term is
/// drawn with a fixed stream so epochs are comparable.
EpochRecord validation_losses(const model::HazardModel& model, const data::SurvivalData& val,
                              const TrainConfig& config);

/// Trains `model` and returns the best-validation snapshot.
/// Throws NumericError naming the step and epoch if a loss diverges.
TrainResult train(const data::SurvivalData& train_set, const data::SurvivalData& val_set,
                  model::HazardModel model, const TrainConfig& config);

/// train() with config.variant replaced by `variant`.
TrainResult train_variant(Variant variant, const data::SurvivalData& train_set,
                          const data::SurvivalData& val_set, model::HazardModel model,
                          TrainConfig config);

}  // namespace consurv::trainer
