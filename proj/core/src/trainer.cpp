#include "consurv/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "consurv/error.hpp"
#include "consurv/losses.hpp"
#include "consurv/metrics.hpp"
#include "consurv/random.hpp"

namespace consurv::trainer {

namespace {

using ad::Tape;
using ad::Var;
using model::BoundModel;
using model::HazardModel;

bool uses_embeddings(Variant v) { return v == Variant::nll_nce || v == Variant::consurv; }

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<long>(a.size()));
  return out;
}

std::vector<Matrix*> collect(std::initializer_list<model::Mlp*> mlps) {
  std::vector<Matrix*> out;
  for (model::Mlp* m : mlps) {
    for (Matrix* p : model::parameters(*m)) out.push_back(p);
  }
  return out;
}

std::vector<Matrix> grads_of(std::initializer_list<const model::BoundMlp*> bound) {
  std::vector<Matrix> out;
  for (const model::BoundMlp* b : bound) {
    for (const Var& v : b->params) out.push_back(v.grad());
  }
  return out;
}

void check_finite(double loss, const char* step, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "training diverged: " << step << " loss is " << loss << " at epoch " << epoch
        << ", batch " << batch;
    throw NumericError(msg.str());
  }
}

// Auxiliary loss of one batch on an already bound model.
Var auxiliary_loss(const BoundModel& m, Tape& tape, const data::Batch& batch,
                   const TrainConfig& config) {
  if (config.variant == Variant::nll_rank) {
    const Var h = model::hazard(m, model::encode(m, tape.constant(batch.x)));
    return losses::ranking_loss(losses::risk_at_event_times(h, batch.tau), batch.tau, batch.delta,
                                config.kappa);
  }
  const Var z = model::project(m, model::encode(m, tape.constant(stack(batch.x, batch.x_corrupted))));
  if (config.variant == Variant::nll_nce) return losses::infonce_loss(z, config.nu);
  const auto w = losses::build_pair_weights(batch.tau, batch.delta, config.sigma, config.alpha);
  return losses::snce_loss(z, w, config.nu);
}

void apply(const TrainConfig& config, std::span<Matrix* const> params,
           std::span<const Matrix> grads, AdamState& state, double lr) {
  if (config.optimizer == Optimizer::adam) {
    adam_step(params, grads, state, lr);
  } else {
    sgd_step(params, grads, lr);
  }
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "nll") return Variant::nll;
  if (name == "nll+nce") return Variant::nll_nce;
  if (name == "nll+rank") return Variant::nll_rank;
  if (name == "consurv") return Variant::consurv;
  throw ConfigError("variant", "unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::nll: return "nll";
    case Variant::nll_nce: return "nll+nce";
    case Variant::nll_rank: return "nll+rank";
    case Variant::consurv: return "consurv";
  }
  return "consurv";
}

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw ConfigError("optimizer", "unknown optimizer '" + name + "'");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
  if (!(lr_contrastive >= 0.0)) throw ConfigError("lr_contrastive", "must be non-negative");
  if (!(lr_nll >= 0.0)) throw ConfigError("lr_nll", "must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be non-negative");
  if (!(sigma > 0.0)) throw ConfigError("sigma", "must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha", "must be non-negative");
  if (!(nu > 0.0)) throw ConfigError("nu", "must be positive");
  if (!(kappa > 0.0)) throw ConfigError("kappa", "must be positive");
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) {
    throw ConfigError("corruption_rate", "must lie in [0, 1]");
  }
  if (patience < 1) throw ConfigError("patience", "must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_contrastive", lr_contrastive},
          {"lr_nll", lr_nll},
          {"optimizer", optimizer_name(optimizer)},
          {"beta", beta},
          {"sigma", sigma},
          {"alpha", alpha},
          {"nu", nu},
          {"kappa", kappa},
          {"corruption_rate", corruption_rate},
          {"patience", patience},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_contrastive = j.value("lr_contrastive", c.lr_contrastive);
    c.lr_nll = j.value("lr_nll", c.lr_nll);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.beta = j.value("beta", c.beta);
    c.sigma = j.value("sigma", c.sigma);
    c.alpha = j.value("alpha", c.alpha);
    c.nu = j.value("nu", c.nu);
    c.kappa = j.value("kappa", c.kappa);
    c.corruption_rate = j.value("corruption_rate", c.corruption_rate);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError("train", e.what());
  }
  return c;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
      throw DimensionError("adam_step: shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      state.m[k][i] = kAdamBeta1 * state.m[k][i] + (1.0 - kAdamBeta1) * g[i];
      state.v[k][i] = kAdamBeta2 * state.v[k][i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      p[i] -= lr * (state.m[k][i] / c1) / (std::sqrt(state.v[k][i] / c2) + kAdamEps);
    }
  }
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: params/grads mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    if (!p.same_shape(grads[k])) throw DimensionError("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,train_nll,train_aux,train_total,val_nll,val_aux,val_total,best\n";
  for (const EpochRecord& r : epochs) {
    out += std::to_string(r.epoch) + "," + metrics::format_number(r.train_nll) + "," +
           metrics::format_number(r.train_aux) + "," + metrics::format_number(r.train_total) + "," +
           metrics::format_number(r.val_nll) + "," + metrics::format_number(r.val_aux) + "," +
           metrics::format_number(r.val_total) + "," + (r.epoch == best_epoch ? "1" : "0") + "\n";
  }
  return out;
}

EpochRecord validation_losses(const HazardModel& model, const data::SurvivalData& val,
                              const TrainConfig& config) {
  EpochRecord r;
  {
    Tape tape;
    const BoundModel m = model::bind(tape, model, {});
    r.val_nll =
        losses::nll_loss(model::hazard(m, model::encode(m, tape.constant(val.x))), val.tau, val.delta)
            .item();
  }
  if (config.variant != Variant::nll && config.beta > 0.0 && val.size() >= 2) {
    Rng order(derive_seed(config.seed, "validation-order"));
    Rng corrupt(derive_seed(config.seed, "validation-corruption"));
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& rows : data::epoch_batches(val.size(), config.batch_size, order)) {
      const data::Batch batch = data::make_batch(val, rows, val.x, config.corruption_rate, corrupt);
      Tape tape;
      const BoundModel m = model::bind(tape, model, {});
      total += auxiliary_loss(m, tape, batch, config).item();
      ++count;
    }
    r.val_aux = count > 0 ? total / static_cast<double>(count) : 0.0;
  }
  r.val_total = r.val_nll + config.beta * r.val_aux;
  if (config.variant == Variant::nll) r.val_total = r.val_nll;
  return r;
}

TrainResult train(const data::SurvivalData& train_set, const data::SurvivalData& val_set,
                  HazardModel model, const TrainConfig& config) {
  config.validate();
  if (train_set.dim() != model.config.input_dim) {
    throw DimensionError("train: model expects " + std::to_string(model.config.input_dim) +
                         " features, data has " + std::to_string(train_set.dim()));
  }
  if (train_set.t_max != model.config.t_max) {
    throw DimensionError("train: model horizon does not match the data");
  }
  const auto started = std::chrono::steady_clock::now();
  const bool aux_step = config.variant != Variant::nll && config.beta > 0.0;

  data::BatchIterator batches(train_set, config.batch_size, config.seed,
                              aux_step && uses_embeddings(config.variant) ? config.corruption_rate
                                                                          : 0.0);
  AdamState aux_state;
  AdamState nll_state;
  TrainResult result{model, {}};
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t b = 0;
    const auto epoch_batches = batches.next_epoch();
    for (const data::Batch& batch : epoch_batches) {
      if (aux_step) {
        Tape tape;
        const bool rank = config.variant == Variant::nll_rank;
        const BoundModel m = model::bind(tape, model, {true, !rank, rank});
        const Var aux = auxiliary_loss(m, tape, batch, config);
        check_finite(aux.item(), rank ? "ranking" : "contrastive", epoch, b);
        rec.train_aux += aux.item();
        if (aux.requires_grad()) {
          tape.backward(ad::scale(aux, config.beta));
          if (rank) {
            apply(config, collect({&model.encoder, &model.hazard}),
                  grads_of({&m.encoder, &m.hazard}), aux_state, config.lr_contrastive);
          } else {
            apply(config, collect({&model.encoder, &model.projection}),
                  grads_of({&m.encoder, &m.projection}), aux_state, config.lr_contrastive);
          }
        }
      }
      Tape tape;
      const BoundModel m = model::bind(tape, model, {true, false, true});
      const Var nll = losses::nll_loss(model::hazard(m, model::encode(m, tape.constant(batch.x))),
                                       batch.tau, batch.delta);
      check_finite(nll.item(), "likelihood", epoch, b);
      rec.train_nll += nll.item();
      tape.backward(nll);
      apply(config, collect({&model.encoder, &model.hazard}), grads_of({&m.encoder, &m.hazard}),
            nll_state, config.lr_nll);
      ++b;
    }
    if (b > 0) {
      rec.train_nll /= static_cast<double>(b);
      rec.train_aux /= static_cast<double>(b);
    }
    rec.train_total = rec.train_nll + config.beta * rec.train_aux;

    const EpochRecord val = validation_losses(model, val_set, config);
    check_finite(val.val_total, "validation", epoch, 0);
    rec.val_nll = val.val_nll;
    rec.val_aux = val.val_aux;
    rec.val_total = val.val_total;
    result.log.epochs.push_back(rec);

    if (rec.val_total < best) {
      best = rec.val_total;
      result.model = model;
      result.log.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  spdlog::debug("train {} seed {}: {} epochs, best {}, {:.2f}s", variant_name(config.variant),
                config.seed, result.log.epochs.size(), result.log.best_epoch,
                result.log.wall_seconds);
  return result;
}

TrainResult train_variant(Variant variant, const data::SurvivalData& train_set,
                          const data::SurvivalData& val_set, HazardModel model,
                          TrainConfig config) {
  config.variant = variant;
  return train(train_set, val_set, std::move(model), config);
}

}  // namespace consurv::trainer
