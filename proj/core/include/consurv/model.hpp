#pragma once

// Encoder, projection head and hazard network, plus conversions from a
// discrete hazard curve to survival, risk and event-probability estimates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "consurv/autodiff.hpp"
#include "consurv/random.hpp"

namespace consurv::model {

using ad::Matrix;
using ad::Tape;
using ad::Var;

/// Hazards are kept inside [kHazardFloor, 1 - kHazardFloor].
inline constexpr double kHazardFloor = 1e-7;

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

/// `depth` counts weight matrices; every layer but the last is followed by
/// the activation.
struct MlpConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 32;
  std::size_t depth = 3;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;

  void validate(const char* what) const;
};

struct Layer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out
};

struct Mlp {
  MlpConfig config;
  std::vector<Layer> layers;

  /// He-normal weights, zero biases.
  static Mlp init(const MlpConfig& config, Rng& rng);
  std::size_t parameter_count() const;
};

struct ModelConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 32;
  std::size_t depth = 3;
  std::size_t projection_depth = 2;
  std::size_t hazard_depth = 2;
  /// 0 means "same as hidden_dim".
  std::size_t embedding_dim = 0;
  std::size_t t_max = 1;
  Activation activation = Activation::relu;

  MlpConfig encoder() const;
  MlpConfig projection() const;
  MlpConfig hazard() const;
  std::size_t embedding() const { return embedding_dim == 0 ? hidden_dim : embedding_dim; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// f_theta (encoder), g_psi (projection head), f_phi (hazard network).
struct HazardModel {
  ModelConfig config;
  Mlp encoder;
  Mlp projection;
  Mlp hazard;
  std::uint64_t seed = 0;

  std::size_t t_max() const noexcept { return config.t_max; }
  friend bool operator==(const HazardModel& a, const HazardModel& b);
};

HazardModel init(const ModelConfig& config, std::uint64_t seed);

/// Which sub-networks receive gradients when bound to a tape.
struct Trainable {
  bool encoder = false;
  bool projection = false;
  bool hazard = false;
};

/// Parameter leaves of one Mlp on a tape, in layer order (weight, bias).
struct BoundMlp {
  const Mlp* mlp = nullptr;
  std::vector<Var> params;

  Var forward(Var x) const;
};

struct BoundModel {
  BoundMlp encoder;
  BoundMlp projection;
  BoundMlp hazard;
};

BoundModel bind(Tape& tape, const HazardModel& model, Trainable trainable);

Var encode(const BoundModel& m, Var x);
Var project(const BoundModel& m, Var h);
/// Clamped sigmoid of the hazard logits, one column per time point.
Var hazard(const BoundModel& m, Var h);

// Untaped convenience forms; rows are samples.
Matrix encode(const HazardModel& model, const Matrix& x);
Matrix project(const HazardModel& model, const Matrix& h);
Matrix hazard(const HazardModel& model, const Matrix& h);
Matrix predict_hazard(const HazardModel& model, const Matrix& x);
Matrix predict_survival(const HazardModel& model, const Matrix& x);

/// S(t) = prod_{t' <= t} (1 - lambda(t')).
std::vector<double> survival_from_hazard(std::span<const double> hazard);
/// p(tau) = lambda(tau) * prod_{t' < tau} (1 - lambda(t')).
double pmf_from_hazard(std::span<const double> hazard, std::size_t tau);
/// R(t) = 1 - S(t).
double risk(std::span<const double> hazard, std::size_t t);
/// Row-wise survival_from_hazard.
Matrix survival_curves(const Matrix& hazards);

/// Parameter matrices of an Mlp in binding order.
std::vector<Matrix*> parameters(Mlp& mlp);
std::vector<const Matrix*> parameters(const Mlp& mlp);

nlohmann::json to_json(const HazardModel& model);
HazardModel from_json(const nlohmann::json& j);

/// JSON checkpoint holding the model plus arbitrary `extra` metadata.
void save_checkpoint(const std::filesystem::path& path, const HazardModel& model,
                     const nlohmann::json& extra);
HazardModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace consurv::model
