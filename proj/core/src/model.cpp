#include "consurv/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "consurv/error.hpp"

namespace consurv::model {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("activation", "unknown activation '" + name + "'");
}

std::string activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

void MlpConfig::validate(const char* what) const {
  if (depth < 1) throw ConfigError(std::string(what) + ".depth", "must be at least 1");
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
    throw ConfigError(std::string(what) + ".dims", "dimensions must be at least 1");
  }
}

Mlp Mlp::init(const MlpConfig& config, Rng& rng) {
  config.validate("mlp");
  Mlp mlp{config, {}};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t fan_in = l == 0 ? config.input_dim : config.hidden_dim;
    const std::size_t fan_out = l + 1 == config.depth ? config.output_dim : config.hidden_dim;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Layer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
    for (double& w : layer.weight.data()) w = stddev * normal(rng);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

MlpConfig ModelConfig::encoder() const {
  return {input_dim, hidden_dim, depth, hidden_dim, activation};
}

MlpConfig ModelConfig::projection() const {
  return {hidden_dim, hidden_dim, projection_depth, embedding(), activation};
}

MlpConfig ModelConfig::hazard() const {
  return {hidden_dim, hidden_dim, hazard_depth, t_max + 1, activation};
}

nlohmann::json ModelConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"hidden_dim", hidden_dim},
          {"depth", depth},
          {"projection_depth", projection_depth},
          {"hazard_depth", hazard_depth},
          {"embedding_dim", embedding_dim},
          {"t_max", t_max},
          {"activation", activation_name(activation)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.depth = j.value("depth", c.depth);
  c.projection_depth = j.value("projection_depth", c.projection_depth);
  c.hazard_depth = j.value("hazard_depth", c.hazard_depth);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.t_max = j.at("t_max").get<std::size_t>();
  c.activation = parse_activation(j.value("activation", std::string("relu")));
  return c;
}

bool operator==(const HazardModel& a, const HazardModel& b) {
  const auto same_mlp = [](const Mlp& x, const Mlp& y) {
    if (x.layers.size() != y.layers.size()) return false;
    for (std::size_t l = 0; l < x.layers.size(); ++l) {
      if (!(x.layers[l].weight == y.layers[l].weight) || !(x.layers[l].bias == y.layers[l].bias)) {
        return false;
      }
    }
    return true;
  };
  return a.config.to_json() == b.config.to_json() && a.seed == b.seed &&
         same_mlp(a.encoder, b.encoder) && same_mlp(a.projection, b.projection) &&
         same_mlp(a.hazard, b.hazard);
}

HazardModel init(const ModelConfig& config, std::uint64_t seed) {
  if (config.t_max < 1) throw ConfigError("t_max", "must be at least 1");
  Rng rng(derive_seed(seed, "init"));
  HazardModel m;
  m.config = config;
  m.seed = seed;
  m.encoder = Mlp::init(config.encoder(), rng);
  m.projection = Mlp::init(config.projection(), rng);
  m.hazard = Mlp::init(config.hazard(), rng);
  return m;
}

namespace {

BoundMlp bind_mlp(Tape& tape, const Mlp& mlp, bool trainable) {
  BoundMlp out{&mlp, {}};
  for (const Layer& layer : mlp.layers) {
    out.params.push_back(trainable ? tape.variable(layer.weight) : tape.constant(layer.weight));
    out.params.push_back(trainable ? tape.variable(layer.bias) : tape.constant(layer.bias));
  }
  return out;
}

Var activate(Var x, Activation a) { return a == Activation::tanh ? ad::tanh(x) : ad::relu(x); }

}  // namespace

Var BoundMlp::forward(Var x) const {
  if (x.cols() != mlp->config.input_dim) {
    throw DimensionError("mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(mlp->config.input_dim));
  }
  const std::size_t depth = mlp->layers.size();
  for (std::size_t l = 0; l < depth; ++l) {
    x = ad::add_row(ad::matmul(x, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < depth) x = activate(x, mlp->config.activation);
  }
  return x;
}

BoundModel bind(Tape& tape, const HazardModel& model, Trainable trainable) {
  return {bind_mlp(tape, model.encoder, trainable.encoder),
          bind_mlp(tape, model.projection, trainable.projection),
          bind_mlp(tape, model.hazard, trainable.hazard)};
}

Var encode(const BoundModel& m, Var x) { return m.encoder.forward(x); }
Var project(const BoundModel& m, Var h) { return m.projection.forward(h); }

Var hazard(const BoundModel& m, Var h) {
  return ad::clamp(ad::sigmoid(m.hazard.forward(h)), kHazardFloor, 1.0 - kHazardFloor);
}

Matrix encode(const HazardModel& model, const Matrix& x) {
  Tape tape;
  const BoundModel m = bind(tape, model, {});
  return encode(m, tape.constant(x)).value();
}

Matrix project(const HazardModel& model, const Matrix& h) {
  Tape tape;
  const BoundModel m = bind(tape, model, {});
  return project(m, tape.constant(h)).value();
}

Matrix hazard(const HazardModel& model, const Matrix& h) {
  Tape tape;
  const BoundModel m = bind(tape, model, {});
  return hazard(m, tape.constant(h)).value();
}

Matrix predict_hazard(const HazardModel& model, const Matrix& x) {
  Tape tape;
  const BoundModel m = bind(tape, model, {});
  return hazard(m, encode(m, tape.constant(x))).value();
}

Matrix predict_survival(const HazardModel& model, const Matrix& x) {
  return survival_curves(predict_hazard(model, x));
}

std::vector<double> survival_from_hazard(std::span<const double> hazard) {
  std::vector<double> s(hazard.size());
  double running = 1.0;
  for (std::size_t t = 0; t < hazard.size(); ++t) {
    running *= 1.0 - hazard[t];
    s[t] = running;
  }
  return s;
}

double pmf_from_hazard(std::span<const double> hazard, std::size_t tau) {
  if (tau >= hazard.size()) {
    throw DimensionError("pmf_from_hazard: tau " + std::to_string(tau) + " outside horizon of " +
                         std::to_string(hazard.size()) + " points");
  }
  double before = 1.0;
  for (std::size_t t = 0; t < tau; ++t) before *= 1.0 - hazard[t];
  return hazard[tau] * before;
}

double risk(std::span<const double> hazard, std::size_t t) {
  if (t >= hazard.size()) throw DimensionError("risk: time outside horizon");
  double s = 1.0;
  for (std::size_t k = 0; k <= t; ++k) s *= 1.0 - hazard[k];
  return 1.0 - s;
}

Matrix survival_curves(const Matrix& hazards) {
  Matrix out(hazards.rows(), hazards.cols());
  for (std::size_t i = 0; i < hazards.rows(); ++i) {
    const auto s = survival_from_hazard(hazards.row(i));
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

std::vector<Matrix*> parameters(Mlp& mlp) {
  std::vector<Matrix*> out;
  for (Layer& l : mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix*> parameters(const Mlp& mlp) {
  std::vector<const Matrix*> out;
  for (const Layer& l : mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

namespace {

nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : mlp.layers) {
    layers.push_back({{"fan_in", l.weight.rows()},
                      {"fan_out", l.weight.cols()},
                      {"weight", l.weight.values()},
                      {"bias", l.bias.values()}});
  }
  return layers;
}

Mlp mlp_from_json(const nlohmann::json& j, const MlpConfig& config) {
  Mlp mlp{config, {}};
  for (const auto& l : j) {
    const auto fan_in = l.at("fan_in").get<std::size_t>();
    const auto fan_out = l.at("fan_out").get<std::size_t>();
    mlp.layers.push_back(Layer{Matrix(fan_in, fan_out, l.at("weight").get<std::vector<double>>()),
                               Matrix(1, fan_out, l.at("bias").get<std::vector<double>>())});
  }
  if (mlp.layers.size() != config.depth) throw DataError("checkpoint: layer count mismatch");
  return mlp;
}

}  // namespace

nlohmann::json to_json(const HazardModel& model) {
  return {{"config", model.config.to_json()},
          {"seed", model.seed},
          {"encoder", mlp_to_json(model.encoder)},
          {"projection", mlp_to_json(model.projection)},
          {"hazard", mlp_to_json(model.hazard)}};
}

HazardModel from_json(const nlohmann::json& j) {
  HazardModel m;
  m.config = ModelConfig::from_json(j.at("config"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.encoder = mlp_from_json(j.at("encoder"), m.config.encoder());
  m.projection = mlp_from_json(j.at("projection"), m.config.projection());
  m.hazard = mlp_from_json(j.at("hazard"), m.config.hazard());
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const HazardModel& model,
                     const nlohmann::json& extra) {
  nlohmann::json j = {{"format", "consurv-checkpoint"}, {"version", 1}, {"model", to_json(model)}};
  if (!extra.is_null()) j["extra"] = extra;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
}

HazardModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  std::ifstream in(path);
  if (!in) throw DataError("missing checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", std::string()) != "consurv-checkpoint") {
    throw DataError(path.string() + " is not a checkpoint");
  }
  if (extra != nullptr) *extra = j.value("extra", nlohmann::json());
  return from_json(j.at("model"));
}

}  // namespace consurv::model
