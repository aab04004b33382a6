#include <cmath>
#include <limits>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "consurv/error.hpp"
#include "consurv/synth.hpp"
#include "consurv/trainer.hpp"

using namespace consurv;
using trainer::Matrix;
using trainer::TrainConfig;
using trainer::Variant;

namespace {

const data::PreparedData& c2_data() {
  static const data::PreparedData prepared = [] {
    synth::SynthConfig c;
    c.n_samples = 1000;
    c.seed = 5;
    return data::prepare(synth::generate_c2(c).raw, 0, 5);
  }();
  return prepared;
}

model::HazardModel fresh_model(std::uint64_t seed = 1) {
  const auto& d = c2_data();
  model::ModelConfig mc;
  mc.input_dim = d.train.dim();
  mc.hidden_dim = 16;
  mc.t_max = d.train.t_max;
  return model::init(mc, seed);
}

TrainConfig quick(Variant v, std::size_t epochs) {
  TrainConfig c;
  c.variant = v;
  c.epochs = epochs;
  c.patience = epochs;
  c.batch_size = 64;
  return c;
}

bool same_mlp(const model::Mlp& a, const model::Mlp& b) {
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (!(a.layers[k].weight == b.layers[k].weight) || !(a.layers[k].bias == b.layers[k].bias)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("variant and optimizer names") {
  for (const char* name : {"nll", "nll+nce", "nll+rank", "consurv"}) {
    CHECK(trainer::variant_name(trainer::parse_variant(name)) == name);
  }
  CHECK_THROWS_AS(trainer::parse_variant("nce"), ConfigError);
  CHECK(trainer::parse_optimizer("sgd") == trainer::Optimizer::sgd);
  CHECK_THROWS_AS(trainer::parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto expect_field = [](TrainConfig bad, const std::string& field) {
    try {
      bad.validate();
      FAIL("no error for " << field);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  TrainConfig bad = c;
  bad.sigma = 0.0;
  expect_field(bad, "sigma");
  bad = c;
  bad.nu = -1.0;
  expect_field(bad, "nu");
  bad = c;
  bad.corruption_rate = 1.5;
  expect_field(bad, "corruption_rate");
  bad = c;
  bad.batch_size = 1;
  expect_field(bad, "batch_size");
  bad = c;
  bad.beta = -0.1;
  expect_field(bad, "beta");

  c.variant = Variant::nll_rank;
  c.sigma = 2.5;
  c.optimizer = trainer::Optimizer::sgd;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(TrainConfig::from_json(nlohmann::json::object()).to_json() == TrainConfig{}.to_json());
}

TEST_CASE("adam step") {
  Matrix p = Matrix::from_rows({{1.0, -2.0, 3.0}});
  Matrix* params[] = {&p};
  trainer::AdamState state;
  const Matrix start = p;
  trainer::adam_step(params, std::vector<Matrix>{Matrix(1, 3)}, state, 0.1);
  CHECK(p == start);

  for (double scale : {1e-6, 1.0, 1e4}) {
    Matrix q(1, 2, 0.0);
    Matrix* qp[] = {&q};
    trainer::AdamState s;
    trainer::adam_step(qp, std::vector<Matrix>{Matrix::from_rows({{scale, -scale}})}, s, 0.01);
    CHECK(q(0, 0) == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(q(0, 1) == doctest::Approx(0.01).epsilon(1e-4));
  }

  Matrix r(1, 2, 0.0);
  Matrix* rp[] = {&r};
  trainer::AdamState s;
  const std::vector<Matrix> g{Matrix::from_rows({{0.3, -7.0}})};
  for (int k = 0; k < 2000; ++k) trainer::adam_step(rp, g, s, 0.001);
  const Matrix before = r;
  trainer::adam_step(rp, g, s, 0.001);
  CHECK(before(0, 0) - r(0, 0) == doctest::Approx(0.001).epsilon(1e-4));
  CHECK(r(0, 1) - before(0, 1) == doctest::Approx(0.001).epsilon(1e-4));

  Matrix w(1, 1, 1.0);
  Matrix* wp[] = {&w};
  trainer::sgd_step(wp, std::vector<Matrix>{Matrix(1, 1, 2.0)}, 0.25);
  CHECK(w(0, 0) == 0.5);
}

TEST_CASE("training is deterministic") {
  const auto& d = c2_data();
  const auto a = trainer::train(d.train, d.validation, fresh_model(), quick(Variant::consurv, 3));
  const auto b = trainer::train(d.train, d.validation, fresh_model(), quick(Variant::consurv, 3));
  CHECK(a.model == b.model);
  CHECK(a.log.to_csv() == b.log.to_csv());
}

TEST_CASE("beta zero reproduces the likelihood-only trajectory") {
  const auto& d = c2_data();
  auto zero = quick(Variant::consurv, 5);
  zero.beta = 0.0;
  const auto a = trainer::train(d.train, d.validation, fresh_model(), zero);
  const auto b = trainer::train(d.train, d.validation, fresh_model(), quick(Variant::nll, 5));
  CHECK(a.model == b.model);
  for (std::size_t k = 0; k < a.log.epochs.size(); ++k) {
    CHECK(a.log.epochs[k].train_nll == b.log.epochs[k].train_nll);
  }
  auto via = trainer::train_variant(Variant::nll, d.train, d.validation, fresh_model(),
                                    quick(Variant::consurv, 5));
  CHECK(via.model == b.model);
}

TEST_CASE("phase isolation") {
  const auto& d = c2_data();
  const auto init = fresh_model();
  SUBCASE("contrastive step leaves the hazard network alone") {
    auto c = quick(Variant::consurv, 2);
    c.lr_nll = 0.0;
    const auto r = trainer::train(d.train, d.validation, init, c);
    CHECK(same_mlp(r.model.hazard, init.hazard));
    CHECK_FALSE(same_mlp(r.model.projection, init.projection));
    CHECK_FALSE(same_mlp(r.model.encoder, init.encoder));
  }
  SUBCASE("likelihood step leaves the projection head alone") {
    auto c = quick(Variant::consurv, 2);
    c.lr_contrastive = 0.0;
    const auto r = trainer::train(d.train, d.validation, init, c);
    CHECK(same_mlp(r.model.projection, init.projection));
    CHECK_FALSE(same_mlp(r.model.hazard, init.hazard));
  }
  SUBCASE("ranking step never touches the projection head") {
    auto c = quick(Variant::nll_rank, 2);
    c.lr_nll = 0.0;
    const auto r = trainer::train(d.train, d.validation, init, c);
    CHECK(same_mlp(r.model.projection, init.projection));
    CHECK_FALSE(same_mlp(r.model.hazard, init.hazard));
  }
}

TEST_CASE("variants differ") {
  const auto& d = c2_data();
  std::vector<model::HazardModel> models;
  for (Variant v : {Variant::nll, Variant::nll_nce, Variant::nll_rank, Variant::consurv}) {
    models.push_back(trainer::train(d.train, d.validation, fresh_model(), quick(v, 2)).model);
  }
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) CHECK_FALSE(models[a] == models[b]);
  }
}

TEST_CASE("validation loss decreases and early stopping keeps the best") {
  const auto& d = c2_data();
  const auto init = fresh_model();
  auto c = quick(Variant::consurv, 200);
  c.patience = 10;
  const auto before = trainer::validation_losses(init, d.validation, c);
  const auto r = trainer::train(d.train, d.validation, init, c);
  const auto after = trainer::validation_losses(r.model, d.validation, c);
  CHECK(after.val_nll < before.val_nll);

  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.log.epochs) best = std::min(best, e.val_total);
  CHECK(r.log.epochs[r.log.best_epoch].val_total == best);
  CHECK(after.val_total == best);
  CHECK(r.log.epochs.size() <= r.log.best_epoch + 1 + c.patience);
}

TEST_CASE("divergence names the step") {
  const auto& d = c2_data();
  auto broken = fresh_model();
  broken.encoder.layers.back().bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    trainer::train(d.train, d.validation, broken, quick(Variant::consurv, 1));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("contrastive") != std::string::npos);
    CHECK(msg.find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("train log csv") {
  trainer::TrainLog log;
  log.epochs.push_back({0, 1.0, 0.5, 1.5, 1.1, 0.4, 1.5});
  log.epochs.push_back({1, 0.9, 0.5, 1.4, 1.0, 0.4, 1.4});
  log.best_epoch = 1;
  log.wall_seconds = 3.0;
  CHECK(log.to_csv() ==
        "epoch,train_nll,train_aux,train_total,val_nll,val_aux,val_total,best\n"
        "0,1.000000,0.500000,1.500000,1.100000,0.400000,1.500000,0\n"
        "1,0.900000,0.500000,1.400000,1.000000,0.400000,1.400000,1\n");
}
