#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "consurv/error.hpp"
#include "consurv/experiment.hpp"

using namespace consurv;
namespace ex = consurv::experiment;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "consurv_experiment_test" / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ex::ExperimentSpec small_spec(const fs::path& out, std::vector<std::uint64_t> seeds) {
  const nlohmann::json j = {
      {"dataset", {{"synthetic", {{"n_samples", 300}, {"seed", 4}}}}},
      {"variants", {"consurv"}},
      {"seeds", seeds},
      {"model", {{"hidden_dim", 8}}},
      {"train", {{"epochs", 3}, {"batch_size", 32}}},
      {"output_dir", out.string()}};
  return ex::ExperimentSpec::from_json(j);
}

ex::SeedResult result(trainer::Variant v, std::uint64_t seed, double ci, double p) {
  ex::SeedResult r;
  r.variant = v;
  r.seed = seed;
  r.report.ci_integrated = ci;
  r.report.ibs = ci / 4.0;
  r.report.ddc = ci / 10.0;
  r.report.dcal_pvalue = p;
  return r;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CONSURV_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("mean and sample deviation") {
  const auto [m, s] = ex::mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(ex::mean_std({0.7}).second == 0.0);
}

TEST_CASE("aggregation") {
  const std::vector<ex::SeedResult> rs{
      result(trainer::Variant::nll, 0, 0.6, 0.5), result(trainer::Variant::consurv, 0, 0.7, 0.01),
      result(trainer::Variant::nll, 1, 0.8, 0.04), result(trainer::Variant::consurv, 1, 0.9, 0.2)};
  const auto sums = ex::summarize(rs);
  REQUIRE(sums.size() == 2);
  CHECK(sums[0].variant == trainer::Variant::nll);
  CHECK(sums[0].n == 2);
  CHECK(sums[0].ci_mean == doctest::Approx(0.7));
  CHECK(sums[0].dcal_count == 1);
  CHECK(sums[1].dcal_count == 1);
  CHECK(ex::per_seed_csv(rs).substr(0, ex::per_seed_csv(rs).find('\n')) ==
        "variant,seed,ci,ibs,ddc,dcal_pass");
  const std::string csv = ex::summary_csv(sums);
  CHECK(csv.find("nll,2,0.700000,0.141421,0.175000,0.035355,0.070000,0.014142,1\n") !=
        std::string::npos);
}

TEST_CASE("spec json") {
  auto spec = small_spec("out", {0, 1});
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.model.hidden_dim == 8);
  CHECK(spec.train.epochs == 3);
  const auto back = ex::ExperimentSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());

  auto dup = spec;
  dup.seeds = {1, 1};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  const auto all = ex::ExperimentSpec::from_json({{"variants", "all"},
                                                  {"dataset", {{"synthetic", {{"n_samples", 10}}}}}});
  CHECK(all.variants.size() == 4);
  CHECK_THROWS_AS(ex::ExperimentSpec::from_json({{"train", {{"sigma", 0.0}}},
                                                 {"dataset", {{"synthetic", {{"n_samples", 10}}}}}})
                      .validate(),
                  ConfigError);
}

TEST_CASE("train, evaluate and rerun") {
  const fs::path out = scratch("fanout");
  const auto spec = small_spec(out, {0, 1, 2});
  ex::cmd_train(spec);
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto paths = ex::job_paths(out, trainer::Variant::consurv, seed);
    CHECK(fs::exists(paths.checkpoint));
    CHECK(fs::exists(paths.log));
  }
  const auto results = ex::cmd_evaluate(spec);
  REQUIRE(results.size() == 3);
  const std::string per_seed = slurp(out / "metrics_per_seed.csv");
  const std::string summary = slurp(out / "metrics_summary.csv");
  const std::string checkpoint = slurp(ex::job_paths(out, trainer::Variant::consurv, 1).checkpoint);

  // Aggregate equals the hand average of the per-seed rows.
  double ci = 0.0;
  std::istringstream rows(per_seed);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::istringstream fields(line);
    std::string v;
    std::getline(fields, v, ',');
    std::getline(fields, v, ',');
    std::getline(fields, v, ',');
    ci += std::stod(v);
  }
  CHECK(ex::summarize(results)[0].ci_mean == doctest::Approx(ci / 3.0).epsilon(1e-5));

  ex::cmd_train(spec);
  ex::cmd_evaluate(spec);
  CHECK(slurp(out / "metrics_per_seed.csv") == per_seed);
  CHECK(slurp(out / "metrics_summary.csv") == summary);
  CHECK(slurp(ex::job_paths(out, trainer::Variant::consurv, 1).checkpoint) == checkpoint);

  auto missing = spec;
  missing.seeds = {7};
  CHECK_THROWS_AS(ex::cmd_evaluate(missing), DataError);

  auto single = spec;
  single.seeds = {0};
  const auto one = ex::summarize(ex::cmd_evaluate(single));
  CHECK(one[0].ci_std == 0.0);
}

TEST_CASE("subgroup curves") {
  Rng rng(3);
  const std::size_t n = 40;
  metrics::Matrix s(n, 6);
  std::vector<int> taus(n);
  std::vector<int> deltas(n);
  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 1.0;
    for (std::size_t t = 0; t < 6; ++t) {
      v *= 0.9;
      s(i, t) = v;
    }
    taus[i] = static_cast<int>(uniform_index(rng, 6));
    deltas[i] = static_cast<int>(i % 2);
    labels[i] = i < 20 ? "0" : "1";
  }
  const auto groups = ex::subgroup_curves(s, taus, deltas, labels);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].size == 20);
  CHECK(groups[0].model_curve.size() == 6);

  // The whole population, duplicated, gives the same distance.
  metrics::Matrix twice(2 * n, 6);
  std::vector<int> t2 = taus;
  std::vector<int> d2 = deltas;
  t2.insert(t2.end(), taus.begin(), taus.end());
  d2.insert(d2.end(), deltas.begin(), deltas.end());
  for (std::size_t i = 0; i < 2 * n; ++i) {
    for (std::size_t t = 0; t < 6; ++t) twice(i, t) = s(i % n, t);
  }
  const auto whole = ex::subgroup_curves(s, taus, deltas, std::vector<std::string>(n, "all"));
  const auto doubled =
      ex::subgroup_curves(twice, t2, d2, std::vector<std::string>(2 * n, "all"));
  CHECK(whole[0].wasserstein == doctest::Approx(doubled[0].wasserstein).epsilon(1e-14));

  labels[0] = "rare";
  CHECK(ex::subgroup_curves(s, taus, deltas, labels).size() == 2);
}

TEST_CASE("sweep") {
  const fs::path out = scratch("sweep");
  auto spec = small_spec(out, {0});
  CHECK_THROWS_AS(ex::cmd_sweep(spec, "beta", {}), ConfigError);
  CHECK_THROWS_AS(ex::cmd_sweep(spec, "gamma", {1.0}), ConfigError);
  CHECK_THROWS_AS(ex::cmd_sweep(spec, "beta", {1.0, -1.0}), ConfigError);
  CHECK_FALSE(fs::exists(out));

  const auto rows = ex::cmd_sweep(spec, "beta", {0.1, 1.0});
  CHECK(rows.size() == 2);
  const std::string csv = slurp(out / "sweep_beta.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  // A single value reproduces a plain evaluation of the same config.
  const auto one = ex::cmd_sweep(spec, "beta", {1.0});
  spec.output_dir = out / "plain";
  ex::cmd_train(spec);
  const auto plain = ex::summarize(ex::cmd_evaluate(spec));
  CHECK(one[0].ci_mean == plain[0].ci_mean);
  CHECK(one[0].ibs_mean == plain[0].ibs_mean);
}

TEST_CASE("synth and margin commands") {
  const fs::path out = scratch("synth");
  synth::SynthConfig c;
  c.n_samples = 100;
  ex::cmd_synth(c, out);
  CHECK(fs::exists(out / "data.csv"));
  CHECK(fs::exists(out / "schema.json"));
  CHECK(fs::exists(out / "truth.csv"));
  const auto raw = data::load_csv(out / "data.csv", synth::synth_schema(4));
  CHECK(raw.size() == 100);

  const auto m = ex::cmd_margin_study(c, 100, out);
  CHECK(m.pairs > 0);
  CHECK(m.truth_mean > m.censoring_mean);
  CHECK(fs::exists(out / "margin_pairs.csv"));
}

TEST_CASE("command-line exit codes") {
  const fs::path out = scratch("cli");
  CHECK(run_cli("synth --n 50 --out " + out.string()) == 0);
  CHECK(run_cli("train --synthetic 50 --sigma 0 --out " + out.string()) == 2);
  CHECK(run_cli("train --synthetic 50 --seed 1,1 --out " + out.string()) == 2);
  CHECK(run_cli("evaluate --synthetic 50 --seed 3 --out " + (out / "none").string()) == 2);
  CHECK(run_cli("bogus") == 2);
  CHECK(run_cli("train --synthetic 60 --seed 0 --epochs 2 --hidden-dim 8 --out " + out.string()) == 0);
}
