#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "consurv/error.hpp"
#include "consurv/experiment.hpp"

namespace {

namespace fs = std::filesystem;
namespace ex = consurv::experiment;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Command-line values that override fields of the --config file.
struct Overrides {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  std::string out;
  std::string data;
  std::string schema;
  std::optional<std::size_t> synthetic_n;
  std::optional<std::size_t> n_bins;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> patience;
  std::optional<std::size_t> hidden_dim;
  std::optional<std::size_t> depth;
  std::optional<double> lr_contrastive;
  std::optional<double> lr_nll;
  std::optional<double> beta;
  std::optional<double> sigma;
  std::optional<double> alpha;
  std::optional<double> alpha_percentile;
  std::optional<double> nu;
  std::optional<double> corruption_rate;
  std::string optimizer;
};

void add_spec_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment JSON file");
  cmd->add_option("--seed", o.seeds, "Seed (repeatable)")->delimiter(',');
  cmd->add_option("--variant", o.variants, "nll, nll+nce, nll+rank, consurv or all")
      ->delimiter(',');
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--data", o.data, "Dataset CSV");
  cmd->add_option("--schema", o.schema, "Column schema JSON");
  cmd->add_option("--synthetic", o.synthetic_n, "Use n samples of the exponential process");
  cmd->add_option("--n-bins", o.n_bins, "Time bins (0 = default)");
  cmd->add_option("--jobs", o.jobs, "Worker threads");
  cmd->add_option("--epochs", o.epochs, "Maximum epochs");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd->add_option("--patience", o.patience, "Early-stopping patience");
  cmd->add_option("--hidden-dim", o.hidden_dim, "Hidden width");
  cmd->add_option("--depth", o.depth, "Encoder depth");
  cmd->add_option("--lr-contrastive", o.lr_contrastive, "Contrastive-step learning rate");
  cmd->add_option("--lr-nll", o.lr_nll, "Likelihood-step learning rate");
  cmd->add_option("--beta", o.beta, "Contrastive weight");
  cmd->add_option("--sigma", o.sigma, "Weight-function temperature");
  cmd->add_option("--alpha", o.alpha, "Margin in bins");
  cmd->add_option("--alpha-percentile", o.alpha_percentile, "Margin as a gap percentile");
  cmd->add_option("--nu", o.nu, "Similarity temperature");
  cmd->add_option("--corruption-rate", o.corruption_rate, "Fraction of features corrupted");
  cmd->add_option("--optimizer", o.optimizer, "adam or sgd");
}

ex::ExperimentSpec build_spec(const Overrides& o) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw consurv::ConfigError("config", "cannot open " + o.config);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw consurv::ConfigError("config", e.what());
    }
    base = fs::path(o.config).parent_path();
  }
  auto& train = j["train"];
  if (train.is_null()) train = nlohmann::json::object();
  if (!o.seeds.empty()) j["seeds"] = o.seeds;
  if (!o.variants.empty()) j["variants"] = o.variants;
  if (o.synthetic_n) {
    j["dataset"] = {{"synthetic", {{"n_samples", *o.synthetic_n}}}};
  } else if (!o.data.empty()) {
    j["dataset"] = {{"csv", fs::absolute(o.data).string()},
                    {"schema", o.schema.empty() ? "" : fs::absolute(o.schema).string()}};
  }
  if (o.n_bins) j["dataset"]["n_bins"] = *o.n_bins;
  if (o.jobs) j["jobs"] = *o.jobs;
  if (o.hidden_dim) j["model"]["hidden_dim"] = *o.hidden_dim;
  if (o.depth) j["model"]["depth"] = *o.depth;
  if (o.epochs) train["epochs"] = *o.epochs;
  if (o.batch_size) train["batch_size"] = *o.batch_size;
  if (o.patience) train["patience"] = *o.patience;
  if (o.lr_contrastive) train["lr_contrastive"] = *o.lr_contrastive;
  if (o.lr_nll) train["lr_nll"] = *o.lr_nll;
  if (o.beta) train["beta"] = *o.beta;
  if (o.sigma) train["sigma"] = *o.sigma;
  if (o.alpha) train["alpha"] = *o.alpha;
  if (o.nu) train["nu"] = *o.nu;
  if (o.corruption_rate) train["corruption_rate"] = *o.corruption_rate;
  if (!o.optimizer.empty()) train["optimizer"] = o.optimizer;
  if (o.alpha_percentile) j["alpha_percentile"] = *o.alpha_percentile;
  ex::ExperimentSpec spec = ex::ExperimentSpec::from_json(j, base);
  if (!o.out.empty()) spec.output_dir = o.out;
  spec.validate();
  return spec;
}

void print_summary(const std::vector<ex::SeedResult>& results) {
  std::cout << ex::summary_csv(ex::summarize(results));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-time survival models with outcome-aware contrastive learning"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  Overrides o;
  auto* train = app.add_subcommand("train", "Train every (variant, seed) job");
  add_spec_options(train, o);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained checkpoints on the test split");
  add_spec_options(evaluate, o);
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all four variants");
  add_spec_options(ablate, o);

  auto* subgroup = app.add_subcommand("subgroup", "Subgroup mean curves against Kaplan-Meier");
  add_spec_options(subgroup, o);
  std::string checkpoint;
  std::string feature;
  std::string split = "test";
  subgroup->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  subgroup->add_option("--feature", feature, "Binary or categorical feature")->required();
  subgroup->add_option("--split", split, "train, validation or test");

  auto* sweep = app.add_subcommand("sweep", "Sensitivity table over alpha or beta");
  add_spec_options(sweep, o);
  std::string parameter;
  std::vector<double> values;
  sweep->add_option("--param", parameter, "alpha or beta")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  std::size_t n = 1000;
  std::size_t dim = 4;
  std::uint64_t synth_seed = 0;
  std::string generator = "appendix_c2";
  std::string out = ex::default_output_dir().string();
  std::size_t bins = 100;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--n", n, "Samples");
  synth->add_option("--dim", dim, "Feature dimension");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--generator", generator, "appendix_c2 or discrete_oracle");
  synth->add_option("--out", out, "Output directory");
  auto* margin = app.add_subcommand("margin-study", "Censoring-based vs true time differences");
  margin->add_option("--n", n, "Samples");
  margin->add_option("--dim", dim, "Feature dimension");
  margin->add_option("--seed", synth_seed, "Seed");
  margin->add_option("--bins", bins, "Time bins");
  margin->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*train) {
      ex::cmd_train(build_spec(o));
    } else if (*evaluate) {
      print_summary(ex::cmd_evaluate(build_spec(o)));
    } else if (*ablate) {
      print_summary(ex::cmd_ablate(build_spec(o)));
    } else if (*subgroup) {
      for (const auto& r : ex::cmd_subgroup(build_spec(o), checkpoint, feature, split)) {
        std::cout << r.group << ',' << r.size << ',' << consurv::metrics::format_number(r.wasserstein)
                  << '\n';
      }
    } else if (*sweep) {
      ex::cmd_sweep(build_spec(o), parameter, values);
    } else if (*synth) {
      consurv::synth::SynthConfig c;
      c.n_samples = n;
      c.feature_dim = dim;
      c.seed = synth_seed;
      if (generator == "discrete_oracle") {
        c.kind = consurv::synth::Generator::discrete_oracle;
      } else if (generator != "appendix_c2") {
        throw consurv::ConfigError("generator", "unknown generator '" + generator + "'");
      }
      ex::cmd_synth(c, out);
    } else if (*margin) {
      consurv::synth::SynthConfig c;
      c.n_samples = n;
      c.feature_dim = dim;
      c.seed = synth_seed;
      const auto s = ex::cmd_margin_study(c, bins, out);
      std::cout << "pairs," << s.pairs << "\ncensoring_mean,"
                << consurv::metrics::format_number(s.censoring_mean) << "\ntruth_mean,"
                << consurv::metrics::format_number(s.truth_mean) << "\nordered_fraction,"
                << consurv::metrics::format_number(s.ordered_fraction) << '\n';
    }
  } catch (const consurv::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const consurv::DataError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return 0;
}
