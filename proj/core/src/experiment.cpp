#include "consurv/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "consurv/error.hpp"
#include "consurv/losses.hpp"

namespace consurv::experiment {

namespace {

using trainer::Variant;

const std::vector<Variant> kAllVariants{Variant::nll, Variant::nll_nce, Variant::nll_rank,
                                        Variant::consurv};

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

synth::SynthConfig synth_from_json(const nlohmann::json& j) {
  synth::SynthConfig c;
  c.n_samples = j.value("n_samples", c.n_samples);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.seed = j.value("seed", c.seed);
  const std::string gen = j.value("generator", std::string("appendix_c2"));
  if (gen == "appendix_c2") {
    c.kind = synth::Generator::appendix_c2;
  } else if (gen == "discrete_oracle") {
    c.kind = synth::Generator::discrete_oracle;
  } else {
    throw ConfigError("dataset.synthetic.generator", "unknown generator '" + gen + "'");
  }
  const std::string param = j.value("exp_param", std::string("scale"));
  if (param != "scale" && param != "rate") {
    throw ConfigError("dataset.synthetic.exp_param", "must be 'scale' or 'rate'");
  }
  c.exp_param = param == "rate" ? synth::ExpParam::rate : synth::ExpParam::scale;
  return c;
}

nlohmann::json synth_to_json(const synth::SynthConfig& c) {
  return {{"n_samples", c.n_samples},
          {"feature_dim", c.feature_dim},
          {"seed", c.seed},
          {"generator", c.kind == synth::Generator::appendix_c2 ? "appendix_c2" : "discrete_oracle"},
          {"exp_param", c.exp_param == synth::ExpParam::rate ? "rate" : "scale"}};
}

// Runs fn(k) for k in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

struct Job {
  Variant variant;
  std::uint64_t seed;
};

std::vector<Job> jobs_of(const ExperimentSpec& spec) {
  std::vector<Job> out;
  for (Variant v : spec.variants) {
    for (std::uint64_t s : spec.seeds) out.push_back({v, s});
  }
  return out;
}

trainer::TrainConfig job_config(const ExperimentSpec& spec, const data::PreparedData& prepared,
                                Job job) {
  trainer::TrainConfig c = spec.train;
  c.variant = job.variant;
  c.seed = job.seed;
  if (spec.alpha_percentile) {
    c.alpha = losses::alpha_from_percentile(prepared.train.tau, prepared.train.delta,
                                            *spec.alpha_percentile);
  }
  return c;
}

model::ModelConfig job_model(const ExperimentSpec& spec, const data::PreparedData& prepared) {
  model::ModelConfig m = spec.model;
  m.input_dim = prepared.preprocessor.output_dim();
  m.t_max = prepared.grid.t_max();
  return m;
}

const data::SurvivalData& split_of(const data::PreparedData& p, const std::string& name) {
  if (name == "train") return p.train;
  if (name == "validation") return p.validation;
  if (name == "test") return p.test;
  throw ConfigError("split", "unknown split '" + name + "'");
}

const std::vector<std::size_t>& split_rows(const data::PreparedData& p, const std::string& name) {
  if (name == "train") return p.split.train;
  if (name == "validation") return p.split.validation;
  if (name == "test") return p.split.test;
  throw ConfigError("split", "unknown split '" + name + "'");
}

std::string number(double v) { return metrics::format_number(v); }

}  // namespace

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j = {{"n_bins", n_bins}};
  if (synthetic) {
    j["synthetic"] = synth_to_json(*synthetic);
  } else {
    j["csv"] = csv.string();
    j["schema"] = schema.string();
  }
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j, const fs::path& base) {
  DatasetSpec d;
  d.n_bins = j.value("n_bins", d.n_bins);
  if (j.contains("synthetic")) {
    d.synthetic = synth_from_json(j.at("synthetic"));
  } else {
    if (!j.contains("csv")) throw ConfigError("dataset.csv", "missing");
    d.csv = resolve(base, j.at("csv").get<std::string>());
    if (j.contains("schema")) d.schema = resolve(base, j.at("schema").get<std::string>());
  }
  return d;
}

void ExperimentSpec::validate() const {
  if (variants.empty()) throw ConfigError("variants", "must not be empty");
  if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "must be distinct");
  }
  if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size()) {
    throw ConfigError("variants", "must be distinct");
  }
  train.validate();
  losses::ContrastiveConfig{train.nu, train.beta}.validate();
  if (model.hidden_dim < 1) throw ConfigError("model.hidden_dim", "must be at least 1");
  if (model.depth < 1) throw ConfigError("model.depth", "must be at least 1");
  if (model.projection_depth < 1) throw ConfigError("model.projection_depth", "must be at least 1");
  if (model.hazard_depth < 1) throw ConfigError("model.hazard_depth", "must be at least 1");
  if (alpha_percentile && !(*alpha_percentile >= 0.0 && *alpha_percentile <= 100.0)) {
    throw ConfigError("alpha_percentile", "must lie in [0, 100]");
  }
  if (jobs < 1) throw ConfigError("jobs", "must be at least 1");
  if (dataset.synthetic) {
    dataset.synthetic->validate();
  } else {
    if (dataset.csv.empty()) throw ConfigError("dataset.csv", "missing");
    if (dataset.schema.empty()) throw ConfigError("dataset.schema", "missing");
  }
  if (dataset.n_bins == 1) throw ConfigError("dataset.n_bins", "need at least 2 bins");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json vs = nlohmann::json::array();
  for (Variant v : variants) vs.push_back(trainer::variant_name(v));
  nlohmann::json m = model.to_json();
  m.erase("input_dim");
  m.erase("t_max");
  nlohmann::json j = {{"dataset", dataset.to_json()}, {"variants", vs},
                      {"seeds", seeds},               {"model", m},
                      {"train", train.to_json()},     {"output_dir", output_dir.string()},
                      {"jobs", jobs}};
  j["train"].erase("variant");
  j["train"].erase("seed");
  if (alpha_percentile) j["alpha_percentile"] = *alpha_percentile;
  return j;
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j, const fs::path& base) {
  ExperimentSpec s;
  s.output_dir = default_output_dir();
  try {
    if (j.contains("dataset")) s.dataset = DatasetSpec::from_json(j.at("dataset"), base);
    if (j.contains("variants")) {
      s.variants.clear();
      for (const auto& v : j.at("variants")) {
        const std::string name = v.get<std::string>();
        if (name == "all") {
          s.variants = kAllVariants;
          break;
        }
        s.variants.push_back(trainer::parse_variant(name));
      }
    }
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      s.model.hidden_dim = m.value("hidden_dim", s.model.hidden_dim);
      s.model.depth = m.value("depth", s.model.depth);
      s.model.projection_depth = m.value("projection_depth", s.model.projection_depth);
      s.model.hazard_depth = m.value("hazard_depth", s.model.hazard_depth);
      s.model.embedding_dim = m.value("embedding_dim", s.model.embedding_dim);
      if (m.contains("activation")) {
        s.model.activation = model::parse_activation(m.at("activation").get<std::string>());
      }
    }
    if (j.contains("train")) s.train = trainer::TrainConfig::from_json(j.at("train"));
    if (j.contains("alpha_percentile")) s.alpha_percentile = j.at("alpha_percentile").get<double>();
    if (j.contains("output_dir")) {
      s.output_dir = resolve(base, j.at("output_dir").get<std::string>());
    }
    s.jobs = j.value("jobs", s.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", e.what());
  }
  return s;
}

ExperimentSpec ExperimentSpec::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

fs::path default_output_dir() {
  const char* env = std::getenv(kOutputEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("consurv_out");
}

data::RawDataset load_dataset(const DatasetSpec& spec) {
  if (spec.synthetic) {
    if (spec.synthetic->kind == synth::Generator::appendix_c2) {
      return synth::generate_c2(*spec.synthetic).raw;
    }
    synth::OracleConfig oc;
    oc.n_samples = spec.synthetic->n_samples;
    oc.feature_dim = spec.synthetic->feature_dim;
    oc.seed = spec.synthetic->seed;
    return synth::to_raw(synth::generate_oracle(oc));
  }
  return data::load_csv(spec.csv, data::Schema::load(spec.schema));
}

JobPaths job_paths(const fs::path& root, Variant variant, std::uint64_t seed) {
  const fs::path dir = root / trainer::variant_name(variant) / ("seed_" + std::to_string(seed));
  return {dir, dir / "checkpoint.json", dir / "train_log.csv", dir / "metrics.json"};
}

metrics::MetricReport evaluate_model(const model::HazardModel& model,
                                     const data::SurvivalData& set) {
  return metrics::evaluate(model::predict_survival(model, set.x), set.tau, set.delta);
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<Summary> summarize(const std::vector<SeedResult>& results) {
  std::vector<Summary> out;
  std::vector<Variant> order;
  for (const SeedResult& r : results) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  for (Variant v : order) {
    std::vector<double> ci;
    std::vector<double> ibs;
    std::vector<double> ddc;
    Summary s;
    s.variant = v;
    for (const SeedResult& r : results) {
      if (r.variant != v) continue;
      ci.push_back(r.report.ci_integrated);
      ibs.push_back(r.report.ibs);
      ddc.push_back(r.report.ddc);
      if (r.report.dcal_passed()) ++s.dcal_count;
    }
    s.n = ci.size();
    std::tie(s.ci_mean, s.ci_std) = mean_std(ci);
    std::tie(s.ibs_mean, s.ibs_std) = mean_std(ibs);
    std::tie(s.ddc_mean, s.ddc_std) = mean_std(ddc);
    out.push_back(s);
  }
  return out;
}

std::string per_seed_csv(const std::vector<SeedResult>& results) {
  std::string out = "variant,seed," + metrics::MetricReport::csv_header() + "\n";
  for (const SeedResult& r : results) {
    out += trainer::variant_name(r.variant) + "," + std::to_string(r.seed) + "," +
           r.report.csv_row() + "\n";
  }
  return out;
}

std::string summary_csv(const std::vector<Summary>& summaries) {
  std::string out = "variant,n,ci_mean,ci_std,ibs_mean,ibs_std,ddc_mean,ddc_std,dcal_count\n";
  for (const Summary& s : summaries) {
    out += trainer::variant_name(s.variant) + "," + std::to_string(s.n) + "," + number(s.ci_mean) +
           "," + number(s.ci_std) + "," + number(s.ibs_mean) + "," + number(s.ibs_std) + "," +
           number(s.ddc_mean) + "," + number(s.ddc_std) + "," + std::to_string(s.dcal_count) + "\n";
  }
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

void cmd_train(const ExperimentSpec& spec) {
  spec.validate();
  const data::RawDataset raw = load_dataset(spec.dataset);
  const auto jobs = jobs_of(spec);
  parallel_for(jobs.size(), spec.jobs, [&](std::size_t k) {
    const Job job = jobs[k];
    const data::PreparedData prepared = data::prepare(raw, spec.dataset.n_bins, job.seed);
    const trainer::TrainConfig config = job_config(spec, prepared, job);
    const auto result = trainer::train(prepared.train, prepared.validation,
                                       model::init(job_model(spec, prepared), job.seed), config);
    const JobPaths paths = job_paths(spec.output_dir, job.variant, job.seed);
    nlohmann::json extra = {{"variant", trainer::variant_name(job.variant)},
                            {"seed", job.seed},
                            {"grid", prepared.grid.to_json()},
                            {"preprocessor", prepared.preprocessor.to_json()},
                            {"train", config.to_json()},
                            {"best_epoch", result.log.best_epoch},
                            {"epochs_run", result.log.epochs.size()}};
    model::save_checkpoint(paths.checkpoint, result.model, extra);
    write_file(paths.log, result.log.to_csv());
    spdlog::info("trained {} seed {} ({} epochs, best {})", trainer::variant_name(job.variant),
                 job.seed, result.log.epochs.size(), result.log.best_epoch);
  });
}

std::vector<SeedResult> cmd_evaluate(const ExperimentSpec& spec) {
  spec.validate();
  const auto jobs = jobs_of(spec);
  for (const Job& job : jobs) {
    const fs::path ckpt = job_paths(spec.output_dir, job.variant, job.seed).checkpoint;
    if (!fs::exists(ckpt)) throw DataError("missing checkpoint " + ckpt.string());
  }
  const data::RawDataset raw = load_dataset(spec.dataset);
  std::vector<SeedResult> results(jobs.size());
  parallel_for(jobs.size(), spec.jobs, [&](std::size_t k) {
    const Job job = jobs[k];
    const JobPaths paths = job_paths(spec.output_dir, job.variant, job.seed);
    const model::HazardModel model = model::load_checkpoint(paths.checkpoint);
    const data::PreparedData prepared = data::prepare(raw, spec.dataset.n_bins, job.seed);
    if (model.config.t_max != prepared.grid.t_max() ||
        model.config.input_dim != prepared.preprocessor.output_dim()) {
      throw DataError(paths.checkpoint.string() + " does not match the dataset");
    }
    results[k] = {job.variant, job.seed, evaluate_model(model, prepared.test)};
    write_file(paths.metrics, results[k].report.to_json().dump(1) + "\n");
  });
  const auto summaries = summarize(results);
  write_file(spec.output_dir / "metrics_per_seed.csv", per_seed_csv(results));
  write_file(spec.output_dir / "metrics_summary.csv", summary_csv(summaries));
  return results;
}

std::vector<SeedResult> cmd_ablate(ExperimentSpec spec) {
  spec.variants = kAllVariants;
  cmd_train(spec);
  return cmd_evaluate(spec);
}

std::vector<SubgroupResult> subgroup_curves(const metrics::Matrix& survival,
                                            std::span<const int> taus,
                                            std::span<const int> deltas,
                                            const std::vector<std::string>& labels) {
  if (labels.size() != taus.size() || survival.rows() != taus.size()) {
    throw DimensionError("subgroup_curves: labels and curves disagree in length");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<SubgroupResult> out;
  for (const auto& [label, rows] : groups) {
    if (rows.size() < 5) {
      spdlog::warn("subgroup '{}' has {} samples; skipped", label, rows.size());
      continue;
    }
    metrics::Matrix sub(rows.size(), survival.cols());
    std::vector<int> t;
    std::vector<int> d;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      std::copy(survival.row(rows[k]).begin(), survival.row(rows[k]).end(), sub.row(k).begin());
      t.push_back(taus[rows[k]]);
      d.push_back(deltas[rows[k]]);
    }
    SubgroupResult r;
    r.group = label;
    r.size = rows.size();
    r.model_curve = metrics::mean_curve(sub);
    r.km_curve = metrics::kaplan_meier(t, d, survival.cols() - 1).values;
    r.wasserstein = metrics::wasserstein_to_km(r.model_curve, r.km_curve);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SubgroupResult> subgroup_analysis(const model::HazardModel& model,
                                              const data::RawDataset& raw,
                                              const data::PreparedData& prepared,
                                              const std::string& feature,
                                              const std::string& split) {
  const auto column = std::find_if(raw.features.begin(), raw.features.end(),
                                   [&](const data::RawFeature& f) { return f.name == feature; });
  if (column == raw.features.end()) throw ConfigError("feature", "unknown feature '" + feature + "'");
  if (column->kind == data::FeatureKind::real) {
    throw ConfigError("feature", "'" + feature + "' is not binary or categorical");
  }
  const data::SurvivalData& set = split_of(prepared, split);
  std::vector<std::string> labels;
  for (std::size_t r : split_rows(prepared, split)) {
    const double v = column->values[r];
    if (std::isnan(v)) {
      labels.emplace_back("NA");
    } else if (column->kind == data::FeatureKind::categorical) {
      labels.push_back(column->levels[static_cast<std::size_t>(v)]);
    } else {
      labels.push_back(std::to_string(static_cast<int>(v)));
    }
  }
  return subgroup_curves(model::predict_survival(model, set.x), set.tau, set.delta, labels);
}

std::vector<SubgroupResult> cmd_subgroup(const ExperimentSpec& spec, const fs::path& checkpoint,
                                         const std::string& feature, const std::string& split) {
  nlohmann::json extra;
  const model::HazardModel model = model::load_checkpoint(checkpoint, &extra);
  const std::uint64_t seed = extra.value("seed", model.seed);
  const data::RawDataset raw = load_dataset(spec.dataset);
  const data::PreparedData prepared = data::prepare(raw, spec.dataset.n_bins, seed);
  const auto results = subgroup_analysis(model, raw, prepared, feature, split);
  std::string curves = "group,t,model,km\n";
  std::string table = "group,n,wasserstein\n";
  for (const SubgroupResult& r : results) {
    for (std::size_t t = 0; t < r.model_curve.size(); ++t) {
      curves += r.group + "," + std::to_string(t) + "," + number(r.model_curve[t]) + "," +
                number(r.km_curve[t]) + "\n";
    }
    table += r.group + "," + std::to_string(r.size) + "," + number(r.wasserstein) + "\n";
  }
  write_file(spec.output_dir / ("subgroup_" + feature + "_curves.csv"), curves);
  write_file(spec.output_dir / ("subgroup_" + feature + "_wasserstein.csv"), table);
  return results;
}

std::vector<Summary> cmd_sweep(const ExperimentSpec& spec, const std::string& parameter,
                               const std::vector<double>& values) {
  if (parameter != "alpha" && parameter != "beta") {
    throw ConfigError("parameter", "must be 'alpha' or 'beta'");
  }
  if (values.empty()) throw ConfigError("values", "must not be empty");
  std::string csv = parameter + ",variant,n,ci_mean,ci_std,ibs_mean,ibs_std,ddc_mean,ddc_std,"
                                "dcal_count\n";
  const auto spec_for = [&](double v) {
    ExperimentSpec s = spec;
    if (parameter == "alpha") {
      s.train.alpha = v;
      s.alpha_percentile.reset();
    } else {
      s.train.beta = v;
    }
    s.output_dir = spec.output_dir / ("sweep_" + parameter) / number(v);
    return s;
  };
  for (double v : values) spec_for(v).validate();
  std::vector<Summary> rows;
  for (double v : values) {
    const ExperimentSpec s = spec_for(v);
    cmd_train(s);
    for (const Summary& sum : summarize(cmd_evaluate(s))) {
      const std::string line = summary_csv({sum});
      csv += number(v) + "," + line.substr(line.find('\n') + 1);
      rows.push_back(sum);
    }
  }
  write_file(spec.output_dir / ("sweep_" + parameter + ".csv"), csv);
  return rows;
}

void cmd_synth(const synth::SynthConfig& config, const fs::path& out) {
  config.validate();
  write_file(out / "schema.json", synth::synth_schema(config.feature_dim).to_json().dump(1) + "\n");
  if (config.kind == synth::Generator::appendix_c2) {
    const synth::C2Data d = synth::generate_c2(config);
    synth::write_csv(out / "data.csv", d.raw);
    synth::write_truth_csv(out / "truth.csv", d);
  } else {
    synth::OracleConfig oc;
    oc.n_samples = config.n_samples;
    oc.feature_dim = config.feature_dim;
    oc.seed = config.seed;
    synth::write_csv(out / "data.csv", synth::to_raw(synth::generate_oracle(oc)));
  }
}

MarginSummary summarize_margin(const std::vector<synth::MarginPair>& pairs) {
  MarginSummary s;
  s.pairs = pairs.size();
  if (pairs.empty()) return s;
  std::size_t ordered = 0;
  for (const auto& p : pairs) {
    s.censoring_mean += static_cast<double>(p.censoring_delta);
    s.truth_mean += static_cast<double>(p.truth_delta);
    if (p.truth_delta >= p.censoring_delta) ++ordered;
  }
  const auto n = static_cast<double>(pairs.size());
  s.censoring_mean /= n;
  s.truth_mean /= n;
  s.ordered_fraction = static_cast<double>(ordered) / n;
  return s;
}

MarginSummary cmd_margin_study(const synth::SynthConfig& config, std::size_t n_bins,
                               const fs::path& out) {
  const synth::C2Data d = synth::generate_c2(config);
  const auto pairs = synth::margin_study(d, n_bins);
  std::string csv = "anchor,censored,anchor_tau,censoring_delta,truth_delta\n";
  for (const auto& p : pairs) {
    csv += std::to_string(p.anchor) + "," + std::to_string(p.censored) + "," +
           std::to_string(p.anchor_tau) + "," + std::to_string(p.censoring_delta) + "," +
           std::to_string(p.truth_delta) + "\n";
  }
  const MarginSummary s = summarize_margin(pairs);
  write_file(out / "margin_pairs.csv", csv);
  const nlohmann::json j = {{"pairs", s.pairs},
                            {"censoring_mean", s.censoring_mean},
                            {"truth_mean", s.truth_mean},
                            {"ordered_fraction", s.ordered_fraction}};
  write_file(out / "margin_summary.json", j.dump(1) + "\n");
  return s;
}

}  // namespace consurv::experiment
