#include "consurv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <tuple>

#include "consurv/error.hpp"
#include "consurv/random.hpp"

namespace consurv::synth {

namespace {

constexpr double kCertainLogit = 50.0;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double draw_exponential(double parameter, ExpParam kind, Rng& rng) {
  const double rate = kind == ExpParam::scale ? 1.0 / parameter : parameter;
  return std::exponential_distribution<double>(rate)(rng);
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_samples < 1) throw ConfigError("n_samples", "must be at least 1");
  if (kind == Generator::appendix_c2 && feature_dim < 4) {
    throw ConfigError("feature_dim", "the exponential process needs at least 4 features");
  }
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be at least 1");
}

double c2_event_parameter(const std::vector<double>& x) {
  return (10.0 * x[0]) * (10.0 * x[0]) + 5.0 * x[2];
}

double c2_censor_parameter(const std::vector<double>& x) {
  return (10.0 * x[1]) * (10.0 * x[1]) + 5.0 * x[3];
}

C2Data generate_c2(const SynthConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "synth-c2"));
  C2Data out;
  for (std::size_t k = 0; k < config.feature_dim; ++k) {
    out.raw.features.push_back({"x" + std::to_string(k + 1), data::FeatureKind::real, {}, {}});
  }
  std::vector<double> x(config.feature_dim);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    for (double& v : x) v = uniform01(rng);
    double t = 0.0;
    double c = 0.0;
    // A zero parameter (x1 = x3 = 0) would make the scale degenerate.
    do {
      t = draw_exponential(std::max(c2_event_parameter(x), 1e-12), config.exp_param, rng);
      c = draw_exponential(std::max(c2_censor_parameter(x), 1e-12), config.exp_param, rng);
    } while (!(t > 0.0) || !(c > 0.0));
    for (std::size_t k = 0; k < x.size(); ++k) out.raw.features[k].values.push_back(x[k]);
    out.raw.times.push_back(std::min(t, c));
    out.raw.events.push_back(t <= c ? 1 : 0);
    out.event_time.push_back(t);
    out.censor_time.push_back(c);
  }
  return out;
}

std::vector<MarginPair> margin_study(const C2Data& data, std::size_t n_bins, double alpha) {
  const data::Discretized d = data::discretize(data.raw.times, n_bins);
  const auto& deltas = data.raw.events;
  std::vector<MarginPair> out;
  for (std::size_t i = 0; i < d.taus.size(); ++i) {
    if (deltas[i] != 1) continue;
    for (std::size_t j = 0; j < d.taus.size(); ++j) {
      if (deltas[j] != 0 || d.taus[i] >= d.taus[j]) continue;
      const long gap = d.taus[j] - d.taus[i];
      if (static_cast<double>(gap) < alpha) continue;
      const long truth = d.grid.bin_unclamped(data.event_time[j]);
      out.push_back({i, j, d.taus[i], gap, std::labs(truth - d.taus[i])});
    }
  }
  std::sort(out.begin(), out.end(), [](const MarginPair& a, const MarginPair& b) {
    return std::tie(a.anchor_tau, a.anchor, a.censored) <
           std::tie(b.anchor_tau, b.anchor, b.censored);
  });
  return out;
}

void OracleConfig::validate() const {
  if (n_samples < 1) throw ConfigError("n_samples", "must be at least 1");
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be at least 1");
  if (t_max < 1) throw ConfigError("t_max", "must be at least 1");
  if (!baseline.empty() && baseline.size() != t_max + 1) {
    throw ConfigError("baseline", "needs t_max + 1 entries");
  }
  if (!coefficients.empty() && coefficients.size() != feature_dim) {
    throw ConfigError("coefficients", "needs feature_dim entries");
  }
  if (!(base_hazard >= 0.0 && base_hazard < 1.0)) {
    throw ConfigError("base_hazard", "must lie in [0, 1)");
  }
  if (!(censor_hazard >= 0.0 && censor_hazard < 1.0)) {
    throw ConfigError("censor_hazard", "must lie in [0, 1)");
  }
}

double OracleData::hazard(std::size_t row, std::size_t t) const {
  if (force_terminal && t + 1 == baseline.size()) return 1.0;
  return sigmoid(linear[row] + baseline[t]);
}

double OracleData::survival(std::size_t row, std::size_t t) const {
  double s = 1.0;
  for (std::size_t k = 0; k <= t; ++k) s *= 1.0 - hazard(row, k);
  return s;
}

ad::Matrix OracleData::hazard_matrix() const {
  ad::Matrix out(linear.size(), baseline.size());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t t = 0; t < out.cols(); ++t) out(i, t) = hazard(i, t);
  }
  return out;
}

ad::Matrix OracleData::survival_matrix() const {
  ad::Matrix out(linear.size(), baseline.size());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double s = 1.0;
    for (std::size_t t = 0; t < out.cols(); ++t) {
      s *= 1.0 - hazard(i, t);
      out(i, t) = s;
    }
  }
  return out;
}

std::vector<double> OracleData::survival_at_events() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.delta[i] == 1) out.push_back(survival(i, static_cast<std::size_t>(data.tau[i])));
  }
  return out;
}

int sample_event_time(const std::vector<double>& lambda, Rng& rng) {
  // Inverse transform: T = min{t : S(t) < U}.
  const double u = uniform01(rng);
  double s = 1.0;
  for (std::size_t t = 0; t < lambda.size(); ++t) {
    s *= 1.0 - lambda[t];
    if (s < u || s <= 0.0) return static_cast<int>(t);
  }
  return static_cast<int>(lambda.size());
}

OracleData generate_oracle(const OracleConfig& config) {
  config.validate();
  Rng param_rng(derive_seed(config.seed, "oracle-params"));
  Rng rng(derive_seed(config.seed, "oracle-sample"));
  const std::size_t horizon = config.t_max + 1;
  OracleData out;
  out.force_terminal = config.force_terminal;
  out.baseline = config.baseline;
  if (out.baseline.empty() && config.base_hazard > 0.0) {
    out.baseline.assign(config.t_max + 1, std::log(config.base_hazard / (1.0 - config.base_hazard)));
  } else if (out.baseline.empty()) {
    for (std::size_t t = 0; t < horizon; ++t) {
      // logit(1 / (t_max + 1 - t)); the last step is certain.
      const double remaining = static_cast<double>(horizon - t);
      out.baseline.push_back(t + 1 == horizon ? kCertainLogit : -std::log(remaining - 1.0));
    }
  }
  out.coefficients = config.coefficients;
  if (out.coefficients.empty()) {
    for (std::size_t k = 0; k < config.feature_dim; ++k) {
      out.coefficients.push_back(config.coef_scale * (2.0 * uniform01(param_rng) - 1.0));
    }
  }

  const std::size_t n = config.n_samples;
  out.data.x = ad::Matrix(n, config.feature_dim);
  out.data.t_max = config.t_max;
  std::vector<double> lambda(horizon);
  for (std::size_t i = 0; i < n; ++i) {
    double lin = 0.0;
    for (std::size_t k = 0; k < config.feature_dim; ++k) {
      out.data.x(i, k) = uniform01(rng);
      lin += out.coefficients[k] * out.data.x(i, k);
    }
    out.linear.push_back(lin);
    for (std::size_t t = 0; t < horizon; ++t) lambda[t] = out.hazard(i, t);
    const int event = sample_event_time(lambda, rng);
    int censor = static_cast<int>(horizon);
    if (config.censor_hazard > 0.0) {
      censor = sample_event_time(std::vector<double>(horizon, config.censor_hazard), rng);
    }
    out.event_time.push_back(event);
    const int last = static_cast<int>(config.t_max);
    if (event <= censor && event <= last) {
      out.data.tau.push_back(event);
      out.data.delta.push_back(1);
    } else {
      out.data.tau.push_back(std::min({event, censor, last}));
      out.data.delta.push_back(0);
    }
  }
  return out;
}

data::Schema synth_schema(std::size_t feature_dim) {
  data::Schema schema;
  for (std::size_t k = 0; k < feature_dim; ++k) {
    schema.columns.push_back({"x" + std::to_string(k + 1), data::FeatureKind::real,
                              data::ColumnRole::feature});
  }
  schema.columns.push_back({"time", data::FeatureKind::real, data::ColumnRole::time});
  schema.columns.push_back({"event", data::FeatureKind::binary, data::ColumnRole::event});
  return schema;
}

void write_csv(const std::filesystem::path& path, const data::RawDataset& raw) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& f : raw.features) out << f.name << ',';
  out << "time,event\n";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    for (const auto& f : raw.features) out << format_value(f.values[i]) << ',';
    out << format_value(raw.times[i]) << ',' << raw.events[i] << '\n';
  }
}

void write_truth_csv(const std::filesystem::path& path, const C2Data& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "row,event_time,censor_time\n";
  for (std::size_t i = 0; i < data.event_time.size(); ++i) {
    out << i << ',' << format_value(data.event_time[i]) << ',' << format_value(data.censor_time[i])
        << '\n';
  }
}

data::RawDataset to_raw(const OracleData& d) {
  data::RawDataset raw;
  for (std::size_t k = 0; k < d.data.dim(); ++k) {
    data::RawFeature f{"x" + std::to_string(k + 1), data::FeatureKind::real, {}, {}};
    for (std::size_t i = 0; i < d.data.size(); ++i) f.values.push_back(d.data.x(i, k));
    raw.features.push_back(std::move(f));
  }
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    raw.times.push_back(d.data.tau[i]);
    raw.events.push_back(d.data.delta[i]);
  }
  return raw;
}

}  // namespace consurv::synth
