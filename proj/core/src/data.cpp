#include "consurv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "consurv/error.hpp"

namespace consurv::data {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

FeatureKind parse_kind(const std::string& s) {
  if (s == "real") return FeatureKind::real;
  if (s == "binary") return FeatureKind::binary;
  if (s == "categorical") return FeatureKind::categorical;
  throw ConfigError("kind", "unknown feature kind '" + s + "'");
}

std::string kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::real: return "real";
    case FeatureKind::binary: return "binary";
    case FeatureKind::categorical: return "categorical";
  }
  return "real";
}

ColumnRole parse_role(const std::string& s) {
  if (s == "feature") return ColumnRole::feature;
  if (s == "time") return ColumnRole::time;
  if (s == "event") return ColumnRole::event;
  throw ConfigError("role", "unknown column role '" + s + "'");
}

std::string role_name(ColumnRole r) {
  switch (r) {
    case ColumnRole::feature: return "feature";
    case ColumnRole::time: return "time";
    case ColumnRole::event: return "event";
  }
  return "feature";
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(trim(field));
  return out;
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "?" || s == "null";
}

std::optional<double> parse_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Quota allocation by largest remainder. Stratum s receives about
// counts[s] * target / population rows, never more than caps[s].
std::vector<std::size_t> allocate(const std::vector<std::size_t>& counts,
                                  const std::vector<std::size_t>& caps, std::size_t population,
                                  std::size_t target) {
  const std::size_t k = counts.size();
  std::vector<std::size_t> quota(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < k; ++s) {
    const double share = static_cast<double>(counts[s]) * static_cast<double>(target) /
                         static_cast<double>(population);
    quota[s] = std::min(caps[s], static_cast<std::size_t>(std::floor(share)));
    assigned += quota[s];
    remainders.emplace_back(share - std::floor(share), s);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  bool progress = true;
  while (assigned < target && progress) {
    progress = false;
    for (const auto& [frac, s] : remainders) {
      if (assigned < target && quota[s] < caps[s]) {
        ++quota[s];
        ++assigned;
        progress = true;
      }
    }
  }
  return quota;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

Schema Schema::from_json(const nlohmann::json& j) {
  Schema schema;
  const auto& cols = j.contains("columns") ? j.at("columns") : j;
  if (!cols.is_array()) throw ConfigError("columns", "schema must list columns");
  for (const auto& c : cols) {
    ColumnSpec spec;
    spec.name = c.at("name").get<std::string>();
    spec.kind = parse_kind(c.value("kind", std::string("real")));
    spec.role = parse_role(c.value("role", std::string("feature")));
    schema.columns.push_back(spec);
  }
  const auto count = [&](ColumnRole r) {
    return std::count_if(schema.columns.begin(), schema.columns.end(),
                         [r](const ColumnSpec& c) { return c.role == r; });
  };
  if (count(ColumnRole::time) != 1) throw ConfigError("columns", "need exactly one time column");
  if (count(ColumnRole::event) != 1) throw ConfigError("columns", "need exactly one event column");
  if (count(ColumnRole::feature) == 0) throw ConfigError("columns", "no feature columns");
  return schema;
}

Schema Schema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("schema " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json Schema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    cols.push_back({{"name", c.name}, {"kind", kind_name(c.kind)}, {"role", role_name(c.role)}});
  }
  return {{"columns", cols}};
}

const ColumnSpec& Schema::time_column() const {
  return *std::find_if(columns.begin(), columns.end(),
                       [](const ColumnSpec& c) { return c.role == ColumnRole::time; });
}

const ColumnSpec& Schema::event_column() const {
  return *std::find_if(columns.begin(), columns.end(),
                       [](const ColumnSpec& c) { return c.role == ColumnRole::event; });
}

// ---------------------------------------------------------------------------
// CSV

RawDataset parse_csv(std::istream& in, const Schema& schema) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("no records");

  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;
  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw DataError("unknown column '" + name + "' (not in header)");
    return it->second;
  };

  const std::size_t time_col = locate(schema.time_column().name);
  const std::size_t event_col = locate(schema.event_column().name);
  RawDataset raw;
  std::vector<std::size_t> feature_cols;
  std::vector<std::map<std::string, std::size_t>> level_index;
  for (const auto& c : schema.columns) {
    if (c.role != ColumnRole::feature) continue;
    feature_cols.push_back(locate(c.name));
    raw.features.push_back(RawFeature{c.name, c.kind, {}, {}});
    level_index.emplace_back();
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError(at_line(line_no) + "expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    const std::string& t_str = fields[time_col];
    const std::string& e_str = fields[event_col];
    if (is_missing(t_str) || is_missing(e_str)) {
      ++raw.rejected_rows;
      continue;
    }
    const auto t = parse_number(t_str);
    if (!t || !std::isfinite(*t)) {
      throw DataError(at_line(line_no) + "time value '" + t_str + "' is not a number");
    }
    if (*t < 0.0) throw DataError(at_line(line_no) + "negative time " + t_str);
    const auto e = parse_number(e_str);
    if (!e || (*e != 0.0 && *e != 1.0)) {
      throw DataError(at_line(line_no) + "event value '" + e_str + "' is not 0 or 1");
    }
    raw.times.push_back(*t);
    raw.events.push_back(static_cast<int>(*e));

    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      RawFeature& feat = raw.features[f];
      const std::string& s = fields[feature_cols[f]];
      if (is_missing(s)) {
        feat.values.push_back(kMissing);
        continue;
      }
      if (feat.kind == FeatureKind::categorical) {
        auto [it, inserted] = level_index[f].try_emplace(s, feat.levels.size());
        if (inserted) feat.levels.push_back(s);
        feat.values.push_back(static_cast<double>(it->second));
        continue;
      }
      const auto v = parse_number(s);
      if (!v || !std::isfinite(*v)) {
        throw DataError(at_line(line_no) + "column '" + feat.name + "' value '" + s +
                        "' is not a number");
      }
      if (feat.kind == FeatureKind::binary && *v != 0.0 && *v != 1.0) {
        throw DataError(at_line(line_no) + "binary column '" + feat.name + "' has value " + s);
      }
      feat.values.push_back(*v);
    }
  }
  if (raw.times.empty()) throw DataError("no records");
  if (raw.rejected_rows > 0) {
    spdlog::warn("load_csv: rejected {} rows with missing time or event", raw.rejected_rows);
  }
  return raw;
}

RawDataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_csv(in, schema);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Time grid

int TimeGrid::bin(double t) const {
  const long b = bin_unclamped(t);
  return static_cast<int>(std::clamp<long>(b, 0, static_cast<long>(t_max())));
}

long TimeGrid::bin_unclamped(double t) const {
  // Division by the exact bin count keeps integer grids exact.
  return static_cast<long>(std::floor(t * static_cast<double>(n_bins) / max_time));
}

double TimeGrid::midpoint(int tau) const { return (static_cast<double>(tau) + 0.5) * width(); }

std::vector<double> TimeGrid::edges() const {
  std::vector<double> e(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k) {
    e[k] = max_time * static_cast<double>(k) / static_cast<double>(n_bins);
  }
  return e;
}

nlohmann::json TimeGrid::to_json() const { return {{"max_time", max_time}, {"n_bins", n_bins}}; }

TimeGrid TimeGrid::from_json(const nlohmann::json& j) {
  return TimeGrid{j.at("max_time").get<double>(), j.at("n_bins").get<std::size_t>()};
}

std::size_t default_bin_count(std::span<const double> times) {
  std::set<double> distinct(times.begin(), times.end());
  return std::min<std::size_t>(100, std::max<std::size_t>(2, distinct.size()));
}

Discretized discretize(std::span<const double> times, std::size_t n_bins) {
  if (n_bins < 2) throw ConfigError("n_bins", "need at least 2 bins");
  if (times.empty()) throw DataError("discretize: no times");
  double lo = times[0];
  double hi = times[0];
  for (double t : times) {
    if (!(t >= 0.0)) throw DataError("discretize: negative or NaN time");
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  if (lo == hi) throw DataError("discretize: all times identical, degenerate grid");
  Discretized out{TimeGrid{hi, n_bins}, {}};
  out.taus.reserve(times.size());
  for (double t : times) out.taus.push_back(out.grid.bin(t));
  return out;
}

// ---------------------------------------------------------------------------
// Split

Split split(std::span<const int> events, std::uint64_t seed) {
  const std::size_t n = events.size();
  Split out;
  if (n == 0) return out;
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> strata(2);
  for (std::size_t i = 0; i < n; ++i) strata[events[i] == 1 ? 1 : 0].push_back(i);
  for (auto& s : strata) std::shuffle(s.begin(), s.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(kTrainFraction * static_cast<double>(n)));
  const auto n_test = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n))));

  const std::vector<std::size_t> available{strata[0].size(), strata[1].size()};
  const auto train_quota = allocate(available, available, n, n_train);
  const std::vector<std::size_t> left{available[0] - train_quota[0],
                                      available[1] - train_quota[1]};
  const auto test_quota = allocate(available, left, n, n_test);

  for (std::size_t s = 0; s < 2; ++s) {
    const auto& idx = strata[s];
    auto it = idx.begin();
    out.train.insert(out.train.end(), it, it + static_cast<long>(train_quota[s]));
    it += static_cast<long>(train_quota[s]);
    out.test.insert(out.test.end(), it, it + static_cast<long>(test_quota[s]));
    it += static_cast<long>(test_quota[s]);
    out.validation.insert(out.validation.end(), it, idx.end());
  }
  std::shuffle(out.train.begin(), out.train.end(), rng);
  std::shuffle(out.test.begin(), out.test.end(), rng);
  std::shuffle(out.validation.begin(), out.validation.end(), rng);
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

Preprocessor Preprocessor::fit(const RawDataset& raw, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw DataError("Preprocessor::fit: empty training set");
  Preprocessor p;
  for (const RawFeature& f : raw.features) {
    Column col{f.name, f.kind};
    std::vector<double> observed;
    for (std::size_t r : train_rows) {
      if (!std::isnan(f.values[r])) observed.push_back(f.values[r]);
    }
    if (f.kind == FeatureKind::real) {
      col.fill = observed.empty() ? 0.0 : median_of(observed);
    } else {
      // Mode; ties resolved toward the smaller value.
      std::map<double, std::size_t> counts;
      for (double v : observed) ++counts[v];
      std::size_t best = 0;
      for (const auto& [v, c] : counts) {
        if (c > best) {
          best = c;
          col.fill = v;
        }
      }
    }
    if (f.kind == FeatureKind::categorical) {
      col.levels = f.levels.size();
      for (const auto& level : f.levels) p.output_names_.push_back(f.name + "=" + level);
    } else {
      if (!observed.empty()) {
        col.lo = *std::min_element(observed.begin(), observed.end());
        col.hi = *std::max_element(observed.begin(), observed.end());
      } else {
        col.lo = 0.0;
        col.hi = 1.0;
      }
      p.output_names_.push_back(f.name);
    }
    p.columns_.push_back(col);
  }
  return p;
}

Matrix Preprocessor::transform(const RawDataset& raw, std::span<const std::size_t> rows) const {
  if (raw.features.size() != columns_.size()) {
    throw DimensionError("Preprocessor::transform: feature count mismatch");
  }
  Matrix out(rows.size(), output_dim());
  std::size_t offset = 0;
  for (std::size_t f = 0; f < columns_.size(); ++f) {
    const Column& col = columns_[f];
    const auto& values = raw.features[f].values;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double v = values[rows[i]];
      if (std::isnan(v)) v = col.fill;
      if (col.kind == FeatureKind::categorical) {
        const auto level = static_cast<std::size_t>(v);
        if (level < col.levels) out(i, offset + level) = 1.0;
      } else {
        const double range = col.hi - col.lo;
        out(i, offset) = range > 0.0 ? (v - col.lo) / range : 0.0;
      }
    }
    offset += col.kind == FeatureKind::categorical ? col.levels : 1;
  }
  return out;
}

std::pair<std::size_t, std::size_t> Preprocessor::columns_of(const std::string& name) const {
  std::size_t offset = 0;
  for (const Column& col : columns_) {
    const std::size_t width = col.kind == FeatureKind::categorical ? col.levels : 1;
    if (col.name == name) return {offset, width};
    offset += width;
  }
  throw DataError("unknown feature '" + name + "'");
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const Column& c : columns_) {
    cols.push_back({{"name", c.name},
                    {"kind", kind_name(c.kind)},
                    {"fill", c.fill},
                    {"lo", c.lo},
                    {"hi", c.hi},
                    {"levels", c.levels}});
  }
  return {{"columns", cols}, {"output_names", output_names_}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
  Preprocessor p;
  for (const auto& c : j.at("columns")) {
    p.columns_.push_back(Column{c.at("name").get<std::string>(),
                                parse_kind(c.at("kind").get<std::string>()),
                                c.at("fill").get<double>(), c.at("lo").get<double>(),
                                c.at("hi").get<double>(), c.at("levels").get<std::size_t>()});
  }
  p.output_names_ = j.at("output_names").get<std::vector<std::string>>();
  return p;
}

SurvivalData SurvivalData::subset(std::span<const std::size_t> rows) const {
  SurvivalData out;
  out.t_max = t_max;
  out.x = Matrix(rows.size(), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.x.row(i).begin());
    out.tau.push_back(tau[rows[i]]);
    out.delta.push_back(delta[rows[i]]);
  }
  return out;
}

PreparedData prepare(const RawDataset& raw, std::size_t n_bins, std::uint64_t seed) {
  PreparedData out;
  const std::size_t bins = n_bins == 0 ? default_bin_count(raw.times) : n_bins;
  Discretized disc = discretize(raw.times, bins);
  out.grid = disc.grid;
  out.split = split(raw.events, derive_seed(seed, "split"));
  out.preprocessor = Preprocessor::fit(raw, out.split.train);

  auto build = [&](const std::vector<std::size_t>& rows) {
    SurvivalData d;
    d.t_max = out.grid.t_max();
    d.x = out.preprocessor.transform(raw, rows);
    for (std::size_t r : rows) {
      d.tau.push_back(disc.taus[r]);
      d.delta.push_back(raw.events[r]);
    }
    return d;
  };
  out.train = build(out.split.train);
  out.validation = build(out.split.validation);
  out.test = build(out.split.test);
  return out;
}

// ---------------------------------------------------------------------------
// Corruption and batching

std::size_t corrupted_count(std::size_t dim, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("corruption_rate", "must lie in [0, 1]");
  return std::min(dim, static_cast<std::size_t>(std::llround(rate * static_cast<double>(dim))));
}

Matrix corrupt(const Matrix& features, const Matrix& pool, double rate, Rng& rng) {
  const std::size_t d = features.cols();
  const std::size_t k = corrupted_count(d, rate);
  Matrix out = features;
  if (k == 0) return out;
  if (pool.cols() != d) throw DimensionError("corrupt: pool width differs from features");
  if (pool.rows() == 0) throw DataError("corrupt: empty marginal pool");
  std::vector<std::size_t> coords(d);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    std::iota(coords.begin(), coords.end(), 0);
    // Partial Fisher-Yates: the first k entries form a uniform k-subset.
    for (std::size_t c = 0; c < k; ++c) {
      std::swap(coords[c], coords[c + uniform_index(rng, d - c)]);
      const std::size_t j = coords[c];
      out(i, j) = pool(uniform_index(rng, pool.rows()), j);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    out.emplace_back(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(end));
  }
  return out;
}

Batch make_batch(const SurvivalData& data, std::span<const std::size_t> rows, const Matrix& pool,
                 double corruption_rate, Rng& rng) {
  Batch b;
  b.rows.assign(rows.begin(), rows.end());
  b.x = Matrix(rows.size(), data.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(data.x.row(rows[i]).begin(), data.x.row(rows[i]).end(), b.x.row(i).begin());
    b.tau.push_back(data.tau[rows[i]]);
    b.delta.push_back(data.delta[rows[i]]);
  }
  b.x_corrupted = corrupt(b.x, pool, corruption_rate, rng);
  return b;
}

BatchIterator::BatchIterator(const SurvivalData& data, std::size_t batch_size, std::uint64_t seed,
                             double corruption_rate)
    : data_(&data),
      batch_size_(batch_size),
      corruption_rate_(corruption_rate),
      order_rng_(derive_seed(seed, "batch-order")),
      corrupt_rng_(derive_seed(seed, "corruption")) {
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
  (void)corrupted_count(data.dim(), corruption_rate);
}

std::vector<Batch> BatchIterator::next_epoch() {
  std::vector<Batch> out;
  for (const auto& rows : epoch_batches(data_->size(), batch_size_, order_rng_)) {
    out.push_back(make_batch(*data_, rows, data_->x, corruption_rate_, corrupt_rng_));
  }
  return out;
}

}  // namespace consurv::data
