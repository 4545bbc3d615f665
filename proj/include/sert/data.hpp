#pragma once

// Long-format observation tables and everything that produces or consumes
// them: the synthetic spatio-temporal generator, random sparsification,
// CSV ingestion, and sample-window construction.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sert/encoding.hpp"
#include "sert/errors.hpp"
#include "sert/io.hpp"
#include "sert/log.hpp"
#include "sert/rng.hpp"

namespace sert {

struct ObservationRecord {
  std::int64_t time = 0;  // integer hour index
  std::uint32_t location = 0;
  std::uint32_t variable = 0;
  double value = 0.0;
};

// Long-format table: at most one record per (time, location, variable),
// records sorted by (time, location, variable), values finite.
class LongTable {
 public:
  std::uint32_t intern_location(const std::string& name) {
    return intern(location_names_, location_ids_, name);
  }
  std::uint32_t intern_variable(const std::string& name) {
    return intern(variable_names_, variable_ids_, name);
  }

  void add(ObservationRecord r) {
    if (!std::isfinite(r.value))
      throw DataError("non-finite value in observation table");
    records_.push_back(r);
    sorted_ = false;
  }

  // Sorts and enforces key uniqueness. Call after bulk insertion.
  void finalize() {
    std::sort(records_.begin(), records_.end(), key_less);
    for (std::size_t i = 1; i < records_.size(); ++i)
      if (!key_less(records_[i - 1], records_[i]))
        throw DataError("duplicate (time, location, variable) record");
    sorted_ = true;
  }

  const std::vector<ObservationRecord>& records() const {
    if (!sorted_) throw std::logic_error("LongTable not finalized");
    return records_;
  }
  const std::vector<std::string>& location_names() const {
    return location_names_;
  }
  const std::vector<std::string>& variable_names() const {
    return variable_names_;
  }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::int64_t min_time() const {
    return records().empty() ? 0 : records_.front().time;
  }
  std::int64_t max_time() const {
    return records().empty() ? 0 : records_.back().time;
  }

  // Records with time in [begin, end), as an index span into records().
  std::pair<std::size_t, std::size_t> time_span(std::int64_t begin,
                                                std::int64_t end) const {
    const auto& rs = records();
    auto lo = std::lower_bound(
        rs.begin(), rs.end(), begin,
        [](const ObservationRecord& r, std::int64_t t) { return r.time < t; });
    auto hi = std::lower_bound(
        rs.begin(), rs.end(), end,
        [](const ObservationRecord& r, std::int64_t t) { return r.time < t; });
    return {static_cast<std::size_t>(lo - rs.begin()),
            static_cast<std::size_t>(hi - rs.begin())};
  }

  std::optional<double> value_at(std::int64_t time, std::uint32_t location,
                                 std::uint32_t variable) const {
    const auto& rs = records();
    ObservationRecord probe{time, location, variable, 0.0};
    auto it = std::lower_bound(rs.begin(), rs.end(), probe, key_less);
    if (it != rs.end() && it->time == time && it->location == location &&
        it->variable == variable)
      return it->value;
    return std::nullopt;
  }

 private:
  static bool key_less(const ObservationRecord& a,
                       const ObservationRecord& b) {
    if (a.time != b.time) return a.time < b.time;
    if (a.location != b.location) return a.location < b.location;
    return a.variable < b.variable;
  }
  static std::uint32_t intern(std::vector<std::string>& names,
                              std::map<std::string, std::uint32_t>& ids,
                              const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(names.size());
    names.push_back(name);
    ids.emplace(name, id);
    return id;
  }

  std::vector<std::string> location_names_, variable_names_;
  std::map<std::string, std::uint32_t> location_ids_, variable_ids_;
  std::vector<ObservationRecord> records_;
  bool sorted_ = true;
};

// ---------------------------------------------------------------------------
// Synthetic generator: a 16-component AR(1) process with deterministic
// temporal effects and spatially correlated noise,
//   Y_t = intercept + ar_coeff * Y_{t-1} + X_t + s_t,   s_t ~ MVN(0, Sigma),
//   Sigma = U U^T with U_ij ~ Uniform(-1, 1).

inline constexpr std::size_t kSimSeries = 16;

struct SimulationSpec {
  std::size_t n_series = kSimSeries;
  std::size_t n_steps = 40000;
  double intercept = 2.0;
  double ar_coeff = 0.4;
  double freq_fast = 0.005;    // drives the 10*sin component
  double freq_slow = 0.0005;   // drives the remaining sinusoids
  double trend_slope = 0.002;  // linear drift component
  std::uint64_t seed = 0;
  // Test hooks: disable the stochastic and/or deterministic parts.
  bool disable_noise = false;
  bool disable_temporal = false;

  void validate() const {
    if (n_steps == 0) throw UsageError("simulation needs n_steps > 0");
    if (!disable_temporal && n_series != kSimSeries)
      throw UsageError(
          "the temporal-effect vector defines exactly 16 components; "
          "n_series must be 16 unless temporal effects are disabled");
    if (n_series == 0) throw UsageError("simulation needs n_series > 0");
  }
};

// Deterministic temporal effect vector at step t.
inline std::array<double, kSimSeries> temporal_effects(
    const SimulationSpec& s, std::int64_t t) {
  const double tt = static_cast<double>(t);
  const double a = s.freq_fast * tt;
  const double b = s.freq_slow * tt;
  const double ramp = s.trend_slope * tt;
  return {10 * std::sin(a), std::cos(b),      ramp,
          -ramp + 10 * std::sin(a),           5 * std::sin(b),
          12 * std::cos(b), 7 * std::sin(b),  8 * std::cos(b),
          2 * std::sin(b),  3 * std::cos(b),  12 * std::sin(b),
          18 * std::cos(b), 4 * std::sin(b),  15 * std::cos(b),
          11 * std::sin(b), 10 * std::cos(b)};
}

// Sigma = U U^T; symmetric positive semi-definite by construction.
inline Eigen::MatrixXd covariance_from_factor(const Eigen::MatrixXd& factor) {
  return factor * factor.transpose();
}

inline Eigen::MatrixXd simulate_covariance(std::uint64_t seed,
                                           std::size_t n = kSimSeries) {
  Rng rng(substream_seed(seed, "covariance"));
  Eigen::MatrixXd u(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rng.uniform(-1.0, 1.0);
  return covariance_from_factor(u);
}

inline std::string sim_variable_name(std::size_t i) {
  std::string n = std::to_string(i + 1);
  if (n.size() < 2) n.insert(n.begin(), '0');
  return "series" + n;
}

inline constexpr const char* kSimLocation = "sim";

// Runs the recursion Y_0 = intercept + X_0 + s_0,
// Y_t = intercept + ar_coeff * Y_{t-1} + X_t + s_t for t = 1..n_steps-1.
inline LongTable simulate_series(const SimulationSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_series;

  Eigen::MatrixXd chol_factor;  // lower-triangular L with L L^T = Sigma + jitter
  if (!spec.disable_noise) {
    Eigen::MatrixXd sigma = simulate_covariance(spec.seed, n);
    sigma.diagonal().array() += 1e-8;  // U U^T can be near-singular
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw NumericError("covariance Cholesky factorization failed");
    chol_factor = llt.matrixL();
  }

  Rng noise_rng(substream_seed(spec.seed, "noise"));
  LongTable table;
  const std::uint32_t loc = table.intern_location(kSimLocation);
  std::vector<std::uint32_t> vars(n);
  for (std::size_t i = 0; i < n; ++i)
    vars[i] = table.intern_variable(sim_variable_name(i));

  Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < spec.n_steps; ++t) {
    Eigen::VectorXd step =
        Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n),
                                  spec.intercept);
    if (t > 0) step += spec.ar_coeff * y;
    if (!spec.disable_temporal) {
      const auto x = temporal_effects(spec, static_cast<std::int64_t>(t));
      for (std::size_t i = 0; i < n; ++i)
        step(static_cast<Eigen::Index>(i)) += x[i];
    }
    if (!spec.disable_noise) {
      for (std::size_t i = 0; i < n; ++i)
        z(static_cast<Eigen::Index>(i)) = noise_rng.normal();
      step += chol_factor * z;
    }
    y = step;
    for (std::size_t i = 0; i < n; ++i)
      table.add({static_cast<std::int64_t>(t), loc, vars[i],
                 y(static_cast<Eigen::Index>(i))});
  }
  table.finalize();
  return table;
}

// Deletes exactly round(rate * N) records, uniformly at random without
// replacement over all records jointly. Deterministic given the seed.
inline LongTable sparsify(const LongTable& table, double rate,
                          std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw UsageError("sparsity rate must lie in [0, 1)");
  const std::size_t n = table.size();
  const auto n_delete = static_cast<std::size_t>(
      std::llround(rate * static_cast<double>(n)));

  std::vector<std::uint8_t> drop(n, 0);
  Rng rng(substream_seed(seed, "sparsify"));
  // Partial Fisher-Yates over the index range: the first n_delete slots of
  // the virtual permutation are the deleted records.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < n_delete; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
    drop[idx[i]] = 1;
  }

  LongTable out;
  std::vector<std::uint32_t> loc_map, var_map;
  for (const auto& name : table.location_names())
    loc_map.push_back(out.intern_location(name));
  for (const auto& name : table.variable_names())
    var_map.push_back(out.intern_variable(name));
  const auto& rs = table.records();
  for (std::size_t i = 0; i < n; ++i) {
    if (drop[i]) continue;
    const auto& r = rs[i];
    out.add({r.time, loc_map[r.location], var_map[r.variable], r.value});
  }
  out.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// CSV interchange. Schema: header "timestamp,location,variable,value",
// UTF-8, missing value = empty field. Timestamps are either integer hour
// indexes or ISO-8601 at hour resolution; ISO stamps are converted to hour
// indexes relative to the table minimum.

inline std::string write_csv(const LongTable& table) {
  std::string out = "timestamp,location,variable,value\n";
  for (const auto& r : table.records()) {
    out += std::to_string(r.time);
    out += ',';
    out += table.location_names()[r.location];
    out += ',';
    out += table.variable_names()[r.variable];
    out += ',';
    out += format_double(r.value);
    out += '\n';
  }
  return out;
}

namespace detail {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// Accepts "YYYY-MM-DD[T ]HH[:MM[:SS]]"; minutes/seconds must be zero.
inline std::optional<std::int64_t> parse_iso_hour(std::string_view s) {
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  if (s.size() < 13) return std::nullopt;
  auto year = num(0, 4), month = num(5, 2), day = num(8, 2), hour = num(11, 2);
  if (!year || !month || !day || !hour) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' '))
    return std::nullopt;
  if (*month < 1 || *month > 12 || *day < 1 || *day > 31 || *hour > 23)
    return std::nullopt;
  std::size_t pos = 13;
  for (const char* part : {"minutes", "seconds"}) {
    (void)part;
    if (pos == s.size()) break;
    if (s[pos] != ':') return std::nullopt;
    auto v = num(pos + 1, 2);
    if (!v || *v != 0) return std::nullopt;  // hour resolution only
    pos += 3;
  }
  if (pos != s.size()) return std::nullopt;
  return days_from_civil(*year, static_cast<unsigned>(*month),
                         static_cast<unsigned>(*day)) *
             24 +
         *hour;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

}  // namespace detail

struct IngestResult {
  LongTable table;
  std::uint64_t skipped_values = 0;      // empty or non-numeric value fields
  std::uint64_t duplicate_overwrites = 0;
};

inline IngestResult ingest_csv_text(const std::string& text) {
  struct RawRow {
    std::int64_t time;
    std::string location, variable;
    double value;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& out) -> bool {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    out = std::string_view(text).substr(pos, end - pos);
    if (!out.empty() && out.back() == '\r') out.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header) || header != "timestamp,location,variable,value")
    throw DataError(
        "malformed header: expected 'timestamp,location,variable,value'");

  IngestResult result;
  std::vector<RawRow> rows;
  bool iso_stamps = false, stamp_kind_known = false;
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4)
      throw DataError("row " + std::to_string(line_no) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));

    std::int64_t stamp = 0;
    const auto as_int = parse_int(fields[0]);
    const auto as_iso = detail::parse_iso_hour(fields[0]);
    if (!as_int && !as_iso)
      throw DataError("row " + std::to_string(line_no) +
                      ": unparseable timestamp '" + std::string(fields[0]) +
                      "'");
    const bool row_is_iso = !as_int.has_value();
    if (!stamp_kind_known) {
      iso_stamps = row_is_iso;
      stamp_kind_known = true;
    } else if (iso_stamps != row_is_iso) {
      throw DataError("row " + std::to_string(line_no) +
                      ": mixed integer and ISO-8601 timestamps");
    }
    stamp = row_is_iso ? *as_iso : *as_int;

    if (fields[1].empty() || fields[2].empty())
      throw DataError("row " + std::to_string(line_no) +
                      ": empty location or variable name");

    if (fields[3].empty()) {
      ++result.skipped_values;
      continue;
    }
    const auto value = parse_double(fields[3]);
    if (!value || !std::isfinite(*value)) {
      ++result.skipped_values;
      continue;
    }
    rows.push_back(
        {stamp, std::string(fields[1]), std::string(fields[2]), *value});
  }

  std::int64_t min_stamp = 0;
  if (iso_stamps && !rows.empty()) {
    min_stamp = rows.front().time;
    for (const auto& r : rows) min_stamp = std::min(min_stamp, r.time);
  }

  // Later rows win on duplicate keys.
  std::map<std::tuple<std::int64_t, std::string, std::string>, double> keyed;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.time - (iso_stamps ? min_stamp : 0),
                               r.location, r.variable);
    auto [it, inserted] = keyed.insert_or_assign(std::move(key), r.value);
    (void)it;
    if (!inserted) ++result.duplicate_overwrites;
  }
  if (result.duplicate_overwrites > 0)
    log_warn("ingest: " + std::to_string(result.duplicate_overwrites) +
             " duplicate (timestamp,location,variable) rows; kept last");

  for (const auto& [key, value] : keyed) {
    const auto& [time, loc, var] = key;
    result.table.add({time, result.table.intern_location(loc),
                      result.table.intern_variable(var), value});
  }
  result.table.finalize();
  return result;
}

inline IngestResult ingest_csv(const std::filesystem::path& path) {
  return ingest_csv_text(read_file(path));
}

// ---------------------------------------------------------------------------
// Vocabulary and statistics.

inline VariableVocabulary build_vocabulary(const LongTable& table,
                                           LocationMode mode) {
  VariableVocabulary vocab;
  if (mode == LocationMode::kNameConcat) {
    // Composite "{location}.{variable}" names, restricted to pairs that
    // actually occur; sorted for a stable index assignment.
    std::map<std::string, bool> seen;
    for (const auto& r : table.records())
      seen.emplace(composite_name(table.location_names()[r.location],
                                  table.variable_names()[r.variable]),
                   true);
    for (const auto& [name, unused] : seen) vocab.names.push_back(name);
  } else {
    std::vector<std::string> vars = table.variable_names();
    std::sort(vars.begin(), vars.end());
    vocab.names = std::move(vars);
    std::vector<std::string> locs = table.location_names();
    std::sort(locs.begin(), locs.end());
    vocab.location_names = std::move(locs);
  }
  return vocab;
}

// Maps a table's internal (location, variable) ids to vocabulary ids.
// Entry is empty when the pair has no vocabulary slot (kNameConcat pairs
// never observed in the vocabulary's source table).
class VocabKeyMap {
 public:
  VocabKeyMap(const LongTable& table, const VariableVocabulary& vocab,
              LocationMode mode)
      : mode_(mode), n_vars_(table.variable_names().size()) {
    const std::size_t n_locs = table.location_names().size();
    key_.assign(n_locs * n_vars_, kMissing);
    for (std::size_t l = 0; l < n_locs; ++l)
      for (std::size_t v = 0; v < n_vars_; ++v) {
        const auto name =
            mode == LocationMode::kNameConcat
                ? composite_name(table.location_names()[l],
                                 table.variable_names()[v])
                : table.variable_names()[v];
        if (auto id = vocab.find(name)) key_[l * n_vars_ + v] = *id;
      }
    if (mode == LocationMode::kSeparateEmbedding) {
      loc_key_.assign(n_locs, kMissing);
      for (std::size_t l = 0; l < n_locs; ++l)
        if (auto id = vocab.find_location(table.location_names()[l]))
          loc_key_[l] = *id;
    }
  }

  static constexpr std::uint32_t kMissing = 0xffffffffu;

  std::uint32_t variable_key(std::uint32_t loc, std::uint32_t var) const {
    return key_[loc * n_vars_ + var];
  }
  std::uint32_t location_key(std::uint32_t loc) const {
    return mode_ == LocationMode::kSeparateEmbedding ? loc_key_[loc] : 0;
  }

 private:
  LocationMode mode_;
  std::size_t n_vars_;
  std::vector<std::uint32_t> key_;
  std::vector<std::uint32_t> loc_key_;
};

struct TimeRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;  // half-open
};

// Mean and population standard deviation per vocabulary entry, computed
// over records inside `range` only (the training split).
inline NormStats compute_norm_stats(const LongTable& table,
                                    const VariableVocabulary& vocab,
                                    LocationMode mode, TimeRange range) {
  VocabKeyMap keys(table, vocab, mode);
  std::vector<double> sum(vocab.size(), 0.0), sumsq(vocab.size(), 0.0);
  std::vector<std::size_t> count(vocab.size(), 0);
  auto [lo, hi] = table.time_span(range.begin, range.end);
  const auto& rs = table.records();
  for (std::size_t i = lo; i < hi; ++i) {
    const auto k = keys.variable_key(rs[i].location, rs[i].variable);
    if (k == VocabKeyMap::kMissing) continue;
    sum[k] += rs[i].value;
    sumsq[k] += rs[i].value * rs[i].value;
    ++count[k];
  }
  NormStats stats;
  stats.mean.resize(vocab.size(), 0.0);
  stats.stddev.resize(vocab.size(), 0.0);
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    if (count[k] == 0) continue;
    const double n = static_cast<double>(count[k]);
    stats.mean[k] = sum[k] / n;
    const double var = std::max(0.0, sumsq[k] / n - stats.mean[k] * stats.mean[k]);
    stats.stddev[k] = std::sqrt(var);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Sample windows.

// One training/evaluation sample: the triplets observed over the lookback
// window, the target vector at anchor + horizon - 1, and the mask saying
// which targets were actually observed.
struct SampleWindow {
  std::vector<Triplet> triplets;  // canonical order, length <= max_triplets
  std::vector<double> targets;            // length K, original units
  std::vector<std::uint8_t> target_mask;  // length K
  std::uint32_t location = 0;             // vocab location id (mode B)
  std::int64_t anchor = 0;
};

struct WindowingOptions {
  std::int64_t lookback = 10;
  std::int64_t horizon = 1;
  LocationMode mode = LocationMode::kNameConcat;
  std::size_t max_triplets = 0;  // 0 = vocabulary size * lookback
};

struct WindowSet {
  std::vector<SampleWindow> windows;
  std::uint64_t empty_rejected = 0;  // anchors with zero input triplets
  std::uint64_t truncated = 0;       // windows that exceeded max_triplets
};

// Sorts by (time_offset, variable), drops duplicate (time_offset, variable)
// pairs keeping the first occurrence, then keeps the `max_triplets` most
// recent entries. The flatten head makes position meaningful, so every
// window must present its triplets in this canonical order.
inline bool canonicalize_triplets(std::vector<Triplet>& triplets,
                                  std::size_t max_triplets) {
  std::stable_sort(triplets.begin(), triplets.end(),
                   [](const Triplet& a, const Triplet& b) {
                     if (a.time_offset != b.time_offset)
                       return a.time_offset < b.time_offset;
                     return a.variable < b.variable;
                   });
  auto last = std::unique(triplets.begin(), triplets.end(),
                          [](const Triplet& a, const Triplet& b) {
                            return a.time_offset == b.time_offset &&
                                   a.variable == b.variable;
                          });
  triplets.erase(last, triplets.end());
  if (triplets.size() > max_triplets) {
    triplets.erase(triplets.begin(),
                   triplets.end() - static_cast<std::ptrdiff_t>(max_triplets));
    return true;
  }
  return false;
}

// Builds one window per anchor (and per location in separate-embedding
// mode). Inputs cover [anchor - lookback, anchor); targets sit at
// anchor + horizon - 1. Both ends stay inside `split`, so windows never
// straddle split boundaries. Input triplets come from `inputs`; target
// values are read from `targets` (pass the same table unless evaluation
// targets must stay dense while inputs are sparsified).
inline WindowSet build_windows(const LongTable& inputs,
                               const LongTable& targets,
                               const VariableVocabulary& vocab,
                               const WindowingOptions& opt, TimeRange split) {
  if (opt.lookback <= 0 || opt.horizon <= 0)
    throw UsageError("windowing requires lookback > 0 and horizon > 0");
  const std::size_t max_triplets =
      opt.max_triplets ? opt.max_triplets
                       : vocab.size() * static_cast<std::size_t>(opt.lookback);

  VocabKeyMap in_keys(inputs, vocab, opt.mode);
  VocabKeyMap tgt_keys(targets, vocab, opt.mode);
  const std::size_t n_groups =
      opt.mode == LocationMode::kSeparateEmbedding
          ? vocab.location_names.size()
          : 1;
  const auto k_targets = vocab.size();

  WindowSet out;
  const auto& in_rs = inputs.records();
  const auto& tgt_rs = targets.records();

  const std::int64_t first_anchor = split.begin + opt.lookback;
  const std::int64_t last_anchor = split.end - opt.horizon;  // inclusive
  for (std::int64_t anchor = first_anchor; anchor <= last_anchor; ++anchor) {
    std::vector<std::vector<Triplet>> group_triplets(n_groups);
    auto [lo, hi] = inputs.time_span(anchor - opt.lookback, anchor);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& r = in_rs[i];
      const auto key = in_keys.variable_key(r.location, r.variable);
      if (key == VocabKeyMap::kMissing) continue;
      std::size_t group = 0;
      if (opt.mode == LocationMode::kSeparateEmbedding) {
        const auto loc_key = in_keys.location_key(r.location);
        if (loc_key == VocabKeyMap::kMissing) continue;
        group = loc_key;
      }
      group_triplets[group].push_back(
          {static_cast<double>(r.time - (anchor - opt.lookback)), key,
           r.value});
    }

    const std::int64_t target_time = anchor + opt.horizon - 1;
    auto [tlo, thi] = targets.time_span(target_time, target_time + 1);

    for (std::size_t g = 0; g < n_groups; ++g) {
      auto& triplets = group_triplets[g];
      if (triplets.empty()) {
        ++out.empty_rejected;
        continue;
      }
      SampleWindow w;
      if (canonicalize_triplets(triplets, max_triplets)) ++out.truncated;
      w.triplets = std::move(triplets);
      w.targets.assign(k_targets, 0.0);
      w.target_mask.assign(k_targets, 0);
      for (std::size_t i = tlo; i < thi; ++i) {
        const auto& r = tgt_rs[i];
        const auto key = tgt_keys.variable_key(r.location, r.variable);
        if (key == VocabKeyMap::kMissing) continue;
        if (opt.mode == LocationMode::kSeparateEmbedding &&
            tgt_keys.location_key(r.location) != g)
          continue;
        w.targets[key] = r.value;
        w.target_mask[key] = 1;
      }
      w.location = static_cast<std::uint32_t>(g);
      w.anchor = anchor;
      out.windows.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace sert
