#pragma once

// Evaluation: the persistence baseline (with forward-fill imputation, since
// it cannot handle missing inputs), per-variable RMSE over observed targets,
// the input-sparsity benchmark, and the signed variable-importance report
// built from SST-ANN contribution scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sert/checkpoint.hpp"
#include "sert/data.hpp"
#include "sert/errors.hpp"
#include "sert/io.hpp"
#include "sert/log.hpp"
#include "sert/model.hpp"
#include "sert/training.hpp"

namespace sert {

// --- metrics ----------------------------------------------------------------

struct MetricsRow {
  std::string model;
  std::uint64_t seed = 0;
  std::string variable;  // vocabulary name, or "overall" for the pooled row
  double rmse = 0.0;
  std::uint64_t n_observed = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  double sparsity_level = 0.0;
  std::string config_digest;
  std::uint64_t n_eval_windows = 0;
  std::uint64_t empty_rejected = 0;

  std::string to_csv() const {
    std::string out =
        "model,seed,variable,rmse,n_observed,sparsity,config_digest\n";
    for (const auto& r : rows) {
      out += r.model;
      out += ',';
      out += std::to_string(r.seed);
      out += ',';
      out += r.variable;
      out += ',';
      out += format_double(r.rmse);
      out += ',';
      out += std::to_string(r.n_observed);
      out += ',';
      out += format_double(sparsity_level);
      out += ',';
      out += config_digest;
      out += '\n';
    }
    return out;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "sparsity " << format_double(sparsity_level) << "  windows "
       << n_eval_windows << "  rejected-empty " << empty_rejected
       << "  config " << config_digest << "\n";
    os << std::left << std::setw(10) << "model" << std::setw(8) << "seed"
       << std::setw(22) << "variable" << std::right << std::setw(14) << "rmse"
       << std::setw(12) << "observed" << "\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(10) << r.model << std::setw(8) << r.seed
         << std::setw(22) << r.variable << std::right << std::setw(14)
         << std::fixed << std::setprecision(5) << r.rmse << std::setw(12)
         << r.n_observed << "\n";
    }
    return os.str();
  }

  double overall_rmse(const std::string& model) const {
    for (const auto& r : rows)
      if (r.model == model && r.variable == "overall") return r.rmse;
    throw DataError("metrics table has no overall row for " + model);
  }
};

using PredictionMatrix = std::vector<std::vector<double>>;  // [J][K]

inline PredictionMatrix predict_windows(
    const ModelBundle& b, std::span<const SampleWindow> windows) {
  PredictionMatrix preds;
  preds.reserve(windows.size());
  for (const auto& w : windows) preds.push_back(predict(b, w));
  return preds;
}

// RMSE_k = sqrt( sum_j m_k^j (pred - y)^2 / sum_j m_k^j ), observed targets
// only. Variables with zero observed targets are omitted (absent, not zero).
// A pooled row named "overall" aggregates across all variables.
inline std::vector<MetricsRow> rmse_per_variable(
    const PredictionMatrix& predictions,
    std::span<const SampleWindow> windows, const VariableVocabulary& vocab,
    const std::string& model_name, std::uint64_t seed = 0) {
  if (predictions.size() != windows.size())
    throw UsageError("rmse: predictions not aligned with windows");
  const std::size_t k_targets = vocab.size();
  std::vector<double> sq(k_targets, 0.0);
  std::vector<std::uint64_t> count(k_targets, 0);
  for (std::size_t j = 0; j < windows.size(); ++j) {
    const auto& w = windows[j];
    if (predictions[j].size() != k_targets)
      throw UsageError("rmse: prediction width mismatch");
    for (std::size_t k = 0; k < k_targets; ++k) {
      if (!w.target_mask[k]) continue;
      const double d = predictions[j][k] - w.targets[k];
      sq[k] += d * d;
      ++count[k];
    }
  }
  std::vector<MetricsRow> rows;
  double total_sq = 0.0;
  std::uint64_t total_count = 0;
  for (std::size_t k = 0; k < k_targets; ++k) {
    if (count[k] == 0) continue;
    rows.push_back({model_name, seed, vocab.names[k],
                    std::sqrt(sq[k] / static_cast<double>(count[k])),
                    count[k]});
    total_sq += sq[k];
    total_count += count[k];
  }
  if (total_count > 0)
    rows.push_back({model_name, seed, "overall",
                    std::sqrt(total_sq / static_cast<double>(total_count)),
                    total_count});
  return rows;
}

// --- persistence baseline -----------------------------------------------------

// Dense hourly series per (location, variable) over the table's time span:
// each gap carries the last observation forward; hours before the first
// observation take that series' training mean (records in train_range).
// Series never observed in training fall back to zero.
inline LongTable forward_fill(const LongTable& table, TimeRange train_range) {
  LongTable out;
  std::vector<std::uint32_t> loc_map, var_map;
  for (const auto& n : table.location_names())
    loc_map.push_back(out.intern_location(n));
  for (const auto& n : table.variable_names())
    var_map.push_back(out.intern_variable(n));

  const std::size_t n_loc = table.location_names().size();
  const std::size_t n_var = table.variable_names().size();
  const std::size_t n_pairs = n_loc * n_var;
  std::vector<double> mean(n_pairs, 0.0), sum(n_pairs, 0.0);
  std::vector<std::uint64_t> cnt(n_pairs, 0);
  std::vector<std::uint8_t> present(n_pairs, 0);
  for (const auto& r : table.records()) {
    const std::size_t p = r.location * n_var + r.variable;
    present[p] = 1;
    if (r.time >= train_range.begin && r.time < train_range.end) {
      sum[p] += r.value;
      ++cnt[p];
    }
  }
  for (std::size_t p = 0; p < n_pairs; ++p)
    if (cnt[p]) mean[p] = sum[p] / static_cast<double>(cnt[p]);

  if (table.empty()) return out;
  const std::int64_t t0 = table.min_time();
  const std::int64_t t1 = table.max_time();

  // Walk records once per time step; carry last values forward.
  std::vector<double> last(n_pairs, 0.0);
  std::vector<std::uint8_t> seen(n_pairs, 0);
  const auto& rs = table.records();
  std::size_t i = 0;
  for (std::int64_t t = t0; t <= t1; ++t) {
    while (i < rs.size() && rs[i].time == t) {
      const std::size_t p = rs[i].location * n_var + rs[i].variable;
      last[p] = rs[i].value;
      seen[p] = 1;
      ++i;
    }
    for (std::size_t p = 0; p < n_pairs; ++p) {
      if (!present[p]) continue;  // pair never observed at all
      const double v = seen[p] ? last[p] : mean[p];
      out.add({t, loc_map[p / n_var],
               var_map[p % n_var], v});
    }
  }
  out.finalize();
  return out;
}

// Persistence forecast aligned with a window list: the prediction for every
// target of a window is the forward-filled value at anchor - 1 (the last
// input hour). Requires the vocabulary the windows were built against.
inline PredictionMatrix naive_forecast(const LongTable& filled,
                                       std::span<const SampleWindow> windows,
                                       const VariableVocabulary& vocab,
                                       LocationMode mode) {
  const std::size_t k_targets = vocab.size();
  std::map<std::string, std::uint32_t> loc_ids, var_ids;
  for (std::uint32_t i = 0; i < filled.location_names().size(); ++i)
    loc_ids[filled.location_names()[i]] = i;
  for (std::uint32_t i = 0; i < filled.variable_names().size(); ++i)
    var_ids[filled.variable_names()[i]] = i;

  // vocab id -> (location id, variable id) in `filled`; composite names map
  // directly, bare names resolve per window location.
  std::vector<std::optional<std::pair<std::uint32_t, std::uint32_t>>> series(
      mode == LocationMode::kNameConcat ? k_targets : 0);
  if (mode == LocationMode::kNameConcat) {
    for (const auto& [ln, l] : loc_ids)
      for (const auto& [vn, v] : var_ids)
        if (const auto id = vocab.find(composite_name(ln, vn)))
          series[*id] = std::make_pair(l, v);
  }

  PredictionMatrix preds;
  preds.reserve(windows.size());
  for (const auto& w : windows) {
    std::vector<double> row(k_targets, 0.0);
    for (std::size_t k = 0; k < k_targets; ++k) {
      std::optional<std::pair<std::uint32_t, std::uint32_t>> key;
      if (mode == LocationMode::kNameConcat) {
        key = series[k];
      } else {
        const auto l = loc_ids.find(vocab.location_names.at(w.location));
        const auto v = var_ids.find(vocab.names[k]);
        if (l != loc_ids.end() && v != var_ids.end())
          key = std::make_pair(l->second, v->second);
      }
      if (!key) continue;  // series absent from the table entirely
      if (auto v = filled.value_at(w.anchor - 1, key->first, key->second))
        row[k] = *v;
    }
    preds.push_back(std::move(row));
  }
  return preds;
}

// --- sparsity benchmark --------------------------------------------------------

struct SweepModelSpec {
  ModelKind kind;
  TrainConfig train;
};

struct SweepConfig {
  SimulationSpec sim;  // sim.seed is ignored; per-run seeds derive substreams
  std::int64_t train_steps = 37000;
  double val_fraction = 0.1;
  std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::uint64_t> seeds{1};
  std::vector<SweepModelSpec> models;
  ModelConfig model_template;  // max_triplets/n_targets 0 = derive from data
};

inline std::string config_digest(const ModelConfig& m) {
  std::string s = std::to_string(m.embed_dim) + "/" +
                  std::to_string(m.n_heads) + "/" +
                  std::to_string(m.n_blocks) + "/" +
                  std::to_string(m.max_triplets) + "/" +
                  std::to_string(m.n_targets) + "/" +
                  std::to_string(m.lookback) + "/" +
                  std::to_string(m.horizon) + "/" +
                  location_mode_name(m.location_mode) + "/" +
                  format_double(m.dropout);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s)));
  return std::string(buf);
}

// One sparsity level, all seeds and models, plus the persistence baseline.
// Inputs are sparsified; training and evaluation targets are read from the
// dense table (the benchmark sweeps input sparsity only).
inline MetricsTable sparsity_sweep_level(const SweepConfig& cfg,
                                         double level) {
  MetricsTable table;
  table.sparsity_level = level;

  for (const std::uint64_t seed : cfg.seeds) {
    SimulationSpec sim = cfg.sim;
    sim.seed = substream_seed(seed, "data");
    const LongTable dense = simulate_series(sim);
    const LongTable inputs =
        level > 0.0 ? sparsify(dense, level, substream_seed(seed, "sparsify"))
                    : dense;

    ModelConfig mcfg = cfg.model_template;
    const VariableVocabulary vocab =
        build_vocabulary(dense, mcfg.location_mode);
    if (mcfg.n_targets == 0) mcfg.n_targets = vocab.size();
    if (mcfg.max_triplets == 0)
      mcfg.max_triplets =
          vocab.size() * static_cast<std::size_t>(mcfg.lookback);
    table.config_digest = config_digest(mcfg);

    const auto train_end = static_cast<std::int64_t>(
        std::llround(static_cast<double>(cfg.train_steps) *
                     (1.0 - cfg.val_fraction)));
    const TimeRange train_range{0, train_end};
    const TimeRange val_range{train_end, cfg.train_steps};
    const TimeRange test_range{cfg.train_steps,
                               static_cast<std::int64_t>(sim.n_steps)};

    const NormStats stats =
        compute_norm_stats(inputs, vocab, mcfg.location_mode, train_range);
    const auto opt = mcfg.windowing();
    WindowSet train_ws = build_windows(inputs, dense, vocab, opt, train_range);
    WindowSet val_ws = build_windows(inputs, dense, vocab, opt, val_range);
    WindowSet test_ws = build_windows(inputs, dense, vocab, opt, test_range);
    table.n_eval_windows += test_ws.windows.size();
    table.empty_rejected += train_ws.empty_rejected + val_ws.empty_rejected +
                            test_ws.empty_rejected;
    log_info("sweep level " + format_double(level) + " seed " +
             std::to_string(seed) + ": " +
             std::to_string(train_ws.windows.size()) + " train / " +
             std::to_string(val_ws.windows.size()) + " val / " +
             std::to_string(test_ws.windows.size()) + " test windows");

    // Persistence baseline: forward-filled sparsified inputs.
    {
      const LongTable filled = forward_fill(inputs, train_range);
      const auto preds = naive_forecast(filled, test_ws.windows, vocab,
                                        mcfg.location_mode);
      auto rows =
          rmse_per_variable(preds, test_ws.windows, vocab, "naive", seed);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }

    for (const auto& spec : cfg.models) {
      TrainConfig tcfg = spec.train;
      tcfg.seed = seed;
      FitResult fr = fit(spec.kind, train_ws.windows, val_ws.windows, mcfg,
                         tcfg, vocab, stats);
      log_info(std::string("sweep ") + model_kind_name(spec.kind) +
               ": best epoch " + std::to_string(fr.best_epoch) + ", val " +
               format_double(fr.best_val_loss));
      const auto preds = predict_windows(fr.model, test_ws.windows);
      auto rows = rmse_per_variable(preds, test_ws.windows, vocab,
                                    model_kind_name(spec.kind), seed);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }
  }
  return table;
}

inline std::vector<MetricsTable> sparsity_sweep(const SweepConfig& cfg) {
  std::vector<MetricsTable> out;
  for (double level : cfg.levels)
    out.push_back(sparsity_sweep_level(cfg, level));
  return out;
}

// --- variable importance --------------------------------------------------------

// Mean contribution of a predictor variable to a target across all real
// triplets of that variable in the supplied windows (Eq.-style importance:
// percentages normalized over the predictor set, sign taken from the mean
// contribution; sign(0) is treated as +).
struct ImportanceEntry {
  std::string target;
  std::string predictor;
  double mean_contribution = 0.0;
  double importance = 0.0;         // percent of the predictor set
  double signed_importance = 0.0;  // sign(mean) * importance
  std::uint64_t n_observations = 0;
};

struct ImportanceReport {
  std::vector<ImportanceEntry> entries;  // grouped by target, predictor order
  std::vector<std::string> excluded_predictors;  // zero observations

  std::string to_csv() const {
    std::string out =
        "target,predictor,n_observations,mean_contribution,importance_pct,"
        "signed_importance_pct\n";
    for (const auto& e : entries) {
      out += e.target;
      out += ',';
      out += e.predictor;
      out += ',';
      out += std::to_string(e.n_observations);
      out += ',';
      out += format_double(e.mean_contribution);
      out += ',';
      out += format_double(e.importance);
      out += ',';
      out += format_double(e.signed_importance);
      out += '\n';
    }
    return out;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(22) << "target" << std::setw(22)
       << "predictor" << std::right << std::setw(16) << "mean contrib"
       << std::setw(14) << "importance" << std::setw(14) << "signed" << "\n";
    for (const auto& e : entries) {
      os << std::left << std::setw(22) << e.target << std::setw(22)
         << e.predictor << std::right << std::setw(16) << std::fixed
         << std::setprecision(6) << e.mean_contribution << std::setw(13)
         << std::setprecision(2) << e.importance << "%" << std::setw(13)
         << e.signed_importance << "%" << "\n";
    }
    if (!excluded_predictors.empty()) {
      os << "excluded (no observations):";
      for (const auto& p : excluded_predictors) os << ' ' << p;
      os << "\n";
    }
    return os.str();
  }
};

inline ImportanceReport importance_index(
    const ModelBundle& model, std::span<const SampleWindow> windows,
    const std::vector<std::string>& predictors,
    const std::vector<std::string>& targets) {
  if (model.kind != ModelKind::kSstAnn)
    throw UsageError(
        "importance analysis needs an sstann checkpoint; the transformer "
        "model has no exact contribution decomposition");
  if (predictors.empty() || targets.empty())
    throw UsageError("importance analysis needs predictors and targets");

  std::vector<std::uint32_t> pred_ids, tgt_ids;
  for (const auto& p : predictors) pred_ids.push_back(model.vocab.require(p));
  for (const auto& t : targets) tgt_ids.push_back(model.vocab.require(t));

  const std::size_t n_pred = pred_ids.size();
  const std::size_t n_tgt = tgt_ids.size();
  std::vector<double> sums(n_pred * n_tgt, 0.0);
  std::vector<std::uint64_t> counts(n_pred, 0);
  std::vector<std::int32_t> pred_slot(model.vocab.size(), -1);
  for (std::size_t p = 0; p < n_pred; ++p) pred_slot[pred_ids[p]] = static_cast<std::int32_t>(p);

  NoGradGuard ng;
  for (const auto& w : windows) {
    PaddedWindow pw = embed_window(w, model.params, model.stats, model.config);
    const SstAnnDecomposition dec =
        sstann_decompose(pw, model.params, model.config);
    for (std::size_t i = 0; i < w.triplets.size(); ++i) {
      const auto slot = pred_slot[w.triplets[i].variable];
      if (slot < 0) continue;
      ++counts[static_cast<std::size_t>(slot)];
      for (std::size_t t = 0; t < n_tgt; ++t)
        sums[static_cast<std::size_t>(slot) * n_tgt + t] +=
            dec.contributions[i * model.config.n_targets + tgt_ids[t]];
    }
  }

  ImportanceReport report;
  std::vector<std::size_t> included;
  for (std::size_t p = 0; p < n_pred; ++p) {
    if (counts[p] == 0)
      report.excluded_predictors.push_back(predictors[p]);
    else
      included.push_back(p);
  }
  if (included.empty())
    throw DataError("importance analysis: no predictor has observations");

  for (std::size_t t = 0; t < n_tgt; ++t) {
    double denom = 0.0;
    for (std::size_t p : included)
      denom += std::abs(sums[p * n_tgt + t] / static_cast<double>(counts[p]));
    for (std::size_t p : included) {
      ImportanceEntry e;
      e.target = targets[t];
      e.predictor = predictors[p];
      e.n_observations = counts[p];
      e.mean_contribution =
          sums[p * n_tgt + t] / static_cast<double>(counts[p]);
      e.importance =
          denom > 0.0
              ? std::abs(e.mean_contribution) / denom * 100.0
              : 100.0 / static_cast<double>(included.size());
      e.signed_importance =
          e.mean_contribution < 0.0 ? -e.importance : e.importance;
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace sert
