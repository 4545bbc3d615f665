// Command-line surface for the sert toolkit: simulate, sparsify, ingest,
// train, evaluate, sweep, explain. Every command writes a manifest with its
// fully resolved configuration next to the primary output; all randomness
// derives from --seed through named substreams.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sert/checkpoint.hpp"
#include "sert/data.hpp"
#include "sert/evaluation.hpp"
#include "sert/io.hpp"
#include "sert/log.hpp"
#include "sert/manifest.hpp"
#include "sert/model.hpp"
#include "sert/training.hpp"

namespace fs = std::filesystem;
using namespace sert;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t0)
        .count();
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      if (i > start) out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::vector<double> parse_levels(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_list(s)) {
    const auto v = parse_double(part);
    if (!v || *v < 0.0 || *v >= 1.0)
      throw UsageError("bad sparsity level: " + part);
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError("no sparsity levels given");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split_list(s)) {
    const auto v = parse_int(part);
    if (!v || *v < 0) throw UsageError("bad seed: " + part);
    out.push_back(static_cast<std::uint64_t>(*v));
  }
  if (out.empty()) throw UsageError("no seeds given");
  return out;
}

// Model-architecture flags shared by train and sweep.
struct ModelFlags {
  std::size_t embed_dim = 60;
  std::size_t heads = 6;
  std::size_t blocks = 6;
  std::size_t max_triplets = 0;  // 0 = vocabulary size * lookback
  std::int64_t lookback = 10;
  std::int64_t horizon = 1;
  std::string location_mode = "name_concat";
  double dropout = 0.1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--embed-dim", embed_dim, "embedding width d")
        ->capture_default_str();
    cmd->add_option("--heads", heads, "attention heads")
        ->capture_default_str();
    cmd->add_option("--blocks", blocks, "encoder blocks (sert only)")
        ->capture_default_str();
    cmd->add_option("--max-triplets", max_triplets,
                    "window capacity; 0 derives it from the vocabulary")
        ->capture_default_str();
    cmd->add_option("--lookback", lookback, "input window length, hours")
        ->capture_default_str();
    cmd->add_option("--horizon", horizon, "forecast horizon, hours")
        ->capture_default_str();
    cmd->add_option("--location-mode", location_mode,
                    "name_concat | separate_embedding")
        ->capture_default_str();
    cmd->add_option("--dropout", dropout, "dropout rate during training")
        ->capture_default_str();
  }

  ModelConfig to_config() const {
    ModelConfig c;
    c.embed_dim = embed_dim;
    c.n_heads = heads;
    c.n_blocks = blocks;
    c.max_triplets = max_triplets;
    c.lookback = lookback;
    c.horizon = horizon;
    c.location_mode = location_mode_from_name(location_mode);
    c.dropout = dropout;
    return c;
  }

  void describe(std::map<std::string, std::string>& cfg) const {
    cfg["embed_dim"] = std::to_string(embed_dim);
    cfg["heads"] = std::to_string(heads);
    cfg["blocks"] = std::to_string(blocks);
    cfg["max_triplets"] = std::to_string(max_triplets);
    cfg["lookback"] = std::to_string(lookback);
    cfg["horizon"] = std::to_string(horizon);
    cfg["location_mode"] = location_mode;
    cfg["dropout"] = format_double(dropout);
  }
};

struct TrainFlags {
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 100;
  std::size_t patience = 5;
  double clip = 5.0;
  double val_frac = 0.1;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--batch", batch, "mini-batch size")
        ->capture_default_str();
    cmd->add_option("--epochs", epochs, "max epochs")->capture_default_str();
    cmd->add_option("--patience", patience, "early-stop patience, epochs")
        ->capture_default_str();
    cmd->add_option("--clip", clip, "gradient-norm clip")
        ->capture_default_str();
    cmd->add_option("--val-frac", val_frac,
                    "fraction of the training range held out for validation")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "root seed for init/batching/dropout")
        ->capture_default_str();
  }

  TrainConfig to_config() const {
    TrainConfig t;
    t.learning_rate = lr;
    t.batch_size = batch;
    t.max_epochs = epochs;
    t.patience = patience;
    t.clip_norm = clip;
    t.seed = seed;
    return t;
  }

  void describe(std::map<std::string, std::string>& cfg) const {
    cfg["lr"] = format_double(lr);
    cfg["batch"] = std::to_string(batch);
    cfg["epochs"] = std::to_string(epochs);
    cfg["patience"] = std::to_string(patience);
    cfg["clip"] = format_double(clip);
    cfg["val_frac"] = format_double(val_frac);
    cfg["seed"] = std::to_string(seed);
  }
};

LongTable load_table(const std::string& path) {
  const IngestResult r = ingest_csv(path);
  if (r.skipped_values)
    log_info("skipped " + std::to_string(r.skipped_values) +
             " rows with missing values in " + path);
  return r.table;
}

// ---------------------------------------------------------------------------

void cmd_simulate(std::uint64_t seed, std::size_t steps,
                  const std::string& out) {
  Timer timer;
  SimulationSpec spec;
  spec.n_steps = steps;
  spec.seed = substream_seed(seed, "data");
  const LongTable table = simulate_series(spec);
  atomic_write_file(out, write_csv(table));
  log_info("wrote " + std::to_string(table.size()) + " records to " + out);

  RunManifest m;
  m.command = "simulate";
  m.config = {{"steps", std::to_string(steps)},
              {"n_series", std::to_string(spec.n_series)},
              {"intercept", format_double(spec.intercept)},
              {"ar_coeff", format_double(spec.ar_coeff)},
              {"freq_fast", format_double(spec.freq_fast)},
              {"freq_slow", format_double(spec.freq_slow)},
              {"trend_slope", format_double(spec.trend_slope)}};
  m.seeds = {{"root", seed}, {"data", spec.seed}};
  m.outputs = {out};
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(out));
}

void cmd_sparsify(const std::string& in, double rate, std::uint64_t seed,
                  const std::string& out) {
  Timer timer;
  const LongTable table = load_table(in);
  const LongTable sparse = sparsify(table, rate, seed);
  atomic_write_file(out, write_csv(sparse));
  log_info("kept " + std::to_string(sparse.size()) + " of " +
           std::to_string(table.size()) + " records");

  RunManifest m;
  m.command = "sparsify";
  m.config = {{"rate", format_double(rate)},
              {"records_in", std::to_string(table.size())},
              {"records_out", std::to_string(sparse.size())}};
  m.seeds = {{"root", seed}, {"sparsify", substream_seed(seed, "sparsify")}};
  m.inputs = {in};
  m.outputs = {out};
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(out));
}

void cmd_ingest(const std::string& in, const std::string& out) {
  Timer timer;
  const IngestResult r = ingest_csv(in);
  atomic_write_file(out, write_csv(r.table));
  log_info("ingested " + std::to_string(r.table.size()) + " records (" +
           std::to_string(r.skipped_values) + " skipped, " +
           std::to_string(r.duplicate_overwrites) + " duplicates)");

  RunManifest m;
  m.command = "ingest";
  m.config = {{"records", std::to_string(r.table.size())},
              {"skipped_values", std::to_string(r.skipped_values)},
              {"duplicate_overwrites", std::to_string(r.duplicate_overwrites)}};
  m.inputs = {in};
  m.outputs = {out};
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(out));
}

void cmd_train(const std::string& model_name, const std::string& data_path,
               const ModelFlags& mf, const TrainFlags& tf,
               std::int64_t train_end_flag, const std::string& out,
               std::string metrics_out) {
  Timer timer;
  const ModelKind kind = model_kind_from_name(model_name);
  const LongTable table = load_table(data_path);
  if (table.empty()) throw DataError("no usable records in " + data_path);
  if (metrics_out.empty()) metrics_out = out + ".loss.csv";

  ModelConfig cfg = mf.to_config();
  const VariableVocabulary vocab = build_vocabulary(table, cfg.location_mode);
  cfg.n_targets = vocab.size();
  if (cfg.max_triplets == 0)
    cfg.max_triplets =
        vocab.size() * static_cast<std::size_t>(cfg.lookback);
  cfg.validate();

  const std::int64_t t_begin = table.min_time();
  const std::int64_t t_end = table.max_time() + 1;
  const std::int64_t train_end =
      train_end_flag >= 0 ? train_end_flag : t_end;
  if (train_end <= t_begin || train_end > t_end)
    throw UsageError("--train-end outside the data's time span");
  const auto fit_end = t_begin + static_cast<std::int64_t>(std::llround(
                                     static_cast<double>(train_end - t_begin) *
                                     (1.0 - tf.val_frac)));
  const TimeRange fit_range{t_begin, fit_end};
  const TimeRange val_range{fit_end, train_end};

  const NormStats stats =
      compute_norm_stats(table, vocab, cfg.location_mode, fit_range);
  const auto opt = cfg.windowing();
  WindowSet train_ws = build_windows(table, table, vocab, opt, fit_range);
  WindowSet val_ws = build_windows(table, table, vocab, opt, val_range);
  log_info("windows: " + std::to_string(train_ws.windows.size()) +
           " train, " + std::to_string(val_ws.windows.size()) +
           " validation (" +
           std::to_string(train_ws.empty_rejected + val_ws.empty_rejected) +
           " empty anchors rejected)");
  if (train_ws.windows.empty() || val_ws.windows.empty())
    throw DataError(
        "not enough data to form training and validation windows; check "
        "--train-end/--val-frac against the table's time span");

  const TrainConfig tcfg = tf.to_config();
  std::size_t improvements = 0;
  FitResult fr =
      fit(kind, train_ws.windows, val_ws.windows, cfg, tcfg, vocab, stats,
          [&](const ModelBundle& b, const LossReport& r) {
            save_checkpoint(b, out);
            ++improvements;
            log_info("epoch " + std::to_string(r.epoch) + ": val " +
                     format_double(r.val_loss) + " (checkpoint updated, " +
                     format_double(r.sec_per_epoch) + " s/epoch)");
          });
  save_checkpoint(fr.model, out);
  atomic_write_file(metrics_out, loss_log_csv(fr.log));

  std::vector<std::string> outputs{out, metrics_out};
  if (kind == ModelKind::kSstAnn && !val_ws.windows.empty()) {
    // Contribution summary over the validation windows: every variable as
    // predictor and as target.
    const auto report = importance_index(fr.model, val_ws.windows,
                                         vocab.names, vocab.names);
    const std::string contrib_path = out + ".contributions.csv";
    atomic_write_file(contrib_path, report.to_csv());
    outputs.push_back(contrib_path);
  }

  RunManifest m;
  m.command = "train";
  m.config = {{"model", model_name},
              {"n_targets", std::to_string(cfg.n_targets)},
              {"resolved_max_triplets", std::to_string(cfg.max_triplets)},
              {"train_range",
               std::to_string(fit_range.begin) + ":" +
                   std::to_string(fit_range.end)},
              {"val_range", std::to_string(val_range.begin) + ":" +
                                std::to_string(val_range.end)},
              {"best_epoch", std::to_string(fr.best_epoch)},
              {"best_val_loss", format_double(fr.best_val_loss)},
              {"improvements", std::to_string(improvements)}};
  mf.describe(m.config);
  tf.describe(m.config);
  m.config["max_triplets"] = std::to_string(cfg.max_triplets);
  m.seeds = {{"root", tf.seed},
             {"init", substream_seed(tf.seed, "init")},
             {"batching", substream_seed(tf.seed, "batching")},
             {"dropout", substream_seed(tf.seed, "dropout")}};
  m.inputs = {data_path};
  m.outputs = outputs;
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(out));
}

void cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                  std::int64_t from, std::int64_t to,
                  const std::string& out_prefix) {
  Timer timer;
  const ModelBundle bundle = load_checkpoint(ckpt_path);
  const LongTable table = load_table(data_path);
  if (table.empty()) throw DataError("no usable records in " + data_path);
  const std::int64_t begin = from >= 0 ? from : table.min_time();
  const std::int64_t end = to >= 0 ? to : table.max_time() + 1;

  const auto opt = bundle.config.windowing();
  WindowSet ws = build_windows(table, table, bundle.vocab, opt, {begin, end});
  if (ws.windows.empty())
    throw DataError(
        "no evaluation windows in the requested range; does the data match "
        "the checkpoint's vocabulary?");

  MetricsTable metrics;
  metrics.config_digest = config_digest(bundle.config);
  metrics.n_eval_windows = ws.windows.size();
  metrics.empty_rejected = ws.empty_rejected;
  {
    const auto preds = predict_windows(bundle, ws.windows);
    auto rows = rmse_per_variable(preds, ws.windows, bundle.vocab,
                                  model_kind_name(bundle.kind));
    metrics.rows.insert(metrics.rows.end(), rows.begin(), rows.end());
  }
  {
    const LongTable filled = forward_fill(table, {table.min_time(), begin});
    const auto preds = naive_forecast(filled, ws.windows, bundle.vocab,
                                      bundle.config.location_mode);
    auto rows = rmse_per_variable(preds, ws.windows, bundle.vocab, "naive");
    metrics.rows.insert(metrics.rows.end(), rows.begin(), rows.end());
  }

  const std::string csv_path = out_prefix + ".csv";
  const std::string txt_path = out_prefix + ".txt";
  atomic_write_file(csv_path, metrics.to_csv());
  atomic_write_file(txt_path, metrics.to_text());
  std::cout << metrics.to_text();

  RunManifest m;
  m.command = "evaluate";
  m.config = {{"range", std::to_string(begin) + ":" + std::to_string(end)},
              {"model", model_kind_name(bundle.kind)},
              {"windows", std::to_string(ws.windows.size())},
              {"config_digest", metrics.config_digest}};
  m.inputs = {ckpt_path, data_path};
  m.outputs = {csv_path, txt_path};
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(csv_path));
}

void cmd_sweep(const std::string& levels_str, const std::string& models_str,
               const std::string& seeds_str, std::size_t steps,
               std::int64_t train_steps, const ModelFlags& mf,
               const TrainFlags& tf, const std::string& out_dir) {
  Timer timer;
  SweepConfig cfg;
  cfg.sim.n_steps = steps;
  cfg.train_steps = train_steps;
  cfg.val_fraction = tf.val_frac;
  cfg.levels = parse_levels(levels_str);
  cfg.seeds = parse_seeds(seeds_str);
  cfg.model_template = mf.to_config();
  for (const auto& name : split_list(models_str))
    cfg.models.push_back({model_kind_from_name(name), tf.to_config()});
  if (cfg.models.empty()) throw UsageError("no models given");
  if (train_steps <= 0 || static_cast<std::size_t>(train_steps) >= steps)
    throw UsageError("--train-steps must lie inside --steps");

  fs::create_directories(out_dir);
  std::vector<std::string> outputs;
  for (double level : cfg.levels) {
    const MetricsTable table = sparsity_sweep_level(cfg, level);
    const int pct = static_cast<int>(std::lround(level * 100.0));
    const std::string base =
        (fs::path(out_dir) / ("sweep_level" + std::to_string(pct))).string();
    atomic_write_file(base + ".csv", table.to_csv());
    atomic_write_file(base + ".txt", table.to_text());
    outputs.push_back(base + ".csv");
    outputs.push_back(base + ".txt");
    std::cout << table.to_text() << "\n";
  }

  RunManifest m;
  m.command = "sweep";
  m.config = {{"levels", levels_str},
              {"models", models_str},
              {"seeds", seeds_str},
              {"steps", std::to_string(steps)},
              {"train_steps", std::to_string(train_steps)}};
  mf.describe(m.config);
  tf.describe(m.config);
  m.outputs = outputs;
  m.duration_seconds = timer.seconds();
  m.write((fs::path(out_dir) / "sweep.manifest.json").string());
}

void cmd_explain(const std::string& ckpt_path, const std::string& data_path,
                 std::int64_t from, std::int64_t to,
                 const std::string& predictors_str,
                 const std::string& targets_str,
                 const std::string& out_prefix) {
  Timer timer;
  const ModelBundle bundle = load_checkpoint(ckpt_path);
  if (bundle.kind != ModelKind::kSstAnn)
    throw UsageError(
        "explain needs an sstann checkpoint: only the additive model "
        "decomposes predictions into exact per-observation contributions");
  const LongTable table = load_table(data_path);
  if (table.empty()) throw DataError("no usable records in " + data_path);
  const std::int64_t begin = from >= 0 ? from : table.min_time();
  const std::int64_t end = to >= 0 ? to : table.max_time() + 1;

  WindowSet ws = build_windows(table, table, bundle.vocab,
                               bundle.config.windowing(), {begin, end});
  if (ws.windows.empty()) throw DataError("no windows in the requested range");

  const auto report =
      importance_index(bundle, ws.windows, split_list(predictors_str),
                       split_list(targets_str));
  const std::string csv_path = out_prefix + ".csv";
  const std::string txt_path = out_prefix + ".txt";
  atomic_write_file(csv_path, report.to_csv());
  atomic_write_file(txt_path, report.to_text());
  std::cout << report.to_text();

  RunManifest m;
  m.command = "explain";
  m.config = {{"predictors", predictors_str},
              {"targets", targets_str},
              {"range", std::to_string(begin) + ":" + std::to_string(end)},
              {"windows", std::to_string(ws.windows.size())}};
  m.inputs = {ckpt_path, data_path};
  m.outputs = {csv_path, txt_path};
  m.duration_seconds = timer.seconds();
  m.write(manifest_path_for(csv_path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "sert: multivariate spatio-temporal forecasting over sparse, "
      "misaligned sensor series via triplet encoding"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand(
      "simulate", "generate the 16-series synthetic benchmark table");
  std::uint64_t sim_seed = 0;
  std::size_t sim_steps = 40000;
  std::string sim_out;
  sim->add_option("--seed", sim_seed, "root seed")->capture_default_str();
  sim->add_option("--steps", sim_steps, "time steps per series")
      ->capture_default_str();
  sim->add_option("--out", sim_out, "output CSV path")->required();
  sim->set_config("--config");
  sim->callback([&] { cmd_simulate(sim_seed, sim_steps, sim_out); });

  // sparsify
  auto* sp = app.add_subcommand("sparsify",
                                "randomly delete a fraction of observations");
  std::string sp_in, sp_out;
  double sp_rate = 0.0;
  std::uint64_t sp_seed = 0;
  sp->add_option("--in", sp_in, "input CSV")->required();
  sp->add_option("--rate", sp_rate, "fraction to delete, in [0,1)")
      ->required();
  sp->add_option("--seed", sp_seed, "root seed")->capture_default_str();
  sp->add_option("--out", sp_out, "output CSV path")->required();
  sp->set_config("--config");
  sp->callback([&] { cmd_sparsify(sp_in, sp_rate, sp_seed, sp_out); });

  // ingest
  auto* ing = app.add_subcommand(
      "ingest", "normalize a long-format CSV (ISO or integer timestamps)");
  std::string ing_in, ing_out;
  ing->add_option("--in", ing_in, "input CSV")->required();
  ing->add_option("--out", ing_out, "output CSV path")->required();
  ing->set_config("--config");
  ing->callback([&] { cmd_ingest(ing_in, ing_out); });

  // train
  auto* tr = app.add_subcommand("train", "fit a model on a long-format CSV");
  std::string tr_model = "sert", tr_data, tr_out, tr_metrics;
  std::int64_t tr_train_end = -1;
  ModelFlags tr_mf;
  TrainFlags tr_tf;
  tr->add_option("--model", tr_model, "sert | sstann")->capture_default_str();
  tr->add_option("--data", tr_data, "training CSV")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--metrics-out", tr_metrics,
                 "loss-curve CSV (default <out>.loss.csv)");
  tr->add_option("--train-end", tr_train_end,
                 "end of the training range (exclusive); default: table end");
  tr_mf.attach(tr);
  tr_tf.attach(tr);
  tr->set_config("--config");
  tr->callback([&] {
    cmd_train(tr_model, tr_data, tr_mf, tr_tf, tr_train_end, tr_out,
              tr_metrics);
  });

  // evaluate
  auto* ev = app.add_subcommand(
      "evaluate", "per-variable RMSE of a checkpoint (plus naive baseline)");
  std::string ev_ckpt, ev_data, ev_out;
  std::int64_t ev_from = -1, ev_to = -1;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "evaluation CSV")->required();
  ev->add_option("--from", ev_from, "range start (hour index)");
  ev->add_option("--to", ev_to, "range end, exclusive (hour index)");
  ev->add_option("--out", ev_out, "output prefix (.csv/.txt appended)")
      ->required();
  ev->set_config("--config");
  ev->callback(
      [&] { cmd_evaluate(ev_ckpt, ev_data, ev_from, ev_to, ev_out); });

  // sweep
  auto* sw = app.add_subcommand(
      "sweep", "simulate, sparsify, train and score across sparsity levels");
  std::string sw_levels = "0,0.2,0.4,0.6,0.8";
  std::string sw_models = "sert,sstann";
  std::string sw_seeds = "1";
  std::size_t sw_steps = 40000;
  std::int64_t sw_train_steps = 37000;
  std::string sw_out = "sweep_out";
  ModelFlags sw_mf;
  TrainFlags sw_tf;
  sw->add_option("--levels", sw_levels, "comma-separated sparsity levels")
      ->capture_default_str();
  sw->add_option("--models", sw_models, "comma-separated model kinds")
      ->capture_default_str();
  sw->add_option("--seeds", sw_seeds, "comma-separated seeds")
      ->capture_default_str();
  sw->add_option("--steps", sw_steps, "simulated steps per series")
      ->capture_default_str();
  sw->add_option("--train-steps", sw_train_steps,
                 "steps used for training (rest is the test range)")
      ->capture_default_str();
  sw->add_option("--out-dir", sw_out, "output directory")
      ->capture_default_str();
  sw_mf.attach(sw);
  sw_tf.attach(sw);
  sw->set_config("--config");
  sw->callback([&] {
    cmd_sweep(sw_levels, sw_models, sw_seeds, sw_steps, sw_train_steps, sw_mf,
              sw_tf, sw_out);
  });

  // explain
  auto* ex = app.add_subcommand(
      "explain", "signed variable-importance report from an sstann model");
  std::string ex_ckpt, ex_data, ex_pred, ex_tgt, ex_out;
  std::int64_t ex_from = -1, ex_to = -1;
  ex->add_option("--checkpoint", ex_ckpt, "sstann checkpoint")->required();
  ex->add_option("--data", ex_data, "CSV with the windows to analyze")
      ->required();
  ex->add_option("--predictors", ex_pred, "comma-separated predictor names")
      ->required();
  ex->add_option("--targets", ex_tgt, "comma-separated target names")
      ->required();
  ex->add_option("--from", ex_from, "range start (hour index)");
  ex->add_option("--to", ex_to, "range end, exclusive (hour index)");
  ex->add_option("--out", ex_out, "output prefix (.csv/.txt appended)")
      ->required();
  ex->set_config("--config");
  ex->callback([&] {
    cmd_explain(ex_ckpt, ex_data, ex_from, ex_to, ex_pred, ex_tgt, ex_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
