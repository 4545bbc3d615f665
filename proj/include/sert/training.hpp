#pragma once

// Masked-MSE training. The loss for a batch of J windows is
//   L = (1/J) * sum_j sum_k m_k^j (pred_k^j - y_k^j)^2,
// so unobserved targets (mask 0) contribute exactly nothing to either the
// loss value or any gradient. Note the normalization is by J alone, not by
// the unmasked-entry count: sparsely observed batches therefore yield
// smaller losses.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sert/checkpoint.hpp"
#include "sert/errors.hpp"
#include "sert/io.hpp"
#include "sert/model.hpp"
#include "sert/param_store.hpp"
#include "sert/tensor.hpp"

namespace sert {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;  // epochs without validation improvement
  std::uint64_t seed = 0;
  double clip_norm = 5.0;

  void validate() const {
    if (learning_rate < 0.0) throw UsageError("learning rate must be >= 0");
    if (batch_size == 0) throw UsageError("batch size must be positive");
    if (max_epochs == 0) throw UsageError("max epochs must be positive");
    if (patience == 0 || patience > max_epochs)
      throw UsageError("patience must lie in [1, max_epochs]");
    if (clip_norm <= 0.0) throw UsageError("clip norm must be positive");
  }
};

struct LossReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double sec_per_epoch = 0.0;
};

inline Tensor masked_mse(const Tensor& pred, const Tensor& target,
                         const Tensor& mask) {
  if (pred.rank() != 2)
    throw std::invalid_argument("masked_mse: predictions must be [J, K]");
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("masked_mse: shape mismatch");
  const std::size_t j = pred.shape()[0];
  if (j == 0) throw std::invalid_argument("masked_mse: empty batch");
  Tensor diff = sub(pred, target);
  return scale(sum(mul(mask, mul(diff, diff))),
               1.0 / static_cast<double>(j));
}

// Global L2 gradient clipping; returns the pre-clip norm.
inline double clip_global_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : store)
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, t] : store)
      for (double& g : t.grad()) g *= s;
  }
  return norm;
}

class AdamOptimizer {
 public:
  AdamOptimizer(const ParameterStore& store, double learning_rate,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : store) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step(ParameterStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t pi = 0;
    for (auto& [name, t] : store) {
      auto& m = m_[pi];
      auto& v = v_[pi];
      auto& x = t.data();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      ++pi;
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Mean masked MSE over a window list (inference mode, dropout off).
inline double evaluate_masked_mse(const ModelBundle& b,
                                  std::span<const SampleWindow> windows) {
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& w : windows) {
    PaddedWindow pw = embed_window(w, b.params, b.stats, b.config);
    const auto pred = model_forward(b.kind, pw, b.params, b.config).data();
    for (std::size_t k = 0; k < pred.size(); ++k)
      if (w.target_mask[k]) {
        const double d = pred[k] - w.targets[k];
        total += d * d;
      }
  }
  return total / static_cast<double>(windows.size());
}

struct FitResult {
  ModelBundle model;  // parameters restored to the best-validation epoch
  std::vector<LossReport> log;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Adam on shuffled mini-batches with gradient clipping and early stopping
// on validation masked MSE. Fully deterministic given (seed, data, configs);
// all randomness (init, batching, dropout) flows from named substreams of
// TrainConfig::seed.
inline FitResult fit(
    ModelKind kind, std::span<const SampleWindow> train_windows,
    std::span<const SampleWindow> val_windows, const ModelConfig& cfg,
    const TrainConfig& tcfg, const VariableVocabulary& vocab,
    const NormStats& stats,
    const std::function<void(const ModelBundle&, const LossReport&)>&
        on_improvement = {}) {
  cfg.validate();
  tcfg.validate();
  if (train_windows.empty()) throw UsageError("fit: no training windows");
  if (val_windows.empty()) throw UsageError("fit: no validation windows");

  FitResult res;
  res.model = init_model(kind, cfg, vocab, stats,
                         substream_seed(tcfg.seed, "init"));
  ModelBundle& b = res.model;
  AdamOptimizer opt(b.store, tcfg.learning_rate);
  Rng batch_rng(substream_seed(tcfg.seed, "batching"));
  Rng dropout_rng(substream_seed(tcfg.seed, "dropout"));
  ForwardContext train_ctx{&dropout_rng};

  ParameterStore best = b.store.clone();
  std::size_t epochs_since_best = 0;
  const std::size_t k_targets = cfg.n_targets;

  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    batch_rng.shuffle(order);
    double epoch_sq_sum = 0.0;

    for (std::size_t start = 0; start < order.size();
         start += tcfg.batch_size) {
      const std::size_t j =
          std::min(tcfg.batch_size, order.size() - start);
      b.store.zero_grads();
      std::vector<Tensor> preds;
      std::vector<double> targets, mask;
      preds.reserve(j);
      targets.reserve(j * k_targets);
      mask.reserve(j * k_targets);
      for (std::size_t bi = 0; bi < j; ++bi) {
        const SampleWindow& w = train_windows[order[start + bi]];
        PaddedWindow pw = embed_window(w, b.params, b.stats, b.config);
        preds.push_back(model_forward(b.kind, pw, b.params, b.config,
                                      train_ctx));
        targets.insert(targets.end(), w.targets.begin(), w.targets.end());
        for (auto m : w.target_mask) mask.push_back(m ? 1.0 : 0.0);
      }
      Tensor loss = masked_mse(
          stack_rows(std::span<const Tensor>(preds)),
          Tensor::from({j, k_targets}, std::move(targets)),
          Tensor::from({j, k_targets}, std::move(mask)));
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch offset " +
                           std::to_string(start));
      backward(loss);
      clip_global_norm(b.store, tcfg.clip_norm);
      opt.step(b.store);
      epoch_sq_sum += loss_value * static_cast<double>(j);
    }

    LossReport report;
    report.epoch = epoch;
    report.train_loss =
        epoch_sq_sum / static_cast<double>(train_windows.size());
    report.val_loss = evaluate_masked_mse(b, val_windows);
    if (!std::isfinite(report.val_loss))
      throw NumericError("validation loss non-finite at epoch " +
                         std::to_string(epoch));
    report.sec_per_epoch =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.log.push_back(report);

    if (report.val_loss < res.best_val_loss) {
      res.best_val_loss = report.val_loss;
      res.best_epoch = epoch;
      best.copy_values_from(b.store);
      epochs_since_best = 0;
      if (on_improvement) on_improvement(b, report);
    } else if (++epochs_since_best >= tcfg.patience) {
      break;
    }
  }

  b.store.copy_values_from(best);
  return res;
}

// Loss-curve CSV; timing lives in the run manifest, not here, so replayed
// runs produce byte-identical files.
inline std::string loss_log_csv(const std::vector<LossReport>& log) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch);
    out += ',';
    out += format_double(r.train_loss);
    out += ',';
    out += format_double(r.val_loss);
    out += '\n';
  }
  return out;
}

// --- gradient checking -------------------------------------------------------

// Compares reverse-mode gradients of the one-window masked MSE against
// central finite differences (step 1e-3) over every parameter coordinate, or
// a seeded subsample of >= 200 coordinates for larger models. Returns the
// worst scale-floored relative error |a - f| / max(|a|, |f|, 1).
inline double gradcheck(ModelKind kind, const SampleWindow& window,
                        const ModelConfig& cfg,
                        const VariableVocabulary& vocab,
                        const NormStats& stats, std::uint64_t seed,
                        std::size_t max_coords = 200) {
  ModelBundle b =
      init_model(kind, cfg, vocab, stats, substream_seed(seed, "init"));
  const std::size_t k_targets = cfg.n_targets;

  std::vector<double> targets(window.targets);
  std::vector<double> mask(k_targets);
  for (std::size_t k = 0; k < k_targets; ++k)
    mask[k] = window.target_mask[k] ? 1.0 : 0.0;

  auto loss_value = [&]() {
    NoGradGuard ng;
    PaddedWindow pw = embed_window(window, b.params, b.stats, b.config);
    const auto pred = model_forward(b.kind, pw, b.params, b.config).data();
    double total = 0.0;
    for (std::size_t k = 0; k < k_targets; ++k) {
      const double d = pred[k] - targets[k];
      total += mask[k] * d * d;
    }
    return total;
  };

  b.store.zero_grads();
  {
    PaddedWindow pw = embed_window(window, b.params, b.stats, b.config);
    Tensor pred = model_forward(b.kind, pw, b.params, b.config);
    Tensor loss = masked_mse(reshape(pred, {1, k_targets}),
                             Tensor::from({1, k_targets}, targets),
                             Tensor::from({1, k_targets}, mask));
    backward(loss);
  }

  struct Coord {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Coord> coords;
  std::size_t pi = 0;
  for (const auto& [name, t] : b.store) {
    for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({pi, i});
    ++pi;
  }
  if (coords.size() > max_coords) {
    Rng rng(substream_seed(seed, "gradcheck"));
    rng.shuffle(coords);
    coords.resize(max_coords);
  }

  std::vector<Tensor> tensors;
  for (auto& [name, t] : b.store) tensors.push_back(t);

  constexpr double kStep = 1e-3;
  double worst = 0.0;
  for (const Coord& c : coords) {
    auto& x = tensors[c.param].data();
    const double keep = x[c.index];
    x[c.index] = keep + kStep;
    const double up = loss_value();
    x[c.index] = keep - kStep;
    const double down = loss_value();
    x[c.index] = keep;
    const double fd = (up - down) / (2.0 * kStep);
    const double an = tensors[c.param].grad()[c.index];
    const double denom = std::max({std::abs(an), std::abs(fd), 1.0});
    worst = std::max(worst, std::abs(an - fd) / denom);
  }
  return worst;
}

}  // namespace sert
