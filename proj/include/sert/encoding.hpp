#pragma once

// Observation encoding: each raw observation is a (time, variable, value)
// triplet. The three components are embedded separately into R^d -- the
// variable through a lookup table, time and value through small one-to-many
// feed-forward maps (continuous value embeddings) -- and summed. Missing
// observations are simply absent; nothing is ever imputed on the input side.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sert/errors.hpp"
#include "sert/param_store.hpp"
#include "sert/rng.hpp"
#include "sert/tensor.hpp"

namespace sert {

// One observation inside a sample window. `time_offset` is measured in hours
// from the window start and lies in [0, lookback).
struct Triplet {
  double time_offset = 0.0;
  std::uint32_t variable = 0;
  double value = 0.0;
};

// How location enters the model:
//   kNameConcat        -- "{location}.{variable}" composite variable names,
//                         one shared window across locations.
//   kSeparateEmbedding -- bare variable names, windows grouped per location,
//                         a learned location embedding concatenated to the
//                         flattened encoder output before the head.
enum class LocationMode { kNameConcat, kSeparateEmbedding };

inline const char* location_mode_name(LocationMode m) {
  return m == LocationMode::kNameConcat ? "name_concat" : "separate_embedding";
}

inline LocationMode location_mode_from_name(const std::string& s) {
  if (s == "name_concat" || s == "a" || s == "A") return LocationMode::kNameConcat;
  if (s == "separate_embedding" || s == "b" || s == "B")
    return LocationMode::kSeparateEmbedding;
  throw UsageError("unknown location mode: " + s +
                   " (expected name_concat|separate_embedding)");
}

// Ordered variable names (composites in kNameConcat mode, bare names
// otherwise) plus location names when locations are embedded separately.
// Index <-> name is a bijection and is preserved by checkpoints.
struct VariableVocabulary {
  std::vector<std::string> names;
  std::vector<std::string> location_names;

  std::optional<std::uint32_t> find(const std::string& name) const {
    build_maps();
    auto it = name_to_id_.find(name);
    if (it == name_to_id_.end()) return std::nullopt;
    return it->second;
  }
  std::uint32_t require(const std::string& name) const {
    auto id = find(name);
    if (!id) throw DataError("variable not in vocabulary: " + name);
    return *id;
  }
  std::optional<std::uint32_t> find_location(const std::string& name) const {
    build_maps();
    auto it = loc_to_id_.find(name);
    if (it == loc_to_id_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t size() const { return names.size(); }

 private:
  void build_maps() const {
    if (name_to_id_.size() == names.size() &&
        loc_to_id_.size() == location_names.size())
      return;
    name_to_id_.clear();
    loc_to_id_.clear();
    for (std::uint32_t i = 0; i < names.size(); ++i) name_to_id_[names[i]] = i;
    for (std::uint32_t i = 0; i < location_names.size(); ++i)
      loc_to_id_[location_names[i]] = i;
  }
  mutable std::unordered_map<std::string, std::uint32_t> name_to_id_;
  mutable std::unordered_map<std::string, std::uint32_t> loc_to_id_;
};

inline std::string composite_name(const std::string& location,
                                  const std::string& variable) {
  return location + "." + variable;
}

// Per-variable value statistics, computed on the training split only.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  double normalize_value(std::uint32_t var, double v) const {
    const double sd = std::max(stddev.at(var), 1e-8);
    return (v - mean.at(var)) / sd;
  }
};

// Time offsets are scaled by the lookback so they land in [0, 1).
inline std::pair<double, double> normalize_inputs(double time_offset,
                                                  double value,
                                                  std::uint32_t var,
                                                  const NormStats& stats,
                                                  double lookback) {
  return {time_offset / lookback, stats.normalize_value(var, value)};
}

// Hidden width of the continuous value embedding.
inline std::size_t cve_hidden_width(std::size_t embed_dim) {
  return static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(embed_dim))));
}

// One-to-many feed-forward map from a scalar to R^d:
//   e(x) = tanh(x * Wh + bh) * Wo + bo
struct CveParams {
  Tensor hidden_weight;  // [1, H]
  Tensor hidden_bias;    // [H]
  Tensor output_weight;  // [H, d]
  Tensor output_bias;    // [d]
};

// Embeds a column of scalars [N] into [N, d] in one pass.
inline Tensor cve_batch(const std::vector<double>& xs, const CveParams& p) {
  Tensor col = Tensor::from({xs.size(), 1}, xs);
  Tensor h = tanh(add(matmul(col, p.hidden_weight), p.hidden_bias));
  return add(matmul(h, p.output_weight), p.output_bias);
}

inline Tensor cve(double x, const CveParams& p) {
  return reshape(cve_batch({x}, p), {p.output_bias.size()});
}

// e_i = variable embedding + time CVE + value CVE. Inputs are normalized
// with the supplied training statistics before entering the CVEs.
inline Tensor embed_triplet(const Triplet& tr, const VariableVocabulary& vocab,
                            const CveParams& time_cve,
                            const CveParams& value_cve,
                            const Tensor& variable_table,
                            const NormStats& stats, double lookback) {
  if (tr.variable >= vocab.size())
    throw DataError("triplet variable id " + std::to_string(tr.variable) +
                    " outside vocabulary of size " +
                    std::to_string(vocab.size()));
  const std::size_t d = variable_table.shape()[1];
  Tensor var_emb =
      reshape(embedding_rows(variable_table, {tr.variable}), {d});
  auto [tn, vn] =
      normalize_inputs(tr.time_offset, tr.value, tr.variable, stats, lookback);
  return add(add(var_emb, cve(tn, time_cve)), cve(vn, value_cve));
}

// Lookup embedding for a location id (separate-embedding mode only).
inline Tensor embed_location(const Tensor& location_table,
                             std::uint32_t location_id) {
  if (location_id >= location_table.shape()[0])
    throw DataError("location id " + std::to_string(location_id) +
                    " outside location table of size " +
                    std::to_string(location_table.shape()[0]));
  const std::size_t d = location_table.shape()[1];
  return reshape(embedding_rows(location_table, {location_id}), {d});
}

// --- initialization --------------------------------------------------------
// Lookup tables use Normal(0, 0.02^2); dense layers use Uniform over
// +-1/sqrt(fan_in) for both weights and biases.

inline Tensor init_normal(Rng& rng, Shape shape, double sd) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.normal() * sd;
  return Tensor::from(std::move(shape), std::move(d), true);
}

inline Tensor init_uniform_fanin(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(d), true);
}

struct EncodingParams {
  Tensor variable_table;            // [V, d]
  Tensor location_table;            // [S, d]; undefined in kNameConcat mode
  CveParams time_cve;
  CveParams value_cve;
};

inline CveParams register_cve(ParameterStore& store, const std::string& prefix,
                              std::size_t embed_dim, Rng& rng) {
  const std::size_t h = cve_hidden_width(embed_dim);
  CveParams p;
  p.hidden_weight = store.add(prefix + ".hidden_w",
                              init_uniform_fanin(rng, {1, h}, 1));
  p.hidden_bias = store.add(prefix + ".hidden_b",
                            init_uniform_fanin(rng, {h}, 1));
  p.output_weight = store.add(prefix + ".out_w",
                              init_uniform_fanin(rng, {h, embed_dim}, h));
  p.output_bias = store.add(prefix + ".out_b",
                            init_uniform_fanin(rng, {embed_dim}, h));
  return p;
}

inline EncodingParams register_encoding_params(ParameterStore& store,
                                               std::size_t embed_dim,
                                               std::size_t vocab_size,
                                               std::size_t n_locations,
                                               Rng& rng) {
  EncodingParams p;
  p.variable_table = store.add(
      "embed.variable_table",
      init_normal(rng, {vocab_size, embed_dim}, 0.02));
  if (n_locations > 0)
    p.location_table = store.add(
        "embed.location_table",
        init_normal(rng, {n_locations, embed_dim}, 0.02));
  p.time_cve = register_cve(store, "cve_time", embed_dim, rng);
  p.value_cve = register_cve(store, "cve_value", embed_dim, rng);
  return p;
}

// Rebinds handles after a checkpoint load.
inline EncodingParams encoding_params_from(const ParameterStore& store) {
  EncodingParams p;
  p.variable_table = store.at("embed.variable_table");
  if (store.contains("embed.location_table"))
    p.location_table = store.at("embed.location_table");
  p.time_cve = {store.at("cve_time.hidden_w"), store.at("cve_time.hidden_b"),
                store.at("cve_time.out_w"), store.at("cve_time.out_b")};
  p.value_cve = {store.at("cve_value.hidden_w"),
                 store.at("cve_value.hidden_b"), store.at("cve_value.out_w"),
                 store.at("cve_value.out_b")};
  return p;
}

}  // namespace sert
