#pragma once

// Self-describing model checkpoints. A checkpoint carries everything needed
// to reproduce predictions: model kind, config, vocabularies, normalization
// statistics and all parameters. Binary layout: magic line, u64 JSON header
// length, JSON header, parameter-store blob. Round-trips are byte-exact.

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <string>

#include "sert/io.hpp"
#include "sert/model.hpp"
#include "sert/param_store.hpp"

namespace sert {

// A ready-to-use model: load one or initialize one, then call predict/fit.
struct ModelBundle {
  ModelKind kind = ModelKind::kSstAnn;
  ModelConfig config;
  VariableVocabulary vocab;
  NormStats stats;
  ParameterStore store;
  ModelParams params;  // handles into `store`
};

inline ModelBundle init_model(ModelKind kind, const ModelConfig& cfg,
                              VariableVocabulary vocab, NormStats stats,
                              std::uint64_t init_seed) {
  ModelBundle b;
  b.kind = kind;
  b.config = cfg;
  b.vocab = std::move(vocab);
  b.stats = std::move(stats);
  Rng rng(init_seed);
  b.params = register_model_params(b.store, kind, cfg, b.vocab.size(),
                                   b.vocab.location_names.size(), rng);
  return b;
}

namespace detail {
inline constexpr const char* kCheckpointMagic = "SERTCKPT1\n";

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"n_heads", c.n_heads},
          {"n_blocks", c.n_blocks},
          {"max_triplets", c.max_triplets},
          {"n_targets", c.n_targets},
          {"lookback", c.lookback},
          {"horizon", c.horizon},
          {"location_mode", location_mode_name(c.location_mode)},
          {"dropout", c.dropout}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.max_triplets = j.at("max_triplets").get<std::size_t>();
  c.n_targets = j.at("n_targets").get<std::size_t>();
  c.lookback = j.at("lookback").get<std::int64_t>();
  c.horizon = j.at("horizon").get<std::int64_t>();
  c.location_mode =
      location_mode_from_name(j.at("location_mode").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  return c;
}
}  // namespace detail

inline std::string serialize_checkpoint(const ModelBundle& b) {
  nlohmann::json header{
      {"format", 1},
      {"kind", model_kind_name(b.kind)},
      {"config", detail::config_to_json(b.config)},
      {"variables", b.vocab.names},
      {"locations", b.vocab.location_names},
      {"stats", {{"mean", b.stats.mean}, {"stddev", b.stats.stddev}}}};
  const std::string head = header.dump();
  std::string out(detail::kCheckpointMagic);
  char len[8];
  const std::uint64_t n = head.size();
  std::memcpy(len, &n, 8);
  out.append(len, 8);
  out += head;
  b.store.serialize(out);
  return out;
}

inline void save_checkpoint(const ModelBundle& b,
                            const std::filesystem::path& path) {
  atomic_write_file(path, serialize_checkpoint(b));
}

inline ModelBundle deserialize_checkpoint(const std::string& bytes) {
  const std::size_t magic_len = std::strlen(detail::kCheckpointMagic);
  if (bytes.size() < magic_len + 8 ||
      bytes.compare(0, magic_len, detail::kCheckpointMagic) != 0)
    throw DataError("not a model checkpoint (bad magic)");
  std::uint64_t head_len = 0;
  std::memcpy(&head_len, bytes.data() + magic_len, 8);
  if (bytes.size() < magic_len + 8 + head_len)
    throw DataError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(
        bytes.substr(magic_len + 8, static_cast<std::size_t>(head_len)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header unreadable: ") + e.what());
  }

  ModelBundle b;
  try {
    b.kind = model_kind_from_name(header.at("kind").get<std::string>());
    b.config = detail::config_from_json(header.at("config"));
    b.vocab.names = header.at("variables").get<std::vector<std::string>>();
    b.vocab.location_names =
        header.at("locations").get<std::vector<std::string>>();
    b.stats.mean = header.at("stats").at("mean").get<std::vector<double>>();
    b.stats.stddev =
        header.at("stats").at("stddev").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header incomplete: ") + e.what());
  }
  b.config.validate();

  std::size_t offset = magic_len + 8 + static_cast<std::size_t>(head_len);
  b.store = ParameterStore::deserialize(bytes, offset);
  if (offset != bytes.size())
    throw DataError("checkpoint has trailing bytes");

  // Cross-checks: vocabulary sizes against parameter shapes.
  if (b.config.n_targets != b.vocab.size())
    throw DataError("checkpoint: n_targets does not match vocabulary size");
  if (b.stats.mean.size() != b.vocab.size() ||
      b.stats.stddev.size() != b.vocab.size())
    throw DataError("checkpoint: statistics do not match vocabulary size");
  b.params = model_params_from(b.store, b.kind, b.config);
  if (b.params.encoding.variable_table.shape()[0] != b.vocab.size())
    throw DataError("checkpoint: variable table does not match vocabulary");
  if (b.config.separate_location() &&
      (!b.params.encoding.location_table.defined() ||
       b.params.encoding.location_table.shape()[0] !=
           b.vocab.location_names.size()))
    throw DataError("checkpoint: location table does not match vocabulary");
  return b;
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

// Inference for one window: embeds, runs the forward pass, extracts values.
inline std::vector<double> predict(const ModelBundle& b,
                                   const SampleWindow& window) {
  NoGradGuard ng;
  PaddedWindow pw = embed_window(window, b.params, b.stats, b.config);
  return model_forward(b.kind, pw, b.params, b.config).data();
}

}  // namespace sert
