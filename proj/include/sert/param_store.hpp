#pragma once

// Named, shaped, trainable tensors. Iteration order is insertion order and
// is part of the contract: optimizers, gradient clipping and checkpoints all
// walk parameters in the same deterministic sequence.

#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sert/errors.hpp"
#include "sert/tensor.hpp"

namespace sert {

class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name))
      throw std::invalid_argument("parameter already registered: " + name);
    if (!t.requires_grad())
      throw std::invalid_argument("parameter must require grad: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name); }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  std::size_t total_coordinates() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  // Deep copy; the clone's tensors are fresh leaves.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_)
      out.add(name, t.clone_detached(true));
    return out;
  }

  // Copies values (not grads) from a store with identical layout.
  void copy_values_from(const ParameterStore& other) {
    if (other.size() != size())
      throw std::invalid_argument("parameter store layout mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape())
        throw std::invalid_argument("parameter store layout mismatch at " +
                                    entries_[i].first);
      entries_[i].second.data() = other.entries_[i].second.data();
    }
  }

  // --- serialization ------------------------------------------------------
  // Binary layout: magic, u64 parameter count, then per parameter:
  // u32 name length, name bytes, u32 rank, u64 extents, f64 values (LE).
  // Round-trips are byte-exact.

  static constexpr char kMagic[8] = {'S', 'R', 'T', 'P', 'A', 'R', 'M', '1'};

  void serialize(std::string& out) const {
    out.append(kMagic, sizeof(kMagic));
    append_u64(out, entries_.size());
    for (const auto& [name, t] : entries_) {
      append_u32(out, static_cast<std::uint32_t>(name.size()));
      out.append(name);
      append_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t e : t.shape()) append_u64(out, e);
      const auto& d = t.data();
      const std::size_t pos = out.size();
      out.resize(pos + d.size() * sizeof(double));
      std::memcpy(out.data() + pos, d.data(), d.size() * sizeof(double));
    }
  }

  static ParameterStore deserialize(const std::string& bytes,
                                    std::size_t& offset) {
    ParameterStore out;
    if (bytes.size() < offset + sizeof(kMagic) ||
        std::memcmp(bytes.data() + offset, kMagic, sizeof(kMagic)) != 0)
      throw DataError("parameter store: bad magic");
    offset += sizeof(kMagic);
    const std::uint64_t count = read_u64(bytes, offset);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t name_len = read_u32(bytes, offset);
      check_space(bytes, offset, name_len);
      std::string name(bytes.data() + offset, name_len);
      offset += name_len;
      const std::uint32_t rank = read_u32(bytes, offset);
      Shape shape(rank);
      for (auto& e : shape) e = read_u64(bytes, offset);
      const std::size_t n = shape_numel(shape);
      check_space(bytes, offset, n * sizeof(double));
      std::vector<double> data(n);
      std::memcpy(data.data(), bytes.data() + offset, n * sizeof(double));
      offset += n * sizeof(double);
      out.add(name, Tensor::from(std::move(shape), std::move(data), true));
    }
    return out;
  }

 private:
  static void append_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  }
  static void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
  }
  static void check_space(const std::string& b, std::size_t off,
                          std::size_t need) {
    if (b.size() < off + need)
      throw DataError("parameter store: truncated data");
  }
  static std::uint32_t read_u32(const std::string& b, std::size_t& off) {
    check_space(b, off, 4);
    std::uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    off += 4;
    return v;
  }
  static std::uint64_t read_u64(const std::string& b, std::size_t& off) {
    check_space(b, off, 8);
    std::uint64_t v;
    std::memcpy(&v, b.data() + off, 8);
    off += 8;
    return v;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sert
