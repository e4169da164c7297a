#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mhmr/nn/array.hpp"

namespace mhmr::nn {

using ParamId = std::size_t;

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

// One gradient array per parameter of a store, in store order.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Array> grads) : grads_(std::move(grads)) {}

  std::size_t size() const noexcept { return grads_.size(); }
  Array& operator[](ParamId id) { return grads_.at(id); }
  const Array& operator[](ParamId id) const { return grads_.at(id); }

  Gradients& operator+=(const Gradients& other);
  void scale(double factor);
  bool all_finite() const;

 private:
  std::vector<Array> grads_;
};

// Named trainable tensors plus Adam moments.
class ParamStore {
 public:
  ParamId add(std::string name, Array init);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  const Array& value(ParamId id) const { return entries_.at(id).value; }
  Array& mutable_value(ParamId id) { return entries_.at(id).value; }
  const Array& first_moment(ParamId id) const { return entries_.at(id).m; }
  const Array& second_moment(ParamId id) const { return entries_.at(id).v; }
  std::optional<ParamId> find(std::string_view name) const;
  ParamId id(std::string_view name) const;
  std::int64_t step() const noexcept { return step_; }

  Gradients zero_gradients() const;

  /// Bias-corrected Adam update of every parameter; increments the step.
  void adam_step(const Gradients& grads, const AdamConfig& config);

  bool operator==(const ParamStore& other) const;

  /// Writes `[u64 manifest length][manifest JSON][payload]`. The manifest
  /// lists every tensor (value and both moments) with shape and byte offset;
  /// `meta_json` is embedded verbatim under "meta".
  void save(const std::filesystem::path& path, const std::string& meta_json = "{}") const;

  struct Loaded;
  static Loaded load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string name;
    Array value;
    Array m;
    Array v;
  };
  std::vector<Entry> entries_;
  std::map<std::string, ParamId, std::less<>> index_;
  std::int64_t step_ = 0;
};

struct ParamStore::Loaded {
  ParamStore store;
  std::string meta_json;
};

}  // namespace mhmr::nn
