#include "mhmr/nn/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mhmr/errors.hpp"

namespace mhmr::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

using nlohmann::json;

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) throw ShapeError("gradients: store size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto& dst = grads_[i];
    const auto& src = other.grads_[i];
    if (dst.shape() != src.shape()) throw ShapeError("gradients: shape mismatch for parameter " + std::to_string(i));
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return *this;
}

void Gradients::scale(double factor) {
  for (auto& g : grads_)
    for (double& x : g.values()) x *= factor;
}

bool Gradients::all_finite() const {
  for (const auto& g : grads_)
    for (double x : g.values())
      if (!std::isfinite(x)) return false;
  return true;
}

ParamId ParamStore::add(std::string name, Array init) {
  if (index_.contains(name)) throw std::invalid_argument("param store: duplicate parameter " + name);
  const ParamId id = entries_.size();
  index_.emplace(name, id);
  Array m(init.shape()), v(init.shape());
  entries_.push_back({std::move(name), std::move(init), std::move(m), std::move(v)});
  return id;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamId ParamStore::id(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("param store: unknown parameter " + std::string(name));
  return *found;
}

Gradients ParamStore::zero_gradients() const {
  std::vector<Array> g;
  g.reserve(entries_.size());
  for (const auto& e : entries_) g.emplace_back(e.value.shape());
  return Gradients(std::move(g));
}

void ParamStore::adam_step(const Gradients& grads, const AdamConfig& cfg) {
  if (grads.size() != entries_.size()) throw ShapeError("adam_step: gradient count does not match store");
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& e = entries_[i];
    const Array& g = grads[i];
    if (g.shape() != e.value.shape())
      throw ShapeError("adam_step: gradient shape " + to_string(g.shape()) + " vs parameter " +
                       to_string(e.value.shape()) + " for " + e.name);
    for (std::size_t k = 0; k < g.size(); ++k) {
      e.m[k] = cfg.beta1 * e.m[k] + (1.0 - cfg.beta1) * g[k];
      e.v[k] = cfg.beta2 * e.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = e.m[k] / c1;
      const double vhat = e.v[k] / c2;
      e.value[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (step_ != other.step_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value != b.value || a.m != b.m || a.v != b.v) return false;
  }
  return true;
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("checkpoint: truncated header");
  return v;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& path, const std::string& meta_json) const {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    for (const char* kind : {"value", "adam_m", "adam_v"}) {
      tensors.push_back({{"name", e.name}, {"kind", kind}, {"shape", e.value.shape()}, {"offset", offset}});
      offset += e.value.size() * sizeof(double);
    }
  }
  json manifest = {{"format", "mhmr-checkpoint"},
                   {"version", 1},
                   {"dtype", "f64le"},
                   {"step", step_},
                   {"tensors", tensors},
                   {"meta", json::parse(meta_json)}};
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries_)
    for (const Array* a : {&e.value, &e.m, &e.v})
      out.write(reinterpret_cast<const char*>(a->data()), static_cast<std::streamsize>(a->size() * sizeof(double)));
  if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

ParamStore::Loaded ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  const std::uint64_t len = read_u64(in);
  if (len > (1ull << 30)) throw FormatError("checkpoint: implausible manifest length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "mhmr-checkpoint" || manifest.value("version", 0) != 1)
    throw FormatError("checkpoint: unrecognized format or version");
  if (manifest.value("dtype", "") != "f64le") throw FormatError("checkpoint: unsupported dtype");

  Loaded result;
  ParamStore& store = result.store;
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() % 3 != 0) throw FormatError("checkpoint: tensor list is not value/m/v triples");
  for (std::size_t i = 0; i < tensors.size(); i += 3) {
    const std::string name = tensors[i].at("name").get<std::string>();
    const Shape shape = tensors[i].at("shape").get<Shape>();
    Array arrays[3] = {Array(shape), Array(shape), Array(shape)};
    for (int k = 0; k < 3; ++k) {
      const auto& t = tensors[i + k];
      if (t.at("name").get<std::string>() != name || t.at("shape").get<Shape>() != shape)
        throw FormatError("checkpoint: inconsistent tensor entry for " + name);
      if (!in.read(reinterpret_cast<char*>(arrays[k].data()),
                   static_cast<std::streamsize>(arrays[k].size() * sizeof(double))))
        throw FormatError("checkpoint: truncated payload at " + name);
    }
    const ParamId id = store.add(name, std::move(arrays[0]));
    store.entries_[id].m = std::move(arrays[1]);
    store.entries_[id].v = std::move(arrays[2]);
  }
  store.step_ = manifest.at("step").get<std::int64_t>();
  result.meta_json = manifest.at("meta").dump();
  return result;
}

}  // namespace mhmr::nn
