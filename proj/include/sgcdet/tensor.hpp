#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sgcdet {

// Dense row-major tensor of doubles. All pipeline state (features, volumes,
// depth distributions, gradients) is carried by this type.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(static_cast<size_t>(count(shape)), fill) {}

  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    if (static_cast<std::int64_t>(t.data.size()) != count(t.shape))
      throw std::invalid_argument("Tensor::from: data length does not match shape");
    return t;
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent");
      n *= e;
    }
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  const double& at(int i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const double& at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const double& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const double& at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// SplitMix64: tiny deterministic generator, identical output on every
// platform. Used for parameter init and scene generation.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Named parameters and their gradients. Initialization is a pure function of
// (name, shape, seed): each parameter gets its own SplitMix64 stream keyed by
// the name hash, values uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] where
// fan_in is the last extent for matrices and the length for vectors.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  Tensor& ensure(const std::string& name, const std::vector<int>& shape) {
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      if (it->second.value.shape != shape)
        throw std::invalid_argument("ParameterStore::ensure: shape mismatch for '" + name +
                                    "': have " + shape_str(it->second.value.shape) +
                                    ", requested " + shape_str(shape));
      return it->second.value;
    }
    Tensor value(shape);
    const int fan_in = shape.size() >= 2 ? shape[shape.size() - 1] : shape[0];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    SplitMix64 rng(seed_ ^ fnv1a64(name));
    for (double& v : value.data) v = rng.uniform(-bound, bound);
    Entry e{std::move(value), Tensor(shape)};
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  // Overwrites (or creates) a parameter with an explicit value.
  void set(const std::string& name, Tensor value) {
    Tensor grad(value.shape);
    entries_[name] = Entry{std::move(value), std::move(grad)};
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& param(const std::string& name) { return entry(name).value; }
  const Tensor& param(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  const Tensor& grad(const std::string& name) const { return entry(name).grad; }

  void zero_grads() {
    for (auto& [name, e] : entries_)
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  std::uint64_t seed() const { return seed_; }
  // Ordered map: iteration order (and hence every reduction over parameters)
  // is deterministic.
  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::invalid_argument("ParameterStore: unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::invalid_argument("ParameterStore: unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  std::uint64_t seed_;
};

}  // namespace sgcdet
