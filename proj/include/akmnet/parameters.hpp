#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "akmnet/graph.hpp"
#include "akmnet/rng.hpp"

namespace akmnet::nn {

/// Ordered collection of named trainable leaves. Order is insertion order and
/// defines the weight-file manifest.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };

  Var<T> add(std::string name, Tensor<T> init);
  void append(const ParameterSet& other);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  const Var<T>& at(const std::string& name) const;
  std::vector<Var<T>> vars() const;

  void zero_grad();
  /// Name/shape manifest, one "name shape" line per entry.
  std::string manifest() const;

 private:
  std::vector<Entry> entries_;
};

/// Fan-in scaled Gaussian: N(0, 2 / fan_in).
template <typename T>
Tensor<T> he_normal(const Shape& shape, std::size_t fan_in, RngStream& rng);

/// Inverted-dropout mask with entries in {0, 1/(1-p)}. Evaluation mode (or
/// p == 0) yields all ones. Throws when p is outside [0, 1).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, RngStream& rng, bool training = true);

constexpr char kWeightMagic[4] = {'A', 'K', 'M', 'W'};
constexpr std::uint32_t kWeightVersion = 1;

/// Raised when a weight file does not match the expected manifest.
class WeightMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(const std::string& text);

/// Writes "AKMW", version, manifest (count, then per entry name and extents),
/// the manifest hash, and the values as little-endian float32 in manifest
/// order.
template <typename T>
void save_weights(const ParameterSet<T>& params, const std::filesystem::path& path);

/// Replaces parameter values from a weight file written for the same
/// manifest; names and shapes must match entry for entry.
template <typename T>
void load_weights(ParameterSet<T>& params, const std::filesystem::path& path);

}  // namespace akmnet::nn
