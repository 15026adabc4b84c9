#include "akmnet/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace akmnet::nn {

template <typename T>
Var<T> ParameterSet<T>::add(std::string name, Tensor<T> init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("parameters: duplicate name '" + name + "'");
  }
  auto var = parameter(std::move(init));
  entries_.push_back({std::move(name), var});
  return var;
}

template <typename T>
void ParameterSet<T>::append(const ParameterSet& other) {
  for (const auto& e : other.entries_) {
    for (const auto& mine : entries_) {
      if (mine.name == e.name) throw std::invalid_argument("parameters: duplicate name '" + e.name + "'");
    }
    entries_.push_back(e);
  }
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

template <typename T>
const Var<T>& ParameterSet<T>::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw std::out_of_range("parameters: no entry '" + name + "'");
}

template <typename T>
std::vector<Var<T>> ParameterSet<T>::vars() const {
  std::vector<Var<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.var);
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
std::string ParameterSet<T>::manifest() const {
  std::ostringstream os;
  for (const auto& e : entries_) os << e.name << ' ' << shape_str(e.var.shape()) << '\n';
  return os.str();
}

template <typename T>
Tensor<T> he_normal(const Shape& shape, std::size_t fan_in, RngStream& rng) {
  Tensor<T> out(shape);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : out.values()) v = static_cast<T>(sd * rng.normal());
  return out;
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, RngStream& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  Tensor<T> mask(shape, T(1));
  if (!training || p == 0.0) return mask;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : mask.values()) v = rng.uniform() < p ? T(0) : keep;
  return mask;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

static_assert(std::endian::native == std::endian::little, "weight IO assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw WeightMismatch(std::string("weights: truncated at ") + what);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw WeightMismatch(std::string("weights: truncated at ") + what);
  return v;
}

}  // namespace

template <typename T>
void save_weights(const ParameterSet<T>& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("weights: cannot open '" + path.string() + "' for writing");
  os.write(kWeightMagic, 4);
  put_u32(os, kWeightVersion);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<std::uint32_t>(e.var.shape().size()));
    for (auto extent : e.var.shape()) put_u32(os, static_cast<std::uint32_t>(extent));
  }
  put_u64(os, fnv1a64(params.manifest()));
  for (const auto& e : params.entries()) {
    for (auto v : e.var.value().values()) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw std::runtime_error("weights: write failed for '" + path.string() + "'");
}

template <typename T>
void load_weights(ParameterSet<T>& params, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weights: cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw WeightMismatch("weights: bad magic in '" + path.string() + "'");
  }
  const auto version = get_u32(is, "version");
  if (version != kWeightVersion) throw WeightMismatch("weights: unsupported version " + std::to_string(version));
  const auto count = get_u32(is, "manifest");

  // Compare every manifest entry before touching any value.
  std::ostringstream manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u32(is, "manifest");
    if (len > 4096) throw WeightMismatch("weights: corrupt manifest entry " + std::to_string(i));
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw WeightMismatch("weights: truncated at manifest");
    const auto rank = get_u32(is, "manifest");
    if (rank > 8) throw WeightMismatch("weights: corrupt rank for '" + name + "'");
    Shape shape(rank);
    for (auto& extent : shape) extent = get_u32(is, "manifest");
    if (i >= params.size()) throw WeightMismatch("weights: unexpected parameter '" + name + "'");
    const auto& expected = params.entries()[i];
    if (expected.name != name || expected.var.shape() != shape) {
      throw WeightMismatch("weights: parameter mismatch at '" + expected.name + "' " +
                           shape_str(expected.var.shape()) + " (file has '" + name + "' " +
                           shape_str(shape) + ")");
    }
    manifest << name << ' ' << shape_str(shape) << '\n';
  }
  if (count < params.size()) {
    throw WeightMismatch("weights: missing parameter '" + params.entries()[count].name + "'");
  }
  const auto hash = get_u64(is, "manifest hash");
  if (hash != fnv1a64(manifest.str())) throw WeightMismatch("weights: manifest hash mismatch");

  std::vector<Tensor<T>> staged;
  for (const auto& e : params.entries()) {
    Tensor<T> values(e.var.shape());
    for (auto& v : values.values()) {
      float f = 0;
      if (!is.read(reinterpret_cast<char*>(&f), 4)) {
        throw WeightMismatch("weights: truncated values for '" + e.name + "'");
      }
      v = static_cast<T>(f);
    }
    staged.push_back(std::move(values));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw WeightMismatch("weights: trailing bytes");
  for (std::size_t i = 0; i < staged.size(); ++i) {
    params.entries()[i].var.mutable_value() = std::move(staged[i]);
  }
}

#define AKMNET_PARAMS(T)                                                              \
  template class ParameterSet<T>;                                                     \
  template Tensor<T> he_normal<T>(const Shape&, std::size_t, RngStream&);             \
  template Tensor<T> dropout_mask<T>(const Shape&, double, RngStream&, bool);         \
  template void save_weights<T>(const ParameterSet<T>&, const std::filesystem::path&); \
  template void load_weights<T>(ParameterSet<T>&, const std::filesystem::path&);

AKMNET_PARAMS(float)
AKMNET_PARAMS(double)
AKMNET_PARAMS(long double)

}  // namespace akmnet::nn
