#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "akmnet/backbone.hpp"
#include "akmnet/data.hpp"
#include "akmnet/mining.hpp"
#include "akmnet/temporal.hpp"

// The composed network: shared backbone, a selection policy, the pixel-wise
// bi-GRU and the classifier head.
namespace akmnet::model {

enum class VariantKind { s123, s12, s13, s23, va_all, va_norm, va_random, va_last10 };

/// One selection policy per model instance.
struct VariantSpec {
  VariantKind kind = VariantKind::s123;
  std::size_t length = 0;  // va-norm target length
  std::size_t count = 0;   // va-random subset size used when no per-clip count is known
  /// va-random: subset size per clip id (for instance N from a prior s123 run).
  std::map<std::string, std::size_t> clip_counts;
  /// va-random: number of samplings averaged at evaluation.
  std::size_t eval_samples = 5;

  /// Canonical name: s123, s12, s13, s23, va-all, va-norm32, va-random, va-last10.
  std::string name() const;
  /// True when the AKM module (and its GS-MMM loss) is part of the network.
  bool uses_mining() const;
  bool operator==(const VariantSpec&) const = default;
};

/// Parses a variant name; va-norm requires a length suffix (va-norm16).
/// Throws std::invalid_argument on anything else.
VariantSpec parse_variant(const std::string& name);

/// Frame subset for the variants that select without the AKM module
/// (va-all, va-norm, va-random, va-last10); 0-based and increasing.
/// va-random clamps an oversized count to T and sets `clamped`.
std::vector<std::size_t> fixed_selection(const VariantSpec& variant, std::size_t frames, const std::string& clip_id,
                                         nn::RngStream& rng, bool* clamped = nullptr);

struct ModelConfig {
  backbone::BackboneConfig backbone = backbone::BackboneConfig::desk();
  std::size_t classes = 4;
  std::size_t gru_hidden = 32;
  double dropout = 0.5;
  mining::AkmConfig akm;
  VariantSpec variant;
};

/// Stacks the clip and runs the backbone. Throws data::DataError naming the
/// frame when sizes disagree, and nn::ShapeError when the frame geometry
/// does not match the backbone.
template <typename T>
nn::Var<T> extract_spatial_features(const data::Clip& clip, const backbone::Backbone<T>& net);

template <typename T>
struct ForwardOutput {
  nn::Var<T> logits;          // [1, M]
  nn::Var<T> classification;  // L_c (zero when no label)
  nn::Var<T> sparsity;        // L_GS before weighting
  nn::Var<T> margin;          // L_MMM before weighting
  nn::Var<T> gsmmm;           // weighted GS-MMM
  nn::Var<T> loss;            // Omega
  std::vector<double> probabilities;
  mining::SelectionResult selection;
  /// Frame count the selection refers to (after va-norm resampling).
  std::size_t frames = 0;
  bool clamped = false;
};

template <typename T>
class AkmNet {
 public:
  AkmNet(ModelConfig config, nn::RngStream& rng);

  /// One clip through the selected variant. The clip must already match the
  /// backbone input geometry. `label` enables the classification loss.
  ForwardOutput<T> forward(const data::Clip& clip, std::optional<std::size_t> label, temporal::Mode mode,
                           nn::RngStream& rng) const;

  /// Class probabilities; va-random averages several samplings.
  std::vector<double> predict(const data::Clip& clip, nn::RngStream& rng) const;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }
  const backbone::Backbone<T>& backbone_net() const { return backbone_; }

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  backbone::Backbone<T> backbone_;
  nn::ParameterSet<T> params_;
  std::optional<mining::AkmParams<T>> akm_;
  temporal::GruParams<T> gru_;
  temporal::ClassifierHead<T> head_;
};

extern template class AkmNet<float>;
extern template class AkmNet<double>;
extern template class AkmNet<long double>;

}  // namespace akmnet::model
