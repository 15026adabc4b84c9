#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "akmnet/graph.hpp"
#include "akmnet/parameters.hpp"

namespace akmnet::backbone {

/// Residual feature extractor geometry. Conv1 is a stride-2 5x5 convolution
/// with no pooling after it; each stage holds `blocks_per_stage` basic
/// blocks. The remaining factor-of-two reductions needed to reach
/// `output_grid` are assigned to the first block of the last stages.
struct BackboneConfig {
  std::size_t input_side = 32;
  std::size_t input_channels = 1;
  std::vector<std::size_t> widths{8, 16, 32, 64};
  std::size_t blocks_per_stage = 2;
  std::size_t output_grid = 2;
  std::size_t stem_kernel = 5;

  /// Conv1 5x5,64 then stages 64/128/256/512 x2 blocks; 128x128 -> 512x4x4.
  static BackboneConfig paper();
  /// Widths 8/16/32/64 on 32x32 input; output 64x2x2.
  static BackboneConfig desk();

  std::size_t feature_channels() const { return widths.empty() ? 0 : widths.back(); }
  bool operator==(const BackboneConfig&) const = default;
};

/// Stride of each stage's first block, resolved from the config.
/// Throws std::invalid_argument naming the offending stage when the output
/// grid cannot be reached.
std::vector<std::size_t> stage_strides(const BackboneConfig& config);

/// Shared per-frame CNN. Frames are processed as a batch, but every
/// primitive acts on each frame separately, so output frame t depends on
/// input frame t only.
template <typename T>
class Backbone {
 public:
  Backbone(BackboneConfig config, nn::RngStream& rng);

  /// frames[T, channels, side, side] -> F[T, C, grid, grid]
  nn::Var<T> forward(const nn::Var<T>& frames) const;

  const BackboneConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  void save(const std::filesystem::path& path) const;
  /// Replaces the weights; throws nn::WeightMismatch on any manifest
  /// difference, naming the first mismatching parameter.
  void load_weights(const std::filesystem::path& path);

 private:
  struct Norm {
    nn::Var<T> gamma, beta;
  };
  struct Block {
    std::size_t stride;
    nn::Var<T> conv1, conv2, proj;
    Norm norm1, norm2, proj_norm;
  };

  nn::Var<T> normalize(const nn::Var<T>& x, const Norm& n) const;

  BackboneConfig config_;
  nn::ParameterSet<T> params_;
  nn::Var<T> stem_;
  Norm stem_norm_;
  std::vector<Block> blocks_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;
extern template class Backbone<long double>;

}  // namespace akmnet::backbone
