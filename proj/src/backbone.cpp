#include "akmnet/backbone.hpp"

#include <stdexcept>

#include "akmnet/ops.hpp"

namespace akmnet::backbone {

BackboneConfig BackboneConfig::paper() {
  BackboneConfig c;
  c.input_side = 128;
  c.input_channels = 1;
  c.widths = {64, 128, 256, 512};
  c.blocks_per_stage = 2;
  c.output_grid = 4;
  return c;
}

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

std::vector<std::size_t> stage_strides(const BackboneConfig& config) {
  if (config.widths.empty()) throw std::invalid_argument("backbone: no stages configured");
  if (config.blocks_per_stage == 0) throw std::invalid_argument("backbone: blocks_per_stage must be positive");
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    if (config.widths[s] == 0) throw std::invalid_argument("backbone: stage" + std::to_string(s + 1) + " has zero width");
  }
  if (config.input_channels == 0) throw std::invalid_argument("backbone: input_channels must be positive");
  if (config.output_grid == 0 || config.input_side % config.output_grid != 0) {
    throw std::invalid_argument("backbone: stem cannot reach output grid " + std::to_string(config.output_grid) +
                                " from side " + std::to_string(config.input_side));
  }
  std::size_t factor = config.input_side / config.output_grid;
  if (factor < 2 || factor % 2 != 0) {
    throw std::invalid_argument("backbone: stem (stride 2) cannot reach output grid " +
                                std::to_string(config.output_grid) + " from side " +
                                std::to_string(config.input_side));
  }
  factor /= 2;  // stem
  std::vector<std::size_t> strides(config.widths.size(), 1);
  for (std::size_t s = config.widths.size(); s-- > 0 && factor > 1;) {
    if (factor % 2 != 0) {
      throw std::invalid_argument("backbone: stage" + std::to_string(s + 1) +
                                  " cannot reach output grid: remaining reduction " + std::to_string(factor) +
                                  " is not a power of two");
    }
    strides[s] = 2;
    factor /= 2;
  }
  if (factor > 1) {
    throw std::invalid_argument("backbone: stage1 cannot reach output grid " + std::to_string(config.output_grid) +
                                ": needs " + std::to_string(factor) + "x more reduction than the stages provide");
  }
  return strides;
}

template <typename T>
Backbone<T>::Backbone(BackboneConfig config, nn::RngStream& rng) : config_(std::move(config)) {
  const auto strides = stage_strides(config_);
  const std::size_t k = config_.stem_kernel;
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t ks) {
    return params_.add(name, nn::he_normal<T>({out, in, ks, ks}, in * ks * ks, rng));
  };
  auto norm = [&](const std::string& name, std::size_t ch) {
    return Norm{params_.add(name + ".gamma", nn::Tensor<T>({ch}, T(1))),
                params_.add(name + ".beta", nn::Tensor<T>({ch}, T(0)))};
  };

  stem_ = conv("backbone.conv1.weight", config_.widths[0], config_.input_channels, k);
  stem_norm_ = norm("backbone.conv1.norm", config_.widths[0]);

  std::size_t in_ch = config_.widths[0];
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const std::size_t width = config_.widths[s];
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string prefix = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      Block blk;
      blk.stride = b == 0 ? strides[s] : 1;
      blk.conv1 = conv(prefix + ".conv1.weight", width, in_ch, 3);
      blk.norm1 = norm(prefix + ".norm1", width);
      blk.conv2 = conv(prefix + ".conv2.weight", width, width, 3);
      blk.norm2 = norm(prefix + ".norm2", width);
      if (blk.stride != 1 || in_ch != width) {
        blk.proj = conv(prefix + ".shortcut.weight", width, in_ch, 1);
        blk.proj_norm = norm(prefix + ".shortcut.norm", width);
      }
      blocks_.push_back(std::move(blk));
      in_ch = width;
    }
  }
}

template <typename T>
nn::Var<T> Backbone<T>::normalize(const nn::Var<T>& x, const Norm& n) const {
  return nn::channel_norm(x, n.gamma, n.beta);
}

template <typename T>
nn::Var<T> Backbone<T>::forward(const nn::Var<T>& frames) const {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.input_side ||
      s[3] != config_.input_side) {
    throw nn::ShapeError("backbone", s,
                         {0, config_.input_channels, config_.input_side, config_.input_side});
  }
  const std::size_t pad = config_.stem_kernel / 2;
  auto x = nn::relu(normalize(nn::conv2d(frames, stem_, 2, pad), stem_norm_));
  for (const auto& blk : blocks_) {
    auto y = nn::relu(normalize(nn::conv2d(x, blk.conv1, blk.stride, 1), blk.norm1));
    y = normalize(nn::conv2d(y, blk.conv2, 1, 1), blk.norm2);
    auto shortcut = blk.proj ? normalize(nn::conv2d(x, blk.proj, blk.stride, 0), blk.proj_norm) : x;
    x = nn::relu(nn::add(y, shortcut));
  }
  return x;
}

template <typename T>
void Backbone<T>::save(const std::filesystem::path& path) const {
  nn::save_weights(params_, path);
}

template <typename T>
void Backbone<T>::load_weights(const std::filesystem::path& path) {
  nn::load_weights(params_, path);
}

template class Backbone<float>;
template class Backbone<double>;
template class Backbone<long double>;

}  // namespace akmnet::backbone
