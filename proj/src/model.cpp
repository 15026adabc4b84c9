#include "akmnet/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "akmnet/ops.hpp"

namespace akmnet::model {

std::string VariantSpec::name() const {
  switch (kind) {
    case VariantKind::s123: return "s123";
    case VariantKind::s12: return "s12";
    case VariantKind::s13: return "s13";
    case VariantKind::s23: return "s23";
    case VariantKind::va_all: return "va-all";
    case VariantKind::va_norm: return "va-norm" + std::to_string(length);
    case VariantKind::va_random: return "va-random";
    case VariantKind::va_last10: return "va-last10";
  }
  return "unknown";
}

bool VariantSpec::uses_mining() const {
  return kind == VariantKind::s123 || kind == VariantKind::s12 || kind == VariantKind::s13 || kind == VariantKind::s23;
}

VariantSpec parse_variant(const std::string& name) {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  VariantSpec v;
  if (key == "s123" || key == "akm") {
    v.kind = VariantKind::s123;
  } else if (key == "s12") {
    v.kind = VariantKind::s12;
  } else if (key == "s13") {
    v.kind = VariantKind::s13;
  } else if (key == "s23") {
    v.kind = VariantKind::s23;
  } else if (key == "va-all") {
    v.kind = VariantKind::va_all;
  } else if (key == "va-random") {
    v.kind = VariantKind::va_random;
  } else if (key == "va-last10") {
    v.kind = VariantKind::va_last10;
  } else if (key.rfind("va-norm", 0) == 0 && key.size() > 7) {
    const std::string digits = key.substr(7);
    if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        digits.size() > 6) {
      throw std::invalid_argument("variant: bad va-norm length in '" + name + "'");
    }
    v.kind = VariantKind::va_norm;
    v.length = std::stoul(digits);
    if (v.length < 2) throw std::invalid_argument("variant: va-norm length must be >= 2");
  } else {
    throw std::invalid_argument("variant: unknown variant '" + name + "'");
  }
  return v;
}

std::vector<std::size_t> fixed_selection(const VariantSpec& variant, std::size_t frames, const std::string& clip_id,
                                         nn::RngStream& rng, bool* clamped) {
  if (frames == 0) throw std::invalid_argument("fixed_selection: empty clip");
  if (clamped) *clamped = false;
  std::vector<std::size_t> all(frames);
  std::iota(all.begin(), all.end(), std::size_t{0});
  switch (variant.kind) {
    case VariantKind::va_all:
    case VariantKind::va_norm:
      return all;
    case VariantKind::va_last10: {
      const std::size_t keep = std::min<std::size_t>(10, frames);
      return {all.end() - static_cast<std::ptrdiff_t>(keep), all.end()};
    }
    case VariantKind::va_random: {
      std::size_t count = variant.count;
      if (auto it = variant.clip_counts.find(clip_id); it != variant.clip_counts.end()) count = it->second;
      if (count == 0) throw std::invalid_argument("va-random: no frame count for clip '" + clip_id + "'");
      if (count > frames) {
        count = frames;
        if (clamped) *clamped = true;
      }
      // Partial Fisher-Yates, then restore temporal order.
      for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.index(frames - i)]);
      all.resize(count);
      std::sort(all.begin(), all.end());
      return all;
    }
    default:
      throw std::invalid_argument("fixed_selection: variant '" + variant.name() + "' selects with the AKM module");
  }
}

template <typename T>
nn::Var<T> extract_spatial_features(const data::Clip& clip, const backbone::Backbone<T>& net) {
  clip.validate();
  const auto& cfg = net.config();
  if (clip.channels() != cfg.input_channels || clip.side() != cfg.input_side) {
    throw nn::ShapeError("extract_spatial_features", clip.frames.front().shape(),
                         {cfg.input_channels, cfg.input_side, cfg.input_side});
  }
  return net.forward(nn::constant(nn::tensor_cast<T>(clip.stacked())));
}

template <typename T>
AkmNet<T>::AkmNet(ModelConfig config, nn::RngStream& rng) : config_(std::move(config)), backbone_(config_.backbone, rng) {
  if (config_.classes < 1) throw std::invalid_argument("model: class count must be positive");
  params_.append(backbone_.parameters());
  const std::size_t channels = config_.backbone.feature_channels();
  const auto kind = config_.variant.kind;
  if (kind == VariantKind::s123 || kind == VariantKind::s12 || kind == VariantKind::s13) {
    akm_ = mining::AkmParams<T>::create(channels, rng, params_, config_.akm);
  }
  gru_ = temporal::GruParams<T>::create(channels, config_.gru_hidden, rng, params_);
  const std::size_t grid = config_.backbone.output_grid;
  head_ = temporal::ClassifierHead<T>::create(gru_.output_channels() * grid * grid, config_.classes, rng, params_,
                                             config_.dropout);
}

namespace {

template <typename T>
nn::Var<T> zero_scalar() {
  return nn::constant(nn::Tensor<T>::scalar(T(0)));
}

mining::SelectionResult identity_result(std::size_t frames, const std::vector<std::size_t>& selected) {
  mining::SelectionResult r;
  r.mask.assign(frames, 0);
  for (auto t : selected) r.mask[t] = 1;
  r.selected = selected;
  return r;
}

}  // namespace

template <typename T>
ForwardOutput<T> AkmNet<T>::forward(const data::Clip& input, std::optional<std::size_t> label, temporal::Mode mode,
                                    nn::RngStream& rng) const {
  ForwardOutput<T> out;
  const auto& variant = config_.variant;
  const data::Clip* clip = &input;
  data::Clip resampled;
  if (variant.kind == VariantKind::va_norm) {
    resampled = data::temporal_resample(input, variant.length);
    clip = &resampled;
  }
  clip->validate();
  const std::size_t frames = clip->length();
  out.frames = frames;
  out.sparsity = zero_scalar<T>();
  out.margin = zero_scalar<T>();
  out.gsmmm = zero_scalar<T>();

  nn::Var<T> sequence;
  if (variant.uses_mining()) {
    auto features = extract_spatial_features(*clip, backbone_);
    const auto& akm_config = config_.akm;
    switch (variant.kind) {
      case VariantKind::s123: {
        auto mined = mining::mine(features, *akm_);
        sequence = mined.sparse.key_frames;
        out.sparsity = mined.sparse.sparsity;
        out.margin = mined.sparse.margin;
        out.gsmmm = mined.sparse.loss;
        out.selection = std::move(mined.result);
        break;
      }
      case VariantKind::s12: {
        auto pooled = mining::pool_spatial(features);
        auto alpha = mining::local_attention(pooled, akm_->attention);
        auto global = mining::global_aggregate(pooled, alpha);
        auto beta = mining::correlate(pooled, global, akm_config.cosine_eps);
        sequence = nn::scale_leading(features, beta);
        std::vector<std::size_t> all(frames);
        std::iota(all.begin(), all.end(), std::size_t{0});
        mining::Binarization everything{std::vector<std::uint8_t>(frames, 1), all, 0.0, false};
        out.selection = mining::make_result(&alpha, &global, beta, everything);
        double total = 0;
        for (double b : out.selection.beta) total += b;
        out.selection.threshold = total / static_cast<double>(frames);
        break;
      }
      case VariantKind::s13: {
        auto pooled = mining::pool_spatial(features);
        auto alpha = mining::local_attention(pooled, akm_->attention);
        auto sparse = mining::sparse_select(features, alpha, akm_config);
        sequence = sparse.key_frames;
        out.sparsity = sparse.sparsity;
        out.margin = sparse.margin;
        out.gsmmm = sparse.loss;
        out.selection = mining::make_result<T>(&alpha, nullptr, alpha, sparse.selection);
        break;
      }
      case VariantKind::s23: {
        auto pooled = mining::pool_spatial(features);
        auto alpha = nn::constant(nn::Tensor<T>({frames}, T(1) / static_cast<T>(frames)));
        auto global = mining::global_aggregate(pooled, alpha);
        auto beta = mining::correlate(pooled, global, akm_config.cosine_eps);
        auto sparse = mining::sparse_select(features, beta, akm_config);
        sequence = sparse.key_frames;
        out.sparsity = sparse.sparsity;
        out.margin = sparse.margin;
        out.gsmmm = sparse.loss;
        out.selection = mining::make_result(&alpha, &global, beta, sparse.selection);
        break;
      }
      default:
        break;
    }
  } else {
    auto selected = fixed_selection(variant, frames, input.id, rng, &out.clamped);
    // Frames are independent through the backbone, so only the kept ones
    // are computed.
    data::Clip kept;
    kept.id = clip->id;
    for (auto t : selected) kept.frames.push_back(clip->frames[t]);
    sequence = extract_spatial_features(kept, backbone_);
    out.selection = identity_result(frames, selected);
  }

  auto g = temporal::pixelwise_encode(sequence, gru_);
  out.logits = temporal::classify_logits(g, head_, mode, rng);
  const auto probs = nn::softmax(out.logits).value();
  out.probabilities.assign(probs.values().begin(), probs.values().end());
  out.classification = label ? temporal::classification_loss(out.logits, *label) : zero_scalar<T>();
  out.loss = temporal::total_loss(out.classification, out.gsmmm);
  return out;
}

template <typename T>
std::vector<double> AkmNet<T>::predict(const data::Clip& clip, nn::RngStream& rng) const {
  const std::size_t samples =
      config_.variant.kind == VariantKind::va_random ? std::max<std::size_t>(1, config_.variant.eval_samples) : 1;
  std::vector<double> mean(config_.classes, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto out = forward(clip, std::nullopt, temporal::Mode::eval, rng);
    for (std::size_t m = 0; m < mean.size(); ++m) mean[m] += out.probabilities[m];
  }
  for (auto& p : mean) p /= static_cast<double>(samples);
  return mean;
}

template <typename T>
void AkmNet<T>::save(const std::filesystem::path& path) const {
  nn::save_weights(params_, path);
}

template <typename T>
void AkmNet<T>::load(const std::filesystem::path& path) {
  nn::load_weights(params_, path);
}

template class AkmNet<float>;
template class AkmNet<double>;
template class AkmNet<long double>;
template nn::Var<float> extract_spatial_features<float>(const data::Clip&, const backbone::Backbone<float>&);
template nn::Var<double> extract_spatial_features<double>(const data::Clip&, const backbone::Backbone<double>&);
template nn::Var<long double> extract_spatial_features<long double>(const data::Clip&,
                                                                   const backbone::Backbone<long double>&);

}  // namespace akmnet::model
