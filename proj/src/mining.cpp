#include "akmnet/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "akmnet/ops.hpp"

namespace akmnet::mining {

template <typename T>
AkmParams<T> AkmParams<T>::create(std::size_t channels, nn::RngStream& rng, nn::ParameterSet<T>& registry,
                                  AkmConfig config) {
  AkmParams p;
  p.attention = registry.add("akm.attention.weight", nn::he_normal<T>({channels, 1}, channels, rng));
  p.config = config;
  return p;
}

Binarization binarize(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("binarize: empty score vector");
  Binarization b;
  const double total = nn::sorted_sum(std::vector<double>(scores.begin(), scores.end()));
  // Rounding can put the mean of equal scores just below them.
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  b.threshold = std::clamp(total / static_cast<double>(scores.size()), *lo, *hi);
  b.mask.assign(scores.size(), 0);
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (scores[t] > b.threshold) {
      b.mask[t] = 1;
      b.selected.push_back(t);
    }
  }
  if (b.selected.empty()) {
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    b.mask[best] = 1;
    b.selected.push_back(best);
    b.fallback = true;
  }
  return b;
}

std::vector<std::size_t> SelectionResult::key_indices() const {
  std::vector<std::size_t> out;
  out.reserve(selected.size());
  for (auto s : selected) out.push_back(s + 1);
  return out;
}

std::size_t SelectionResult::max_key() const {
  if (selected.empty()) throw std::logic_error("selection: no key frames");
  if (beta.size() != mask.size()) throw std::logic_error("selection: no frame scores");
  std::size_t best = selected.front();
  for (auto s : selected) {
    if (beta[s] > beta[best]) best = s;
  }
  return best;
}

double SelectionResult::boundary_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (double b : beta) m = std::min(m, std::abs(b - threshold));
  return m;
}

void RoutingAudit::reset() {
  passes = 0;
  frame_violations = 0;
  gate_violations = 0;
}

RoutingAudit& routing_audit() {
  static RoutingAudit audit;
  return audit;
}

template <typename T>
nn::Var<T> pool_spatial(const nn::Var<T>& features) {
  return nn::spatial_mean(features);
}

template <typename T>
nn::Var<T> local_attention(const nn::Var<T>& pooled, const nn::Var<T>& attention) {
  return nn::sigmoid(nn::row_dot(pooled, nn::reshape(attention, {attention.shape().at(0)})));
}

template <typename T>
nn::Var<T> global_aggregate(const nn::Var<T>& pooled, const nn::Var<T>& alpha) {
  if (pooled.shape().size() != 2 || alpha.shape() != nn::Shape{pooled.shape()[0]}) {
    throw nn::ShapeError("global_aggregate", pooled.shape(), alpha.shape());
  }
  return nn::weighted_row_sum(pooled, alpha);
}

template <typename T>
nn::Var<T> correlate(const nn::Var<T>& pooled, const nn::Var<T>& global, double eps) {
  return nn::cosine_similarity(pooled, global, static_cast<T>(eps));
}

namespace {
template <typename T>
bool is_positive_zero(T v) {
  // Only +0 compares equal to zero without a sign bit.
  return v == T(0) && !std::signbit(v);
}
}  // namespace

template <typename T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> selection_backward(const nn::Tensor<T>& key_grad, const nn::Tensor<T>& features,
                                                          const Binarization& selection, std::span<const T> scores,
                                                          bool gate_gradient) {
  const std::size_t frames = features.shape().at(0);
  const std::size_t stride = features.size() / frames;
  if (key_grad.shape().at(0) != selection.count() || key_grad.size() != selection.count() * stride) {
    throw nn::ShapeError("selection_backward", key_grad.shape(), features.shape());
  }
  if (scores.size() != frames) throw nn::ShapeError("selection_backward", features.shape(), {scores.size()});

  nn::Tensor<T> dfeatures(features.shape(), T(0));
  nn::Tensor<T> dscores({frames}, T(0));
  for (std::size_t n = 0; n < selection.count(); ++n) {
    const std::size_t t = selection.selected[n];
    const T* up = key_grad.data() + n * stride;
    const T* src = features.data() + t * stride;
    T* dst = dfeatures.data() + t * stride;
    T gate = 0;
    for (std::size_t i = 0; i < stride; ++i) {
      dst[i] = up[i];
      gate += up[i] * src[i];
    }
    // The gate path exists only where the score strictly exceeds the mean;
    // in the fallback no score does.
    if (gate_gradient && !selection.fallback && static_cast<double>(scores[t]) > selection.threshold) {
      dscores[t] = gate;
    }
  }
  return {std::move(dfeatures), std::move(dscores)};
}

template <typename T>
nn::Var<T> gather_key_frames(const nn::Var<T>& features, const nn::Var<T>& scores, const Binarization& selection,
                             bool gate_gradient) {
  const auto& fs = features.shape();
  if (fs.empty() || scores.shape() != nn::Shape{fs[0]} || selection.mask.size() != fs[0]) {
    throw nn::ShapeError("gather_key_frames", fs, scores.shape());
  }
  if (selection.selected.empty()) throw std::invalid_argument("gather_key_frames: empty selection");
  const std::size_t stride = features.size() / fs[0];
  nn::Shape out_shape = fs;
  out_shape[0] = selection.count();
  nn::Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < selection.count(); ++n) {
    const T* src = features.value().data() + selection.selected[n] * stride;
    std::copy(src, src + stride, out.data() + n * stride);
  }
  return nn::make_op<T>("key_frame_select", std::move(out), {features, scores},
                        [selection, gate_gradient, stride](nn::Node<T>& self) {
                          const auto& feats = self.inputs[0]->value;
                          const auto& sc = self.inputs[1]->value;
                          auto [dfeat, dscore] =
                              selection_backward<T>(self.grad, feats, selection, sc.values(), gate_gradient);

                          auto& audit = routing_audit();
                          ++audit.passes;
                          for (std::size_t t = 0; t < sc.size(); ++t) {
                            if (selection.mask[t]) continue;
                            for (std::size_t i = 0; i < stride; ++i) {
                              if (!is_positive_zero(dfeat[t * stride + i])) {
                                ++audit.frame_violations;
                                break;
                              }
                            }
                            if (!is_positive_zero(dscore[t])) ++audit.gate_violations;
                          }

                          if (nn::Tensor<T>* g = self.input_grad(0)) {
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += dfeat[i];
                          }
                          if (nn::Tensor<T>* g = self.input_grad(1)) {
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += dscore[i];
                          }
                        });
}

template <typename T>
nn::Var<T> relaxed_selection(const nn::Var<T>& scores, const Binarization& selection) {
  nn::Tensor<T> mask(scores.shape());
  for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = selection.mask.at(t) ? T(1) : T(0);
  return nn::mul(scores, nn::constant(std::move(mask)));
}

template <typename T>
nn::Var<T> sparsity_loss(const nn::Var<T>& relaxed) {
  return nn::relu(nn::add_scalar(nn::sum(relaxed), T(-1)));
}

template <typename T>
nn::Var<T> margin_loss(const nn::Var<T>& scores, const Binarization& selection, double margin) {
  const std::size_t frames = scores.size();
  if (selection.mask.size() != frames || selection.selected.empty()) {
    throw std::invalid_argument("margin_loss: selection does not match the scores");
  }
  const std::size_t selected = selection.count();
  const std::size_t unselected = frames - selected;
  // Each group mean is an order-independent sum over the count, clamped into
  // the group's range, so mean(selected) >= mean(unselected) holds exactly.
  std::vector<T> in, out;
  for (std::size_t t = 0; t < frames; ++t) (selection.mask[t] ? in : out).push_back(scores.value()[t]);
  const auto group_mean = [](const std::vector<T>& v) {
    if (v.empty()) return T(0);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return std::clamp(nn::sorted_sum(v) / static_cast<T>(v.size()), *lo, *hi);
  };
  const T value = static_cast<T>(margin) - (group_mean(in) - group_mean(out));
  return nn::make_op<T>("mean_margin", nn::Tensor<T>::scalar(value), {scores},
                        [selection, selected, unselected](nn::Node<T>& self) {
                          nn::Tensor<T>* g = self.input_grad(0);
                          if (!g) return;
                          const T up = self.grad[0];
                          for (std::size_t t = 0; t < g->size(); ++t) {
                            (*g)[t] += selection.mask[t] ? -up / static_cast<T>(selected)
                                                         : up / static_cast<T>(unselected);
                          }
                        });
}

template <typename T>
nn::Var<T> gsmmm_loss(const nn::Var<T>& sparsity, const nn::Var<T>& margin_term, const AkmConfig& config) {
  return nn::add(nn::scale(sparsity, static_cast<T>(config.lambda_gs)),
                 nn::scale(margin_term, static_cast<T>(config.lambda_mmm)));
}

namespace {
template <typename T>
std::vector<double> to_double(const nn::Var<T>& v) {
  return {v.value().values().begin(), v.value().values().end()};
}
}  // namespace

template <typename T>
SparseSelection<T> sparse_select(const nn::Var<T>& features, const nn::Var<T>& scores, const AkmConfig& config) {
  SparseSelection<T> out;
  const auto values = to_double(scores);
  out.selection = binarize(values);
  out.key_frames = gather_key_frames(features, scores, out.selection, config.gate_gradient);
  out.relaxed = relaxed_selection(scores, out.selection);
  out.sparsity = sparsity_loss(out.relaxed);
  out.margin = margin_loss(scores, out.selection, config.margin);
  out.loss = gsmmm_loss(out.sparsity, out.margin, config);
  return out;
}

template <typename T>
SelectionResult make_result(const nn::Var<T>* alpha, const nn::Var<T>* global, const nn::Var<T>& scores,
                            const Binarization& selection) {
  SelectionResult r;
  if (alpha) r.alpha = to_double(*alpha);
  if (global) r.global = to_double(*global);
  r.beta = to_double(scores);
  r.mask = selection.mask;
  r.selected = selection.selected;
  r.threshold = selection.threshold;
  r.fallback = selection.fallback;
  r.relaxed.assign(r.beta.size(), 0.0);
  for (auto t : selection.selected) r.relaxed[t] = r.beta[t];
  return r;
}

template <typename T>
MineOutput<T> mine(const nn::Var<T>& features, const AkmParams<T>& params) {
  MineOutput<T> out;
  out.pooled = pool_spatial(features);
  out.alpha = local_attention(out.pooled, params.attention);
  out.global = global_aggregate(out.pooled, out.alpha);
  out.beta = correlate(out.pooled, out.global, params.config.cosine_eps);
  out.sparse = sparse_select(features, out.beta, params.config);
  out.result = make_result(&out.alpha, &out.global, out.beta, out.sparse.selection);

  const auto& pooled = out.pooled.value();
  const std::size_t channels = pooled.shape()[1];
  for (std::size_t t = 0; t < pooled.shape()[0]; ++t) {
    bool zero = true;
    for (std::size_t c = 0; c < channels && zero; ++c) zero = pooled[t * channels + c] == T(0);
    out.result.zero_norm_frames += zero;
  }
  return out;
}

#define AKMNET_MINING(T)                                                                                        \
  template struct AkmParams<T>;                                                                                 \
  template nn::Var<T> pool_spatial<T>(const nn::Var<T>&);                                                       \
  template nn::Var<T> local_attention<T>(const nn::Var<T>&, const nn::Var<T>&);                                 \
  template nn::Var<T> global_aggregate<T>(const nn::Var<T>&, const nn::Var<T>&);                                \
  template nn::Var<T> correlate<T>(const nn::Var<T>&, const nn::Var<T>&, double);                               \
  template nn::Var<T> gather_key_frames<T>(const nn::Var<T>&, const nn::Var<T>&, const Binarization&, bool);    \
  template std::pair<nn::Tensor<T>, nn::Tensor<T>> selection_backward<T>(                                       \
      const nn::Tensor<T>&, const nn::Tensor<T>&, const Binarization&, std::span<const T>, bool);               \
  template nn::Var<T> relaxed_selection<T>(const nn::Var<T>&, const Binarization&);                             \
  template nn::Var<T> sparsity_loss<T>(const nn::Var<T>&);                                                      \
  template nn::Var<T> margin_loss<T>(const nn::Var<T>&, const Binarization&, double);                           \
  template nn::Var<T> gsmmm_loss<T>(const nn::Var<T>&, const nn::Var<T>&, const AkmConfig&);                    \
  template SparseSelection<T> sparse_select<T>(const nn::Var<T>&, const nn::Var<T>&, const AkmConfig&);         \
  template SelectionResult make_result<T>(const nn::Var<T>*, const nn::Var<T>*, const nn::Var<T>&,              \
                                          const Binarization&);                                                 \
  template MineOutput<T> mine<T>(const nn::Var<T>&, const AkmParams<T>&);

AKMNET_MINING(float)
AKMNET_MINING(double)
AKMNET_MINING(long double)

}  // namespace akmnet::mining
