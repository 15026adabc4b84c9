#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akmnet/graph.hpp"
#include "akmnet/parameters.hpp"

// Adaptive key-frame mining: local self-attention, global cosine correlation
// and mean-threshold sparse selection, with a straight-through backward for
// the hard selection.
namespace akmnet::mining {

struct AkmConfig {
  double margin = 2.0;      // C in the mean-margin loss
  double lambda_gs = 0.1;   // weight of the global sparsity hinge
  double lambda_mmm = 1.0;  // weight of the mean-margin term
  double cosine_eps = 1e-8;
  /// Route dOmega/dF_key back into the scores (straight-through gate path).
  /// Disabled only when comparing against finite differences, because the
  /// hard forward selection is piecewise constant in the scores.
  bool gate_gradient = true;

  bool operator==(const AkmConfig&) const = default;
};

/// Attention weight vector W as a [C,1] leaf.
template <typename T>
struct AkmParams {
  nn::Var<T> attention;
  AkmConfig config;

  static AkmParams create(std::size_t channels, nn::RngStream& rng, nn::ParameterSet<T>& registry,
                          AkmConfig config = {});
};

/// Hard selection produced by thresholding scores at their mean.
struct Binarization {
  std::vector<std::uint8_t> mask;      // B_t
  std::vector<std::size_t> selected;   // 0-based, strictly increasing
  double threshold = 0.0;              // mean of the scores
  bool fallback = false;               // no score exceeded the mean

  std::size_t count() const { return selected.size(); }
};

/// Strict mean threshold; when nothing exceeds the mean (constant scores or
/// T == 1) the earliest maximal score is selected and `fallback` is set.
Binarization binarize(std::span<const double> scores);

/// Plain-value record of one selection, exportable per clip.
struct SelectionResult {
  std::vector<double> alpha;    // local attention (empty when the variant has none)
  std::vector<double> global;   // aggregated global feature
  std::vector<double> beta;     // scores that were thresholded
  std::vector<double> relaxed;  // beta where selected, else 0
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> selected;  // 0-based
  double threshold = 0.0;
  bool fallback = false;
  std::size_t zero_norm_frames = 0;

  std::size_t frame_count() const { return mask.size(); }
  std::size_t key_count() const { return selected.size(); }
  /// 1-based key-frame indices k_1 < ... < k_N.
  std::vector<std::size_t> key_indices() const;
  /// 0-based position of the highest-scoring selected frame (earliest on ties).
  std::size_t max_key() const;
  /// Smallest |beta_t - mean(beta)|, the distance to a selection change.
  double boundary_margin() const;
};

/// Bit-level audit of the straight-through zero-routing contracts, updated
/// on every backward pass through a key-frame selection.
struct RoutingAudit {
  std::atomic<std::uint64_t> passes{0};
  std::atomic<std::uint64_t> frame_violations{0};
  std::atomic<std::uint64_t> gate_violations{0};
  void reset();
};
RoutingAudit& routing_audit();

// Individual steps (graph level).
template <typename T> nn::Var<T> pool_spatial(const nn::Var<T>& features);
template <typename T> nn::Var<T> local_attention(const nn::Var<T>& pooled, const nn::Var<T>& attention);
template <typename T> nn::Var<T> global_aggregate(const nn::Var<T>& pooled, const nn::Var<T>& alpha);
template <typename T> nn::Var<T> correlate(const nn::Var<T>& pooled, const nn::Var<T>& global, double eps = 1e-8);

/// Order-preserving gather of the selected frames. Forward copies frames
/// unscaled; backward routes dF_key to source frames and, when
/// `gate_gradient`, sends <dF_key[n], F[k_n]> to the score of each frame
/// whose score exceeds the threshold.
template <typename T>
nn::Var<T> gather_key_frames(const nn::Var<T>& features, const nn::Var<T>& scores, const Binarization& selection,
                             bool gate_gradient = true);

/// Straight-through adjoint of the selection, on plain tensors.
/// Returns {dF [T,C,W,H], dscores [T]}.
template <typename T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> selection_backward(const nn::Tensor<T>& key_grad, const nn::Tensor<T>& features,
                                                          const Binarization& selection,
                                                          std::span<const T> scores, bool gate_gradient = true);

/// relaxed_t = score_t where selected, else 0 (differentiable in the scores).
template <typename T> nn::Var<T> relaxed_selection(const nn::Var<T>& scores, const Binarization& selection);
/// max(0, sum(relaxed) - 1)
template <typename T> nn::Var<T> sparsity_loss(const nn::Var<T>& relaxed);
/// C - (mean of selected scores - mean of unselected scores); the unselected
/// mean is 0 when every frame is selected.
template <typename T>
nn::Var<T> margin_loss(const nn::Var<T>& scores, const Binarization& selection, double margin = 2.0);
template <typename T>
nn::Var<T> gsmmm_loss(const nn::Var<T>& sparsity, const nn::Var<T>& margin_term, const AkmConfig& config);

template <typename T>
struct SparseSelection {
  nn::Var<T> key_frames;
  nn::Var<T> relaxed;
  nn::Var<T> sparsity;
  nn::Var<T> margin;
  nn::Var<T> loss;  // lambda_gs * sparsity + lambda_mmm * margin
  Binarization selection;
};

/// Threshold `scores`, gather key frames of `features`, and build the losses.
template <typename T>
SparseSelection<T> sparse_select(const nn::Var<T>& features, const nn::Var<T>& scores, const AkmConfig& config);

template <typename T>
struct MineOutput {
  nn::Var<T> pooled, alpha, global, beta;
  SparseSelection<T> sparse;
  SelectionResult result;
};

/// Full module: pool -> attention -> aggregate -> correlate -> binarize ->
/// gather -> losses.
template <typename T>
MineOutput<T> mine(const nn::Var<T>& features, const AkmParams<T>& params);

/// Fills a SelectionResult from graph values.
template <typename T>
SelectionResult make_result(const nn::Var<T>* alpha, const nn::Var<T>* global, const nn::Var<T>& scores,
                            const Binarization& selection);

}  // namespace akmnet::mining
