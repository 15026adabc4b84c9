#pragma once

#include <array>
#include <cstddef>

#include "akmnet/graph.hpp"
#include "akmnet/parameters.hpp"

// Pixel-wise bidirectional GRU encoding of key-frame features and the
// softmax classification head.
namespace akmnet::temporal {

/// Gate weights of one GRU direction, acting on the stacked row [h, x]:
/// z = sigmoid([h, x] Wz + bz), r = sigmoid([h, x] Wr + br),
/// h~ = tanh([r * h, x] Wh + bh), h' = (1 - z) * h + z * h~.
/// The bias rows are the weights of an appended constant input coordinate.
template <typename T>
struct GruCell {
  nn::Var<T> update_w, update_b;
  nn::Var<T> reset_w, reset_b;
  nn::Var<T> candidate_w, candidate_b;
  std::size_t input = 0, hidden = 0;
};

/// Two stacked bidirectional layers; `cells[layer][0]` runs forward in time,
/// `cells[layer][1]` backward. One parameter set serves every spatial
/// position.
template <typename T>
struct GruParams {
  std::array<std::array<GruCell<T>, 2>, 2> cells;
  std::size_t input = 0, hidden = 0;

  static GruParams create(std::size_t input, std::size_t hidden, nn::RngStream& rng,
                          nn::ParameterSet<T>& registry);
  std::size_t output_channels() const { return 2 * hidden; }
};

/// One GRU update on a batch of rows: h_prev[P,hidden], x[P,input].
template <typename T>
nn::Var<T> gru_step(const nn::Var<T>& h_prev, const nn::Var<T>& x, const GruCell<T>& cell);

/// key_frames[N,C,W,H] -> G[2*hidden, W, H]. Each of the W*H positions runs
/// its own recurrence over the N key frames with zero initial state; layer-2
/// per-step outputs are averaged over time.
template <typename T>
nn::Var<T> pixelwise_encode(const nn::Var<T>& key_frames, const GruParams<T>& params);

enum class Mode { train, eval };

template <typename T>
struct ClassifierHead {
  nn::Var<T> weight;  // [features, classes]
  nn::Var<T> bias;    // [classes]
  std::size_t classes = 0;
  double dropout = 0.5;

  static ClassifierHead create(std::size_t features, std::size_t classes, nn::RngStream& rng,
                               nn::ParameterSet<T>& registry, double dropout = 0.5);
};

/// Flattened G -> dropout (train mode only) -> affine, as logits [1, M].
template <typename T>
nn::Var<T> classify_logits(const nn::Var<T>& g, const ClassifierHead<T>& head, Mode mode, nn::RngStream& rng);

/// Softmax class probabilities [M].
template <typename T>
nn::Var<T> classify(const nn::Var<T>& g, const ClassifierHead<T>& head, Mode mode, nn::RngStream& rng);

/// -log p[label] computed from logits [1, M]. Throws when label is out of range.
template <typename T>
nn::Var<T> classification_loss(const nn::Var<T>& logits, std::size_t label);

/// Omega = L_c + L_GS-MMM.
template <typename T>
nn::Var<T> total_loss(const nn::Var<T>& classification, const nn::Var<T>& gsmmm);

}  // namespace akmnet::temporal
