#include "akmnet/temporal.hpp"

#include <stdexcept>
#include <string>

#include "akmnet/ops.hpp"

namespace akmnet::temporal {

namespace {

template <typename T>
GruCell<T> make_cell(const std::string& prefix, std::size_t input, std::size_t hidden, nn::RngStream& rng,
                     nn::ParameterSet<T>& registry) {
  const std::size_t stacked = hidden + input;
  auto weight = [&](const char* gate) {
    // Glorot-style scale keeps the gates away from saturation at init.
    nn::Tensor<T> w = nn::he_normal<T>({stacked, hidden}, stacked + hidden, rng);
    return registry.add(prefix + "." + gate + ".weight", std::move(w));
  };
  auto bias = [&](const char* gate) { return registry.add(prefix + "." + gate + ".bias", nn::Tensor<T>({hidden}, T(0))); };
  GruCell<T> c;
  c.update_w = weight("update");
  c.update_b = bias("update");
  c.reset_w = weight("reset");
  c.reset_b = bias("reset");
  c.candidate_w = weight("candidate");
  c.candidate_b = bias("candidate");
  c.input = input;
  c.hidden = hidden;
  return c;
}

}  // namespace

template <typename T>
GruParams<T> GruParams<T>::create(std::size_t input, std::size_t hidden, nn::RngStream& rng,
                                  nn::ParameterSet<T>& registry) {
  GruParams p;
  p.input = input;
  p.hidden = hidden;
  for (std::size_t layer = 0; layer < 2; ++layer) {
    const std::size_t in = layer == 0 ? input : 2 * hidden;
    for (std::size_t dir = 0; dir < 2; ++dir) {
      const std::string prefix =
          "gru.layer" + std::to_string(layer + 1) + (dir == 0 ? ".forward" : ".backward");
      p.cells[layer][dir] = make_cell<T>(prefix, in, hidden, rng, registry);
    }
  }
  return p;
}

template <typename T>
nn::Var<T> gru_step(const nn::Var<T>& h_prev, const nn::Var<T>& x, const GruCell<T>& cell) {
  if (h_prev.shape().size() != 2 || h_prev.shape()[1] != cell.hidden) {
    throw nn::ShapeError("gru_step", h_prev.shape(), {0, cell.hidden});
  }
  if (x.shape().size() != 2 || x.shape()[1] != cell.input || x.shape()[0] != h_prev.shape()[0]) {
    throw nn::ShapeError("gru_step", x.shape(), {h_prev.shape()[0], cell.input});
  }
  auto stacked = nn::concat<T>({h_prev, x}, 1);
  auto z = nn::sigmoid(nn::affine(stacked, cell.update_w, cell.update_b));
  auto r = nn::sigmoid(nn::affine(stacked, cell.reset_w, cell.reset_b));
  auto candidate = nn::tanh(nn::affine(nn::concat<T>({nn::mul(r, h_prev), x}, 1), cell.candidate_w, cell.candidate_b));
  // (1 - z) * h + z * h~ == h + z * (h~ - h)
  return nn::add(h_prev, nn::mul(z, nn::sub(candidate, h_prev)));
}

namespace {

// Runs one bidirectional layer over inputs[n] ([P, in] each) and returns the
// per-step concatenated outputs [P, 2*hidden].
template <typename T>
std::vector<nn::Var<T>> bidirectional(const std::vector<nn::Var<T>>& inputs, const std::array<GruCell<T>, 2>& cells) {
  const std::size_t steps = inputs.size();
  const std::size_t positions = inputs.front().shape()[0];
  std::vector<nn::Var<T>> fwd(steps), bwd(steps);
  auto h = nn::constant(nn::Tensor<T>({positions, cells[0].hidden}, T(0)));
  for (std::size_t n = 0; n < steps; ++n) fwd[n] = h = gru_step(h, inputs[n], cells[0]);
  h = nn::constant(nn::Tensor<T>({positions, cells[1].hidden}, T(0)));
  for (std::size_t n = steps; n-- > 0;) bwd[n] = h = gru_step(h, inputs[n], cells[1]);
  std::vector<nn::Var<T>> out(steps);
  for (std::size_t n = 0; n < steps; ++n) out[n] = nn::concat<T>({fwd[n], bwd[n]}, 1);
  return out;
}

}  // namespace

template <typename T>
nn::Var<T> pixelwise_encode(const nn::Var<T>& key_frames, const GruParams<T>& params) {
  const auto& s = key_frames.shape();
  if (s.size() != 4 || s[1] != params.input) {
    throw nn::ShapeError("pixelwise_encode", s, {0, params.input, 0, 0});
  }
  const std::size_t steps = s[0], channels = s[1], positions = s[2] * s[3];
  // [N, C, P] -> [N, P, C]: row p of step n is the feature pixel at p.
  auto sequence = nn::transpose_last(nn::reshape(key_frames, {steps, channels, positions}));
  std::vector<nn::Var<T>> inputs(steps);
  for (std::size_t n = 0; n < steps; ++n) {
    inputs[n] = nn::reshape(nn::gather(sequence, {n}), {positions, channels});
  }
  auto layer1 = bidirectional(inputs, params.cells[0]);
  auto layer2 = bidirectional(layer1, params.cells[1]);
  auto total = layer2[0];
  for (std::size_t n = 1; n < steps; ++n) total = nn::add(total, layer2[n]);
  auto averaged = nn::scale(total, T(1) / static_cast<T>(steps));  // [P, 2*hidden]
  return nn::reshape(nn::transpose_last(averaged), {params.output_channels(), s[2], s[3]});
}

template <typename T>
ClassifierHead<T> ClassifierHead<T>::create(std::size_t features, std::size_t classes, nn::RngStream& rng,
                                            nn::ParameterSet<T>& registry, double dropout) {
  ClassifierHead h;
  h.weight = registry.add("head.weight", nn::he_normal<T>({features, classes}, features, rng));
  h.bias = registry.add("head.bias", nn::Tensor<T>({classes}, T(0)));
  h.classes = classes;
  h.dropout = dropout;
  return h;
}

template <typename T>
nn::Var<T> classify_logits(const nn::Var<T>& g, const ClassifierHead<T>& head, Mode mode, nn::RngStream& rng) {
  const std::size_t features = g.size();
  if (head.weight.shape()[0] != features) throw nn::ShapeError("classify", g.shape(), head.weight.shape());
  auto flat = nn::reshape(g, {1, features});
  if (mode == Mode::train && head.dropout > 0.0) {
    flat = nn::mul(flat, nn::constant(nn::dropout_mask<T>({1, features}, head.dropout, rng)));
  }
  return nn::affine(flat, head.weight, head.bias);
}

template <typename T>
nn::Var<T> classify(const nn::Var<T>& g, const ClassifierHead<T>& head, Mode mode, nn::RngStream& rng) {
  return nn::reshape(nn::softmax(classify_logits(g, head, mode, rng)), {head.classes});
}

template <typename T>
nn::Var<T> classification_loss(const nn::Var<T>& logits, std::size_t label) {
  const std::size_t classes = logits.shape().back();
  if (label >= classes) {
    throw std::out_of_range("classification_loss: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")");
  }
  nn::Tensor<T> onehot(logits.shape(), T(0));
  onehot[label] = T(-1);
  return nn::sum(nn::mul(nn::log_softmax(logits), nn::constant(std::move(onehot))));
}

template <typename T>
nn::Var<T> total_loss(const nn::Var<T>& classification, const nn::Var<T>& gsmmm) {
  return nn::add(classification, gsmmm);
}

#define AKMNET_TEMPORAL(T)                                                                                   \
  template struct GruParams<T>;                                                                              \
  template struct ClassifierHead<T>;                                                                         \
  template nn::Var<T> gru_step<T>(const nn::Var<T>&, const nn::Var<T>&, const GruCell<T>&);                  \
  template nn::Var<T> pixelwise_encode<T>(const nn::Var<T>&, const GruParams<T>&);                           \
  template nn::Var<T> classify_logits<T>(const nn::Var<T>&, const ClassifierHead<T>&, Mode, nn::RngStream&); \
  template nn::Var<T> classify<T>(const nn::Var<T>&, const ClassifierHead<T>&, Mode, nn::RngStream&);       \
  template nn::Var<T> classification_loss<T>(const nn::Var<T>&, std::size_t);                                \
  template nn::Var<T> total_loss<T>(const nn::Var<T>&, const nn::Var<T>&);

AKMNET_TEMPORAL(float)
AKMNET_TEMPORAL(double)
AKMNET_TEMPORAL(long double)

}  // namespace akmnet::temporal
