#include "akmnet/model_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace akmnet::model {

std::string parameter_group(const std::string& name) {
  for (const char* group : {"backbone", "akm", "gru", "head"}) {
    if (name.rfind(std::string(group) + ".", 0) == 0) return group;
  }
  return "other";
}

double ModelCheckResult::skip_fraction() const {
  const std::size_t total = checked + skipped;
  return total ? static_cast<double>(skipped) / static_cast<double>(total) : 0.0;
}

double ModelCheckResult::worst() const {
  double w = 0.0;
  for (const auto& g : groups) w = std::max(w, g.nan ? std::numeric_limits<double>::infinity() : g.max_rel_error);
  return w;
}

bool ModelCheckResult::passed(const ModelCheckConfig& config) const {
  if (groups.empty() || checked == 0) return false;
  for (const auto& g : groups) {
    if (g.nan || !(g.max_rel_error < config.tolerance) || g.checked == 0) return false;
  }
  return skip_fraction() <= config.max_skip_fraction;
}

ModelConfig micro_model_config(std::size_t channels) {
  ModelConfig c;
  c.backbone.input_side = 8;
  c.backbone.input_channels = 1;
  c.backbone.widths = {4, channels};
  c.backbone.blocks_per_stage = 1;
  c.backbone.output_grid = 2;
  c.backbone.stem_kernel = 3;
  c.classes = 3;
  c.gru_hidden = 3;
  c.dropout = 0.0;
  c.akm.gate_gradient = false;
  return c;
}

AkmNet<double> build_micro_model(const MicroInstance& instance) {
  nn::RngStream rng = nn::RngStream(instance.seed).derive(1);
  return AkmNet<double>(instance.config, rng);
}

AkmNet<long double> build_micro_replica(const MicroInstance& instance, const AkmNet<double>& net) {
  nn::RngStream rng = nn::RngStream(instance.seed).derive(1);
  AkmNet<long double> wide(instance.config, rng);
  const auto& src = net.parameters().entries();
  const auto& dst = wide.parameters().entries();
  if (src.size() != dst.size()) throw std::logic_error("micro replica: parameter lists differ");
  for (std::size_t k = 0; k < src.size(); ++k) {
    const auto& from = src[k].var.value();
    auto& to = dst[k].var.mutable_value();
    if (from.shape() != to.shape() || src[k].name != dst[k].name) {
      throw std::logic_error("micro replica: parameter '" + src[k].name + "' differs");
    }
    for (std::size_t i = 0; i < from.size(); ++i) to[i] = static_cast<long double>(from[i]);
  }
  return wide;
}

MicroInstance draw_micro_instance(std::uint64_t seed, const ModelCheckConfig& config) {
  if (config.min_frames < 1 || config.max_frames < config.min_frames || config.min_channels < 1 ||
      config.max_channels < config.min_channels) {
    throw std::invalid_argument("micro instance: empty frame or channel range");
  }
  for (std::uint64_t attempt = 0;; ++attempt) {
    MicroInstance inst;
    inst.seed = nn::RngStream(seed).derive(attempt).next_u64();
    nn::RngStream rng = nn::RngStream(inst.seed).derive(2);
    const auto frames = static_cast<std::size_t>(
        rng.uniform_int(static_cast<long>(config.min_frames), static_cast<long>(config.max_frames)));
    const auto channels = static_cast<std::size_t>(
        rng.uniform_int(static_cast<long>(config.min_channels), static_cast<long>(config.max_channels)));
    inst.config = micro_model_config(channels);
    inst.clip.id = "micro";
    inst.clip.label = rng.index(inst.config.classes);
    for (std::size_t t = 0; t < frames; ++t) {
      nn::Tensor<float> f({1, 8, 8});
      for (auto& v : f.values()) v = static_cast<float>(rng.uniform());
      inst.clip.frames.push_back(std::move(f));
    }
    const auto net = build_micro_model(inst);
    nn::RngStream unused(0);
    const auto out = net.forward(inst.clip, inst.clip.label, temporal::Mode::eval, unused);
    if (out.selection.boundary_margin() >= 1e-3) return inst;
  }
}

ModelCheckResult check_model_gradients(const ModelCheckConfig& config) {
  ModelCheckResult result;
  std::map<std::string, GroupCheck> groups;
  for (const char* g : {"backbone", "akm", "gru", "head"}) groups[g].group = g;

  for (std::size_t i = 0; i < config.instances; ++i) {
    const auto inst = draw_micro_instance(nn::RngStream(config.seed).derive(i).next_u64(), config);
    const auto net = build_micro_model(inst);
    std::vector<nn::NamedLeaf> leaves;
    for (const auto& e : net.parameters().entries()) leaves.push_back({e.name, e.var});
    auto build = [&]() {
      nn::RngStream unused(0);
      auto out = net.forward(inst.clip, inst.clip.label, temporal::Mode::eval, unused);
      return nn::CheckProbe{out.loss, out.selection.boundary_margin(), out.selection.mask};
    };
    InstanceCheck ic;
    ic.seed = inst.seed;
    ic.frames = inst.clip.length();
    ic.channels = inst.config.backbone.feature_channels();
    {
      nn::RngStream unused(0);
      ic.key_frames = net.forward(inst.clip, inst.clip.label, temporal::Mode::eval, unused).selection.key_count();
    }
    // Exact wide replica for the difference quotients.
    auto wide = build_micro_replica(inst, net);
    std::vector<nn::BasicNamedLeaf<long double>> wide_leaves;
    for (const auto& e : wide.parameters().entries()) wide_leaves.push_back({e.name, e.var});
    auto oracle = [&]() {
      nn::RngStream unused(0);
      auto out = wide.forward(inst.clip, inst.clip.label, temporal::Mode::eval, unused);
      return nn::BasicCheckProbe<long double>{out.loss, out.selection.boundary_margin(), out.selection.mask};
    };
    ic.report = nn::grad_check(build, leaves, oracle, wide_leaves, config.eps);
    for (const auto& p : ic.report.params) {
      auto& g = groups[parameter_group(p.name)];
      g.group = parameter_group(p.name);
      g.checked += p.checked;
      g.skipped += p.skipped;
      g.nan = g.nan || p.nan;
      if (p.max_rel_error > g.max_rel_error) {
        g.max_rel_error = p.max_rel_error;
        g.worst_parameter = p.name;
      }
      result.checked += p.checked;
      result.skipped += p.skipped;
    }
    result.instances.push_back(std::move(ic));
  }
  for (auto& [name, g] : groups) result.groups.push_back(g);
  return result;
}

}  // namespace akmnet::model
