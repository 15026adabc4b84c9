#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "akmnet/gradcheck.hpp"
#include "akmnet/model.hpp"

// Finite-difference verification of the whole network on small random
// instances: analytic gradients in double, difference quotients on a long
// double replica.
namespace akmnet::model {

struct ModelCheckConfig {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  double eps = 1e-6;
  double tolerance = 1e-4;
  double max_skip_fraction = 0.1;
  std::size_t min_frames = 3, max_frames = 8;
  std::size_t min_channels = 4, max_channels = 8;
};

/// backbone, akm, gru or head, from a parameter name.
std::string parameter_group(const std::string& name);

struct GroupCheck {
  std::string group;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool nan = false;
};

struct InstanceCheck {
  std::uint64_t seed = 0;
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::size_t key_frames = 0;
  nn::GradCheckReport report;
};

struct ModelCheckResult {
  std::vector<InstanceCheck> instances;
  std::vector<GroupCheck> groups;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  double skip_fraction() const;
  double worst() const;
  bool passed(const ModelCheckConfig& config) const;
};

/// A micro network (8x8 single-channel frames, 2x2 output grid, `channels`
/// feature channels, dropout off) with the straight-through gate path
/// disabled, so the loss is the smooth function the checker differentiates.
ModelConfig micro_model_config(std::size_t channels);

/// Draws a micro-instance: T in [min_frames, max_frames], C in
/// [min_channels, max_channels], random frames and label. Draws whose centre
/// selection sits within 1e-3 of its threshold are redrawn.
struct MicroInstance {
  std::uint64_t seed = 0;
  data::Clip clip;
  ModelConfig config;
};
MicroInstance draw_micro_instance(std::uint64_t seed, const ModelCheckConfig& config);
/// The network of a micro-instance, initialized from its seed.
AkmNet<double> build_micro_model(const MicroInstance& instance);
/// Long double copy of `net` holding bit-identical parameter values.
AkmNet<long double> build_micro_replica(const MicroInstance& instance, const AkmNet<double>& net);

/// Checks dOmega/dtheta of every parameter on `config.instances` instances.
ModelCheckResult check_model_gradients(const ModelCheckConfig& config);

}  // namespace akmnet::model
