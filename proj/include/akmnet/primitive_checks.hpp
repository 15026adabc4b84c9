#pragma once

#include <string>
#include <vector>

#include "akmnet/gradcheck.hpp"
#include "akmnet/rng.hpp"

namespace akmnet::nn {

struct PrimitiveCheck {
  std::string primitive;
  GradCheckReport report;
};

/// Finite-difference check of every registered primitive on random 64-bit
/// operands with extents <= 5. Each primitive is read out through a random
/// linear functional so that every output coordinate matters.
std::vector<PrimitiveCheck> check_primitives(RngStream& rng, double eps = 1e-6);

/// Names of all primitives covered by check_primitives().
std::vector<std::string> primitive_names();

}  // namespace akmnet::nn
