#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "akmnet/graph.hpp"

namespace akmnet::nn {

/// What a graph builder hands back to the checker: the scalar loss, plus,
/// when the graph contains a mean-threshold selection, the distance of the
/// nearest score to its threshold and the binary selection itself.
template <typename T>
struct BasicCheckProbe {
  Var<T> loss;
  double boundary_margin = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> selection;
};

template <typename T>
struct BasicNamedLeaf {
  std::string name;
  Var<T> var;
};

using CheckProbe = BasicCheckProbe<double>;
using NamedLeaf = BasicNamedLeaf<double>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates flagged "skipped: nondifferentiable boundary".
  std::size_t skipped = 0;
  bool nan = false;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;

  bool passed(double tolerance) const;
  double worst() const;
  std::size_t skipped() const;
  std::size_t checked() const;
};

/// Compares analytic gradients with central differences
/// (f(x+eps) - f(x-eps)) / 2eps coordinate by coordinate. Relative error uses
/// max(|analytic|, |numeric|, 1e-8) as denominator. A coordinate is skipped
/// when any probe (centre, +eps, -eps) has a selection score within 10*eps of
/// its threshold, or when the selection differs between +eps and -eps.
GradCheckReport grad_check(const std::function<CheckProbe()>& build, const std::vector<NamedLeaf>& params,
                           double eps = 1e-6);

/// Same check with the central differences taken on a second graph,
/// `oracle`, whose leaves hold the same values as `params` in a wider type.
/// Keeps the difference quotient's roundoff far below the tolerance when
/// gradients are tiny. Selection and margins come from the oracle probes.
GradCheckReport grad_check(const std::function<CheckProbe()>& build, const std::vector<NamedLeaf>& params,
                           const std::function<BasicCheckProbe<long double>()>& oracle,
                           const std::vector<BasicNamedLeaf<long double>>& oracle_params, double eps = 1e-6);

double relative_error(double analytic, double numeric);

}  // namespace akmnet::nn
