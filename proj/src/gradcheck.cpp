#include "akmnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace akmnet::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

bool GradCheckReport::passed(double tolerance) const {
  for (const auto& p : params) {
    if (p.nan || !(p.max_rel_error < tolerance)) return false;
  }
  return true;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& p : params) w = std::max(w, p.nan ? std::numeric_limits<double>::infinity() : p.max_rel_error);
  return w;
}

std::size_t GradCheckReport::skipped() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.skipped;
  return n;
}

std::size_t GradCheckReport::checked() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.checked;
  return n;
}

namespace {

void check_epsilon(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-6, 1e-3]");
  }
}

template <typename N>
GradCheckReport run_check(const std::vector<Tensor<double>>& analytic, bool centre_on_boundary,
                          const std::function<BasicCheckProbe<N>()>& build,
                          const std::vector<BasicNamedLeaf<N>>& params, double eps) {
  const double guard = 10.0 * eps;
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamCheck pc;
    pc.name = params[k].name;
    Tensor<N>& value = params[k].var.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const N original = value[i];
      value[i] = original + static_cast<N>(eps);
      BasicCheckProbe<N> plus = build();
      value[i] = original - static_cast<N>(eps);
      BasicCheckProbe<N> minus = build();
      value[i] = original;

      if (centre_on_boundary || plus.boundary_margin < guard || minus.boundary_margin < guard ||
          plus.selection != minus.selection) {
        ++pc.skipped;
        continue;
      }
      const double numeric =
          static_cast<double>((plus.loss.value().item() - minus.loss.value().item()) / (2 * static_cast<N>(eps)));
      const double a = analytic[k][i];
      ++pc.checked;
      if (std::isnan(numeric) || std::isnan(a)) {
        pc.nan = true;
        continue;
      }
      const double err = relative_error(a, numeric);
      if (err > pc.max_rel_error) {
        pc.max_rel_error = err;
        pc.worst_index = i;
      }
    }
    report.params.push_back(pc);
  }
  return report;
}

std::vector<Tensor<double>> analytic_gradients(const std::function<CheckProbe()>& build,
                                               const std::vector<NamedLeaf>& params, double eps, bool& on_boundary) {
  std::vector<Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(p.var);
  CheckProbe centre = build();
  on_boundary = centre.boundary_margin < 10.0 * eps;
  return gradients(centre.loss, leaves);
}

}  // namespace

GradCheckReport grad_check(const std::function<CheckProbe()>& build, const std::vector<NamedLeaf>& params,
                           double eps) {
  check_epsilon(eps);
  bool on_boundary = false;
  const auto analytic = analytic_gradients(build, params, eps, on_boundary);
  return run_check<double>(analytic, on_boundary, build, params, eps);
}

GradCheckReport grad_check(const std::function<CheckProbe()>& build, const std::vector<NamedLeaf>& params,
                           const std::function<BasicCheckProbe<long double>()>& oracle,
                           const std::vector<BasicNamedLeaf<long double>>& oracle_params, double eps) {
  check_epsilon(eps);
  if (oracle_params.size() != params.size()) {
    throw std::invalid_argument("grad_check: oracle has a different parameter list");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& a = params[k].var.value();
    const auto& b = oracle_params[k].var.value();
    if (a.shape() != b.shape()) throw std::invalid_argument("grad_check: oracle shape differs for " + params[k].name);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (static_cast<long double>(a[i]) != b[i]) {
        throw std::invalid_argument("grad_check: oracle value differs for " + params[k].name);
      }
    }
  }
  bool on_boundary = false;
  const auto analytic = analytic_gradients(build, params, eps, on_boundary);
  return run_check<long double>(analytic, on_boundary, oracle, oracle_params, eps);
}

}  // namespace akmnet::nn
