#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "icare/params.hpp"
#include "icare/rng.hpp"

namespace icare {

/// One Adam update with bias correction over every parameter in the set.
/// Gradients must have been populated (zero_grad + backward) beforehand.
template <typename S>
void adam_step(const AdamConfig& cfg, AdamState<S>& state, ParameterSet<S>& params) {
  if (state.m.size() != params.count() || state.v.size() != params.count())
    throw UsageError("adam_step: state has " + std::to_string(state.m.size()) + " slots for " +
                     std::to_string(params.count()) + " parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Parameter<S>& p = *params.all()[i];
    if (!p.grad_ready()) throw UsageError("adam_step: missing gradient for " + p.name);
    if (!state.m[i].same_shape(p.value))
      throw UsageError("adam_step: state slot shape mismatch for " + p.name);
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    const auto& g = p.grad.array();
    m = S(cfg.beta1) * m + S(1.0 - cfg.beta1) * g;
    v = S(cfg.beta2) * v + S(1.0 - cfg.beta2) * g.square();
    p.value.array() -=
        S(cfg.lr) * (m / S(bc1)) / ((v / S(bc2)).sqrt() + S(cfg.epsilon));
    ensure_finite(p.value, "adam_step");
  }
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  Index coords_checked = 0;

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must run one full forward pass, call backward on the tape and
/// return the scalar loss. It has to be a pure deterministic function of the
/// parameter values: dropout off, batchnorm in inference mode (or otherwise
/// side-effect free), fixed inputs.
///
/// Large parameter tensors are subsampled to `max_coords_per_param`
/// deterministically chosen coordinates; the relative error per coordinate is
/// |a - f| / max(1, |a|, |f|).
template <typename S>
GradCheckReport grad_check(ParameterSet<S>& params, const std::function<S()>& loss_fn,
                           double fd_step = 1e-5, Index max_coords_per_param = 25,
                           std::uint64_t seed = 1234) {
  static_assert(std::is_same_v<S, double>, "grad_check requires 64-bit precision");
  params.zero_grad();
  loss_fn();
  std::vector<Tensor<S>> analytic;
  analytic.reserve(params.count());
  for (auto* p : params.all()) analytic.push_back(p->grad);

  GradCheckReport report;
  RandomStream rng(seed);
  for (std::size_t pi = 0; pi < params.count(); ++pi) {
    Parameter<S>& p = *params.all()[pi];
    std::vector<Index> coords;
    if (p.value.size() <= max_coords_per_param) {
      coords.resize(static_cast<std::size_t>(p.value.size()));
      for (Index i = 0; i < p.value.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      coords.resize(static_cast<std::size_t>(p.value.size()));
      for (Index i = 0; i < p.value.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(max_coords_per_param));
    }
    for (Index ci : coords) {
      const S saved = p.value[ci];
      p.value[ci] = saved + S(fd_step);
      const double lp = static_cast<double>(loss_fn());
      p.value[ci] = saved - S(fd_step);
      const double lm = static_cast<double>(loss_fn());
      p.value[ci] = saved;
      const double fd = (lp - lm) / (2.0 * fd_step);
      const double an = static_cast<double>(analytic[pi][ci]);
      const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = ci;
      }
    }
  }
  // leave the analytic gradients in place for the caller
  for (std::size_t pi = 0; pi < params.count(); ++pi) params.all()[pi]->grad = analytic[pi];
  return report;
}

}  // namespace icare
