#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Central-difference gradient verification. loss_fn must recompute the
// scalar loss from the current parameter values and must NOT touch the
// grad buffers; analytic gradients are expected to be populated before
// the call. Relative error per coordinate is
//   |a - n| / max(1e-5, |a| + |n|)
// and the worst coordinate over all checked parameters is returned.
// The denominator floor sits above the quotient's rounding noise
// (ulp(loss) / 2 eps, about 1e-11 at unit loss): a coordinate whose
// true gradient is below the floor cannot be measured more precisely
// than that noise, so comparing it at full relative strictness would
// only report the build's rounding behavior.

template <typename T>
struct GradCheckReport {
  T worst_rel_err = T(0);
  size_t worst_param = 0;   // index into the params vector
  size_t worst_coord = 0;   // flat index within that parameter
  T analytic = T(0);
  T numeric = T(0);
  size_t coords_checked = 0;
};

template <typename T>
GradCheckReport<T> finite_diff_check(
    const std::function<T()>& loss_fn, std::vector<ParamTensor<T>*> params,
    T eps = T(1e-5), size_t max_coords_per_param = 0) {
  GradCheckReport<T> rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor<T>& p = *params[pi];
    const size_t n = p.size();
    const size_t limit =
        (max_coords_per_param == 0) ? n : std::min(n, max_coords_per_param);
    for (size_t i = 0; i < limit; ++i) {
      const T saved = p.value[i];
      p.value[i] = saved + eps;
      const T lp = loss_fn();
      p.value[i] = saved - eps;
      const T lm = loss_fn();
      p.value[i] = saved;
      if (!is_finite(lp) || !is_finite(lm))
        throw_numeric("finite_diff_check: non-finite loss at " + p.name +
                      "[" + std::to_string(i) + "]");
      const T numeric = (lp - lm) / (T(2) * eps);
      const T analytic = p.grad[i];
      const T denom = std::max(T(1e-5), std::abs(analytic) + std::abs(numeric));
      const T rel = std::abs(analytic - numeric) / denom;
      ++rep.coords_checked;
      if (rel > rep.worst_rel_err) {
        rep.worst_rel_err = rel;
        rep.worst_param = pi;
        rep.worst_coord = i;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace gdpnet
