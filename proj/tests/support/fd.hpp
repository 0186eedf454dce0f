#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "progsg/tape.hpp"

namespace progsg::testing {

// Central-difference gradient check. `loss` must rebuild the computation from
// the current parameter values and return the scalar loss; it must not mutate
// the store. Analytic gradients are read from Param::grad, so run a backward
// pass (or pass `analytic`) before calling.
//
// Relative error uses a denominator floored at 1 so that near-zero gradients
// are effectively checked absolutely; central differencing cannot resolve
// them any tighter.
struct FdReport {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;

  bool within(double tol) const { return checked > 0 && max_rel < tol; }
};

inline FdReport fd_check(ad::ParamStore& ps,
                         const std::function<double()>& loss,
                         double h = 1e-5) {
  FdReport rep;
  for (const auto& up : ps.all()) {
    ad::Param& p = *up;
    for (size_t k = 0; k < p.value.data.size(); ++k) {
      double saved = p.value.data[k];
      double step = h * std::max(1.0, std::fabs(saved));
      p.value.data[k] = saved + step;
      double up_val = loss();
      p.value.data[k] = saved - step;
      double dn_val = loss();
      p.value.data[k] = saved;
      double numeric = (up_val - dn_val) / (2.0 * step);
      double analytic = p.grad.data[k];
      double rel = std::fabs(analytic - numeric) /
                   std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = p.id + "[" + std::to_string(k) + "]";
      }
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace progsg::testing
