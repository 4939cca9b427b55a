#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "evgraph/autodiff.hpp"

namespace gradcheck {

struct Result {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
}

/// `loss` builds a scalar on the given tape from the parameters. Analytic
/// gradients come from one backward pass; each parameter element (or every
/// `stride`-th one) is compared with a central difference of step h.
inline Result check(const std::vector<evg::ad::Parameter*>& params,
                    const std::function<evg::ad::Var(evg::ad::Tape&)>& loss, double h = 1e-6,
                    std::size_t stride = 1) {
  for (auto* p : params) p->zero_grad();
  {
    evg::ad::Tape tape;
    auto l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&] {
    evg::ad::Tape tape;
    return loss(tape).value().item();
  };
  Result r;
  std::size_t counter = 0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i, ++counter) {
      if (counter % stride != 0) continue;
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = eval();
      p->value[i] = orig - h;
      const double fm = eval();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = p->grad[i];
      r.max_rel = std::max(r.max_rel, rel_error(analytic, numeric));
      r.max_abs = std::max(r.max_abs, std::fabs(analytic - numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gradcheck
