#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// reverse-mode path: it only evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lcye/autograd.hpp"
#include "lcye/rng.hpp"

namespace lcye::testing {

struct GradCheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  double analytic_norm = 0.0;
};

/// `f` builds a scalar from fresh leaf Vars holding `inputs[k]`. Only the
/// inputs flagged in `differentiate` are checked.
inline GradCheckResult grad_check(const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                                  const std::vector<Tensor>& inputs, const std::vector<bool>& differentiate,
                                  double h = 1e-6) {
  std::vector<ag::Var> leaves;
  for (std::size_t k = 0; k < inputs.size(); ++k) leaves.emplace_back(inputs[k], differentiate[k]);
  ag::Var out = f(leaves);
  ag::backward(out);

  auto eval = [&](const std::vector<Tensor>& vals) {
    ag::NoGradGuard guard;
    std::vector<ag::Var> vs;
    for (const auto& t : vals) vs.emplace_back(t, false);
    return f(vs).item();
  };

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0, max_abs = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!differentiate[k]) continue;
    const Tensor& analytic = leaves[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = work[k][i];
      work[k][i] = orig + h;
      const double fp = eval(work);
      work[k][i] = orig - h;
      const double fm = eval(work);
      work[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
    }
  }
  GradCheckResult r;
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
  r.relative_error = std::sqrt(diff2) / denom;
  r.max_abs_error = max_abs;
  r.analytic_norm = std::sqrt(a2);
  return r;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace lcye::testing
