#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "afn/objectives.hpp"
#include "afn/rng.hpp"

namespace afn::testing {

// Normwise relative error of `analytic` against central differences.
inline double fd_error(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                const std::vector<double>& analytic, double h = 1e-5) {
  double num = 0, den_a = 0, den_n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double dn = f(x);
    x[i] = x0;
    const double g = (up - dn) / (2 * h);
    num += (g - analytic[i]) * (g - analytic[i]);
    den_a += analytic[i] * analytic[i];
    den_n += g * g;
  }
  const double den = std::sqrt(std::max(den_a, den_n));
  return den == 0 ? 0 : std::sqrt(num) / den;
}

inline std::vector<double> randn(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Packs TreeParams into one vector and back.
inline std::vector<double> pack(const TreeParams& p) {
  std::vector<double> v = p.log_flow;
  v.insert(v.end(), p.log_policy.begin(), p.log_policy.end());
  v.insert(v.end(), p.q_logits.begin(), p.q_logits.end());
  return v;
}
inline TreeParams unpack(const std::vector<double>& v, std::size_t n) {
  TreeParams p;
  p.log_flow.assign(v.begin(), v.begin() + n);
  p.log_policy.assign(v.begin() + n, v.begin() + 2 * n);
  p.q_logits.assign(v.begin() + 2 * n, v.end());
  return p;
}


}  // namespace afn::testing
