#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "odenet/error.hpp"
#include "odenet/truth.hpp"

namespace odenet {

struct ReferenceOptions {
  double rtol = 1e-9;
  double atol = 1e-11;
  double max_step = 0.0;  // 0: unbounded
  long max_steps = 20'000'000;
};

namespace detail {

// Dormand-Prince 5(4) tableau.
struct Dopri5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

}  // namespace detail

// Adaptive Dormand-Prince integration of dx/dt = f(x) with PI step control.
// x0 is the state at t_eval.front(); returns the state at every t_eval entry.
// Steps are shortened to land exactly on requested output times.
inline std::vector<Vec> reference_integrate(const RhsFn& f, const Vec& x0,
                                            const std::vector<double>& t_eval,
                                            const ReferenceOptions& opt = {}) {
  using D = detail::Dopri5;
  std::vector<Vec> out;
  if (t_eval.empty()) return out;
  for (std::size_t i = 1; i < t_eval.size(); ++i)
    if (!(t_eval[i] > t_eval[i - 1]))
      throw ConfigError("reference_integrate: t_eval must be strictly increasing");
  out.reserve(t_eval.size());
  out.push_back(x0);

  Vec x = x0;
  double t = t_eval.front();
  Vec k1 = f(x);
  if (!k1.allFinite()) throw IntegrationError("reference_integrate: non-finite rhs at start", t);

  const double span = t_eval.back() - t_eval.front();
  double h = span > 0 ? std::min(1e-3, 1e-3 * span) : 1e-3;
  if (opt.max_step > 0) h = std::min(h, opt.max_step);
  double err_old = 1e-4;
  constexpr double safe = 0.9, facmin = 0.2, facmax = 10.0, beta = 0.04;
  constexpr double expo = 0.2 - beta * 0.75;
  long steps = 0;

  Vec k2, k3, k4, k5, k6, k7, xs, xnew, err;
  for (std::size_t next = 1; next < t_eval.size(); ++next) {
    const double target = t_eval[next];
    while (t < target) {
      if (++steps > opt.max_steps)
        throw IntegrationError("reference_integrate: step budget exhausted", t);
      double hs = std::min(h, target - t);
      const bool lands = hs >= target - t;
      if (hs < 1e-14 * std::max(1.0, std::abs(t)))
        throw IntegrationError("reference_integrate: step size underflow at t=" +
                                   std::to_string(t),
                               t);
      xs = x + hs * D::a21 * k1;
      k2 = f(xs);
      xs = x + hs * (D::a31 * k1 + D::a32 * k2);
      k3 = f(xs);
      xs = x + hs * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3);
      k4 = f(xs);
      xs = x + hs * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4);
      k5 = f(xs);
      xs = x + hs * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5);
      k6 = f(xs);
      xnew = x + hs * (D::a71 * k1 + D::a73 * k3 + D::a74 * k4 + D::a75 * k5 + D::a76 * k6);
      k7 = f(xnew);
      err = hs * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);

      double e = 0.0;
      if (!xnew.allFinite() || !k7.allFinite()) {
        e = 1e10;
      } else {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const double sc = opt.atol + opt.rtol * std::max(std::abs(x(i)), std::abs(xnew(i)));
          e += (err(i) / sc) * (err(i) / sc);
        }
        e = std::sqrt(e / double(x.size()));
      }

      if (e <= 1.0) {
        double fac = safe * std::pow(std::max(e, 1e-10), -expo) * std::pow(err_old, beta);
        fac = std::clamp(fac, facmin, facmax);
        err_old = std::max(e, 1e-4);
        t = lands ? target : t + hs;
        x = xnew;
        k1 = k7;
        // A step clipped to hit an output time should not shrink the controller.
        const double proposal = hs * fac;
        h = lands ? std::max(h, proposal) : proposal;
      } else {
        h = hs * std::max(facmin, safe * std::pow(e, -expo));
      }
      if (opt.max_step > 0) h = std::min(h, opt.max_step);
    }
    out.push_back(x);
  }
  return out;
}

inline std::vector<Vec> reference_integrate(const TruthSystem& sys, const Vec& x0,
                                            const std::vector<double>& t_eval,
                                            const ReferenceOptions& opt = {}) {
  return reference_integrate(sys.rhs_fn(), x0, t_eval, opt);
}

}  // namespace odenet
