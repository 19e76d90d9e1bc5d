#pragma once

// Linearization and long-time behaviour of a vector field: finite-difference
// Jacobian spectra and steady-state / limit-cycle classification.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "odenet/error.hpp"
#include "odenet/reference_integrator.hpp"
#include "odenet/truth.hpp"

namespace odenet {

// Maps (x0, t_eval) to states at t_eval, with x0 the state at t_eval.front().
using Propagator = std::function<std::vector<Vec>(const Vec&, const std::vector<double>&)>;

inline Propagator reference_propagator(const TruthSystem& sys, ReferenceOptions opt = {}) {
  return [sys, opt](const Vec& x0, const std::vector<double>& t) {
    return reference_integrate(sys, x0, t, opt);
  };
}

inline Mat finite_difference_jacobian(const RhsFn& f, const Vec& point) {
  const Eigen::Index n = point.size();
  Mat j(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(point(i)));
    Vec xp = point, xm = point;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

// Eigenvalues of the central-difference Jacobian, sorted by real part
// (ties by imaginary part).
inline std::vector<std::complex<double>> jacobian_eigs(const RhsFn& f, const Vec& point) {
  const Mat j = finite_difference_jacobian(f, point);
  if (!j.allFinite()) throw NumericError("jacobian_eigs: non-finite Jacobian");
  Eigen::EigenSolver<Mat> es(j, false);
  if (es.info() != Eigen::Success) throw NumericError("jacobian_eigs: eigen-solver failed");
  std::vector<std::complex<double>> ev(es.eigenvalues().data(),
                                       es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return ev;
}

struct LimitCycleOptions {
  double t_end = 500.0;
  double t_cut = 300.0;
  double sample_dt = 0.01;
  int n_points = 50;
  double amplitude_threshold = 1e-3;
};

struct LimitCycleResult {
  bool steady = false;
  Vec steady_state;          // time average when steady
  std::vector<Vec> orbit;    // one period, n_points samples, endpoints included
  double period = 0.0;
  Vec channel_min, channel_max;
};

// Integrates from probe_ic to t_end, discards t < t_cut, then either reports a
// steady state or resamples one period of the attracting orbit. The period is
// the spacing of the last two upward crossings of channel 0 through its mean.
inline LimitCycleResult find_limit_cycle(const Propagator& prop, const Vec& probe_ic,
                                         const LimitCycleOptions& opt = {}) {
  if (!(opt.t_cut > 0 && opt.t_end > opt.t_cut && opt.sample_dt > 0 && opt.n_points >= 2))
    throw ConfigError("find_limit_cycle: invalid options");
  std::vector<double> t{0.0};
  const long n = long(std::floor((opt.t_end - opt.t_cut) / opt.sample_dt + 1e-9));
  for (long i = 0; i <= n; ++i) t.push_back(opt.t_cut + double(i) * opt.sample_dt);
  const auto xs_all = prop(probe_ic, t);
  std::vector<Vec> xs(xs_all.begin() + 1, xs_all.end());
  t.erase(t.begin());
  for (const auto& x : xs)
    if (!x.allFinite()) throw NumericError("find_limit_cycle: trajectory diverged");

  const Eigen::Index d = probe_ic.size();
  Vec lo = xs.front(), hi = xs.front(), mean = Vec::Zero(d);
  for (const auto& x : xs) {
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
    mean += x;
  }
  mean /= double(xs.size());

  LimitCycleResult r;
  bool oscillating = false;
  for (Eigen::Index c = 0; c < d; ++c) {
    const double amp = (hi(c) - lo(c)) / std::max(1.0, std::abs(mean(c)));
    if (amp >= opt.amplitude_threshold) oscillating = true;
  }
  if (!oscillating) {
    r.steady = true;
    r.steady_state = mean;
    r.channel_min = mean;
    r.channel_max = mean;
    return r;
  }

  std::vector<double> crossings;
  std::vector<std::size_t> crossing_index;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double a = xs[i - 1](0) - mean(0), b = xs[i](0) - mean(0);
    if (a < 0.0 && b >= 0.0) {
      crossings.push_back(t[i - 1] + (t[i] - t[i - 1]) * (-a) / (b - a));
      crossing_index.push_back(i);
    }
  }
  if (crossings.size() < 2)
    throw PeriodDetectionError("find_limit_cycle: oscillation without two mean crossings");

  r.period = crossings.back() - crossings[crossings.size() - 2];
  const std::size_t start = crossing_index[crossing_index.size() - 2];
  std::vector<double> tp;
  for (int i = 0; i < opt.n_points; ++i)
    tp.push_back(r.period * double(i) / double(opt.n_points - 1));
  r.orbit = prop(xs[start], tp);
  // Extremes come from the dense post-transient record, not the resampled orbit.
  r.channel_min = lo;
  r.channel_max = hi;
  return r;
}

}  // namespace odenet
