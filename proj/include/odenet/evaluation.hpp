#pragma once

// Error metrics between a learned model and its truth system, post-transient
// test points, bifurcation sweeps and the metrics report.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "odenet/analysis.hpp"
#include "odenet/dataset.hpp"
#include "odenet/error.hpp"
#include "odenet/model.hpp"
#include "odenet/reference_integrator.hpp"
#include "odenet/training.hpp"
#include "odenet/truth.hpp"

namespace odenet {

struct NormTriple {
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  std::vector<int> excluded;     // degenerate channels dropped from the average
  bool unscaled = false;         // every channel degenerate: raw differences used
};

// Both arrays are min-max scaled with y_true's per-channel extremes, then
//   L1   = mean |d| over all entries
//   L2   = (1 / (N d)) sum_rows sqrt(sum_channels d^2)
//   Linf = mean over rows of max_channel |d|
inline NormTriple norms(const Mat& y_true, const Mat& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols())
    throw ConfigError("norms: shape mismatch");
  if (y_true.rows() < 1 || y_true.cols() < 1) throw ConfigError("norms: empty input");
  if (!y_true.allFinite() || !y_pred.allFinite()) throw NumericError("norms: non-finite input");
  NormTriple r;
  std::vector<int> keep;
  const Vec lo = y_true.colwise().minCoeff().transpose();
  const Vec hi = y_true.colwise().maxCoeff().transpose();
  for (Eigen::Index c = 0; c < y_true.cols(); ++c) {
    if (hi(c) > lo(c)) keep.push_back(int(c));
    else r.excluded.push_back(int(c));
  }
  Mat diff;
  if (keep.empty()) {
    r.unscaled = true;
    diff = y_pred - y_true;
  } else {
    diff.resize(y_true.rows(), Eigen::Index(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      const int c = keep[j];
      const double span = hi(c) - lo(c);
      diff.col(Eigen::Index(j)) =
          (y_pred.col(c).array() - lo(c)) / span - (y_true.col(c).array() - lo(c)) / span;
    }
  }
  const double n = double(diff.rows()), d = double(diff.cols());
  r.l1 = diff.cwiseAbs().sum() / (n * d);
  r.l2 = diff.rowwise().norm().sum() / (n * d);
  r.linf = diff.cwiseAbs().rowwise().maxCoeff().sum() / n;
  return r;
}

// Relative coupling error (1/N_P) sum |k - k_hat| / |k|.
inline double param_error(const Vec& kappa_true, const Vec& kappa_learned) {
  if (kappa_true.size() != kappa_learned.size() || kappa_true.size() == 0)
    throw ConfigError("param_error: size mismatch or empty");
  double s = 0.0;
  for (Eigen::Index k = 0; k < kappa_true.size(); ++k) {
    if (kappa_true(k) == 0.0) throw NumericError("param_error: zero reference value");
    s += std::abs((kappa_true(k) - kappa_learned(k)) / kappa_true(k));
  }
  return s / double(kappa_true.size());
}

// ---------------------------------------------------------------------------
// Test points.

struct TestProtocol {
  int n_trajectories = 1000;
  Vec ic_low, ic_high;
  Vec param_low, param_high;
  double t_discard = 5.0;  // transients before this are dropped
  double t_end = 10.0;     // one state per trajectory, uniform in [t_discard, t_end]
  std::uint64_t seed = 12345;
};

struct TestPointSet {
  Mat states;  // N x d
  Mat params;  // N x n_params
  int skipped = 0;
  Eigen::Index size() const { return states.rows(); }
};

inline TestPointSet make_test_points(const TruthSystem& sys, const TestProtocol& p) {
  const int d = sys.dim();
  const int np = int(sys.param_names().size());
  if (p.ic_low.size() != d || p.ic_high.size() != d || p.param_low.size() != np ||
      p.param_high.size() != np)
    throw ConfigError("test points: sampling box has the wrong size");
  if (!(p.t_end >= p.t_discard && p.t_discard >= 0.0))
    throw ConfigError("test points: need 0 <= t_discard <= t_end");
  std::vector<Vec> xs, ps;
  TestPointSet out;
  for (int i = 0; i < p.n_trajectories; ++i) {
    auto rng = make_rng(p.seed, std::uint64_t(i), 0x74657374ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec par(np), x0(d);
    for (int k = 0; k < np; ++k) par(k) = p.param_low(k) + (p.param_high(k) - p.param_low(k)) * u(rng);
    for (int c = 0; c < d; ++c) x0(c) = p.ic_low(c) + (p.ic_high(c) - p.ic_low(c)) * u(rng);
    const double t = p.t_discard + (p.t_end - p.t_discard) * u(rng);
    try {
      const auto traj = t > 0 ? reference_integrate(sys.with_params(par), x0, {0.0, t})
                              : std::vector<Vec>{x0};
      if (!traj.back().allFinite()) throw NumericError("non-finite");
      xs.push_back(traj.back());
      ps.push_back(par);
    } catch (const NumericError&) {
      ++out.skipped;
    }
  }
  out.states.resize(Eigen::Index(xs.size()), d);
  out.params.resize(Eigen::Index(xs.size()), np);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.states.row(Eigen::Index(i)) = xs[i].transpose();
    if (np) out.params.row(Eigen::Index(i)) = ps[i].transpose();
  }
  return out;
}

inline Mat truth_rhs_rows(const TruthSystem& sys, const Mat& x, const Mat& params) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const TruthSystem s = params.cols() ? sys.with_params(params.row(r).transpose()) : sys;
    out.row(r) = s.rhs(x.row(r).transpose()).transpose();
  }
  return out;
}

inline NormTriple rhs_error(const LearnedRhs& m, const TruthSystem& sys, const TestPointSet& pts) {
  return norms(truth_rhs_rows(sys, pts.states, pts.params), model_rhs(m, pts.states, pts.params));
}

inline Mat truth_kinetics_rows(const TruthSystem& sys, const Mat& x, const Mat& params) {
  Mat out;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const TruthSystem s = params.cols() ? sys.with_params(params.row(r).transpose()) : sys;
    const Vec k = s.kinetic_targets(x.row(r).transpose());
    if (out.size() == 0) out.resize(x.rows(), k.size());
    out.row(r) = k.transpose();
  }
  return out;
}

// Network kinetics (phi, or mu_i * biomass_i) against the truth sub-functions.
inline NormTriple kinetic_error(const LearnedRhs& m, const TruthSystem& sys,
                                const TestPointSet& pts) {
  if (m.composer != Composer::GrayFunctional)
    throw ConfigError("kinetic_error: model is not a functional gray box");
  return norms(truth_kinetics_rows(sys, pts.states, pts.params),
               model_kinetics(m, pts.states, pts.params));
}

// B&F only: implied growth rates mu_hat_i = r_hat_i / biomass_i against mu_i,
// restricted to points where every biomass exceeds min_biomass.
inline std::optional<NormTriple> growth_rate_error(const LearnedRhs& m, const TruthSystem& sys,
                                                   const TestPointSet& pts,
                                                   double min_biomass = 1e-3) {
  if (sys.kind != SystemKind::Bf || m.composer != Composer::GrayFunctional) return std::nullopt;
  const Mat r_hat = model_kinetics(m, pts.states, pts.params);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < pts.size(); ++r)
    if ((pts.states.row(r).head(3).array() > min_biomass).all()) rows.push_back(r);
  if (rows.empty()) return std::nullopt;
  Mat t(Eigen::Index(rows.size()), 3), p(Eigen::Index(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Vec x = pts.states.row(rows[i]).transpose();
    t.row(Eigen::Index(i)) = sys.growth_rates(x).transpose();
    p.row(Eigen::Index(i)) = r_hat.row(rows[i]).cwiseQuotient(x.head(3).transpose());
  }
  return norms(t, p);
}

// ---------------------------------------------------------------------------
// Short-term solution error from points on the true attractor.

struct SolutionProtocol {
  std::vector<Vec> param_sets{Vec(0)};  // one attractor per entry; stacked
  Vec probe_ic;
  int n_points = 50;
  double horizon = 20.0;
  double sample_dt = 0.1;  // transient sampled on (0, horizon]; <= 0 keeps endpoints only
  double infer_max_dt = 0.1;
  LimitCycleOptions cycle;

  std::vector<double> sample_times() const {
    if (!(sample_dt > 0.0)) return {0.0, horizon};
    std::vector<double> t{0.0};
    const long n = std::max(1L, std::lround(horizon / sample_dt));
    for (long k = 1; k <= n; ++k) t.push_back(horizon * double(k) / double(n));
    return t;
  }
};

struct SolutionSamples {
  Mat truth, model;  // one row per (start point, sample time > 0)
};

inline SolutionSamples solution_samples(const LearnedRhs& m, const TruthSystem& sys,
                                        const SolutionProtocol& p) {
  const auto times = p.sample_times();
  std::vector<Vec> yt, ym;
  for (const Vec& par : p.param_sets) {
    const TruthSystem s = par.size() ? sys.with_params(par) : sys;
    LimitCycleOptions lc = p.cycle;
    lc.n_points = p.n_points + 1;  // drop the duplicated closing point
    const auto cyc = find_limit_cycle(reference_propagator(s), p.probe_ic, lc);
    std::vector<Vec> starts;
    if (cyc.steady) starts.assign(std::size_t(p.n_points), cyc.steady_state);
    else starts.assign(cyc.orbit.begin(), cyc.orbit.begin() + p.n_points);
    Mat x0(Eigen::Index(starts.size()), sys.dim());
    std::vector<std::vector<Vec>> truth_paths;
    for (std::size_t i = 0; i < starts.size(); ++i) {
      x0.row(Eigen::Index(i)) = starts[i].transpose();
      truth_paths.push_back(reference_integrate(s, starts[i], times));
    }
    const Mat pm = par.size() ? Mat(par.transpose().replicate(x0.rows(), 1)) : Mat(x0.rows(), 0);
    const auto out = infer_batch(m, x0, pm, times, p.infer_max_dt);
    for (Eigen::Index r = 0; r < x0.rows(); ++r)
      for (std::size_t k = 1; k < times.size(); ++k) {
        yt.push_back(truth_paths[std::size_t(r)][k]);
        ym.push_back(out[k].row(r).transpose());
      }
  }
  SolutionSamples s;
  s.truth.resize(Eigen::Index(yt.size()), sys.dim());
  s.model.resize(Eigen::Index(ym.size()), sys.dim());
  for (std::size_t i = 0; i < yt.size(); ++i) {
    s.truth.row(Eigen::Index(i)) = yt[i].transpose();
    s.model.row(Eigen::Index(i)) = ym[i].transpose();
  }
  return s;
}

inline NormTriple solution_error(const LearnedRhs& m, const TruthSystem& sys,
                                 const SolutionProtocol& p) {
  const auto s = solution_samples(m, sys, p);
  return norms(s.truth, s.model);
}

// ---------------------------------------------------------------------------
// Bifurcation sweeps.

enum class SweepKind { Steady, Cycle, Unresolved };

inline std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::Steady: return "steady";
    case SweepKind::Cycle: return "cycle";
    case SweepKind::Unresolved: return "unresolved";
  }
  return "?";
}

struct SweepRecord {
  double value = 0.0;
  SweepKind kind = SweepKind::Unresolved;
  Vec min, max;
  double period = 0.0;
  std::string note;
};

// factory(v) returns the propagator of the system at parameter value v.
inline std::vector<SweepRecord> bifurcation_sweep(const std::function<Propagator(double)>& factory,
                                                  const std::vector<double>& grid,
                                                  const Vec& probe_ic,
                                                  const LimitCycleOptions& opt = {}) {
  std::vector<SweepRecord> out;
  for (double v : grid) {
    SweepRecord r;
    r.value = v;
    try {
      const auto c = find_limit_cycle(factory(v), probe_ic, opt);
      r.kind = c.steady ? SweepKind::Steady : SweepKind::Cycle;
      r.min = c.channel_min;
      r.max = c.channel_max;
      r.period = c.period;
    } catch (const NumericError& e) {
      r.kind = SweepKind::Unresolved;
      r.note = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::function<Propagator(double)> truth_sweep_factory(const TruthSystem& sys,
                                                             const std::string& name,
                                                             ReferenceOptions ref = {}) {
  return [sys, name, ref](double v) { return reference_propagator(sys.with_param(name, v), ref); };
}

// Sweeps a model over a network input parameter (e.g. Da) or a coupling in kappa.
inline std::function<Propagator(double)> model_sweep_factory(const LearnedRhs& m,
                                                             const std::vector<std::string>& param_names,
                                                             const Vec& base_params,
                                                             const std::string& name,
                                                             double max_dt) {
  return [=](double v) -> Propagator {
    LearnedRhs mm = m;
    Vec par = base_params;
    bool found = false;
    for (std::size_t i = 0; i < param_names.size(); ++i)
      if (param_names[i] == name) {
        par(Eigen::Index(i)) = v;
        found = true;
      }
    for (std::size_t i = 0; i < mm.kappa_names.size(); ++i)
      if (mm.kappa_names[i] == name) {
        mm.kappa(0, Eigen::Index(i)) = v;
        found = true;
      }
    if (!found) throw ConfigError("sweep: model has no parameter '" + name + "'");
    return [mm, par, max_dt](const Vec& x0, const std::vector<double>& t) {
      return infer_trajectory(mm, x0, par, t, max_dt);
    };
  };
}

// Midpoints of grid intervals where the steady/cycle classification flips.
inline std::vector<double> hopf_estimates(const std::vector<SweepRecord>& recs) {
  std::vector<double> h;
  for (std::size_t i = 1; i < recs.size(); ++i) {
    const auto a = recs[i - 1].kind, b = recs[i].kind;
    if (a == SweepKind::Unresolved || b == SweepKind::Unresolved) continue;
    if (a != b) h.push_back(0.5 * (recs[i - 1].value + recs[i].value));
  }
  return h;
}

inline std::string sweep_csv(const std::vector<SweepRecord>& recs, const std::string& source = "") {
  std::ostringstream os;
  os.precision(10);
  for (const auto& r : recs) {
    if (r.kind == SweepKind::Unresolved) {
      os << (source.empty() ? "" : source + ",") << r.value << ",unresolved,,,\n";
      continue;
    }
    for (Eigen::Index c = 0; c < r.min.size(); ++c)
      os << (source.empty() ? "" : source + ",") << r.value << ',' << to_string(r.kind) << ',' << c
         << ',' << r.min(c) << ',' << r.max(c) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Report.

struct MetricsReport {
  std::optional<NormTriple> solution, rhs, kinetic, growth_rate;
  std::optional<double> param;
  nlohmann::json metadata = nlohmann::json::object();
};

inline nlohmann::json to_json(const std::optional<NormTriple>& n) {
  if (!n) return nullptr;
  nlohmann::json j{{"L1", n->l1}, {"L2", n->l2}, {"Linf", n->linf}};
  if (!n->excluded.empty()) j["excluded_channels"] = n->excluded;
  if (n->unscaled) j["unscaled_fallback"] = true;
  return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["solution_error"] = to_json(r.solution);
  j["rhs_error"] = to_json(r.rhs);
  j["kinetic_error"] = to_json(r.kinetic);
  j["growth_rate_error"] = to_json(r.growth_rate);
  j["parameter_error"] = r.param ? nlohmann::json(*r.param) : nlohmann::json(nullptr);
  j["metadata"] = r.metadata;
  return j;
}

inline std::string report_csv_header() {
  return "name,solution_L1,solution_L2,solution_Linf,rhs_L1,rhs_L2,rhs_Linf,kinetic_L1,kinetic_L2,"
         "kinetic_Linf,parameter_error";
}

inline std::string report_csv_row(const std::string& name, const MetricsReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << name;
  auto put = [&os](const std::optional<NormTriple>& n) {
    if (n) os << ',' << n->l1 << ',' << n->l2 << ',' << n->linf;
    else os << ",NA,NA,NA";
  };
  put(r.solution);
  put(r.rhs);
  put(r.kinetic);
  if (r.param) os << ',' << *r.param;
  else os << ",NA";
  return os.str();
}

}  // namespace odenet
