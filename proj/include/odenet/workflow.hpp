#pragma once

// Orchestration shared by the CLI and the acceptance harness: training runs,
// mean/std aggregation of reports, the resonance dual rollout and Jacobian
// spectra at trajectory start points.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "odenet/analysis.hpp"
#include "odenet/experiment.hpp"

namespace odenet {

struct RunResult {
  Checkpoint ck;
  TrainResult train;
};

inline RunResult run_training(const ExperimentConfig& c, const std::vector<Trajectory>& corpus,
                              const Seeds& seeds, std::function<void(int, double)> on_epoch = {}) {
  RunResult r;
  r.ck = build_model(c, corpus, seeds);
  TrainConfig tc = train_config(c, seeds);
  tc.on_epoch = std::move(on_epoch);
  r.train = train(r.ck.model, corpus, tc, r.ck.param_names);
  r.ck.optimizer = r.train.optimizer;
  return r;
}

inline std::string loss_csv(const std::vector<double>& history) {
  std::ostringstream os;
  os << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) os << i << ',' << history[i] << '\n';
  return os.str();
}

// Worker count for independent runs; never below 1.
inline int worker_count(const char* env = "ODENET_WORKERS") {
  const char* v = std::getenv(env);
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string(env) + " must be a positive integer");
  return int(std::min(n, 256L));
}

// ---------------------------------------------------------------------------
// Aggregation across runs.

inline std::vector<std::pair<std::string, std::optional<double>>> report_values(const MetricsReport& r) {
  std::vector<std::pair<std::string, std::optional<double>>> out;
  auto put = [&out](const char* name, const std::optional<NormTriple>& n) {
    const std::string s(name);
    out.emplace_back(s + "_L1", n ? std::optional<double>(n->l1) : std::nullopt);
    out.emplace_back(s + "_L2", n ? std::optional<double>(n->l2) : std::nullopt);
    out.emplace_back(s + "_Linf", n ? std::optional<double>(n->linf) : std::nullopt);
  };
  put("solution", r.solution);
  put("rhs", r.rhs);
  put("kinetic", r.kinetic);
  put("growth_rate", r.growth_rate);
  out.emplace_back("parameter_error", r.param);
  return out;
}

struct MetricSummary {
  double mean = 0.0, std = 0.0;
  int n = 0;
};

// Sample standard deviation (n - 1); a single run reports std 0.
inline std::vector<std::pair<std::string, MetricSummary>> aggregate(const std::vector<MetricsReport>& runs) {
  std::vector<std::pair<std::string, MetricSummary>> out;
  if (runs.empty()) return out;
  const auto names = report_values(runs.front());
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> v;
    for (const auto& r : runs) {
      const auto x = report_values(r)[k].second;
      if (x) v.push_back(*x);
    }
    if (v.empty()) continue;
    MetricSummary s;
    s.n = int(v.size());
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.std = std::sqrt(ss / double(v.size() - 1));
    }
    out.emplace_back(names[k].first, s);
  }
  return out;
}

inline std::string aggregate_csv(const std::vector<std::pair<std::string, MetricSummary>>& a) {
  std::ostringstream os;
  os << std::setprecision(10) << "metric,mean,std,n\n";
  for (const auto& [name, s] : a) os << name << ',' << s.mean << ',' << s.std << ',' << s.n << '\n';
  return os.str();
}

inline nlohmann::json aggregate_json(const std::vector<std::pair<std::string, MetricSummary>>& a) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : a) j[name] = {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
  return j;
}

// ---------------------------------------------------------------------------
// Resonance: the same trained model rolled out two ways from one point on the
// true attractor.

// Fraction of consecutive increment pairs with opposite sign on one channel.
// Flat increments (both below a relative floor) count as agreeing.
inline double zigzag_fraction(const std::vector<Vec>& path, int channel) {
  if (path.size() < 3) throw ConfigError("zigzag: need at least three states");
  double scale = 0.0;
  for (const auto& x : path) scale = std::max(scale, std::abs(x(channel)));
  const double floor = 1e-12 * std::max(1.0, scale);
  int flips = 0, pairs = 0;
  for (std::size_t i = 2; i < path.size(); ++i) {
    const double a = path[i - 1](channel) - path[i - 2](channel);
    const double b = path[i](channel) - path[i - 1](channel);
    ++pairs;
    if (std::abs(a) > floor && std::abs(b) > floor && (a > 0) != (b > 0)) ++flips;
  }
  return double(flips) / double(pairs);
}

struct DualRollout {
  std::vector<double> times;
  std::vector<Vec> network;    // RK4 iterated with the training step pattern
  std::vector<Vec> reference;  // adaptive integration of the same learned field
  std::vector<Vec> truth;
  double zigzag_network = 0.0, zigzag_reference = 0.0;
};

// Steps repeat split_gap(data_dt, max_dt, GREEDY), the pattern a FIXED corpus
// trains on, for n_gaps data intervals.
inline DualRollout dual_rollout(const LearnedRhs& m, const TruthSystem& sys, const Vec& start,
                                const Vec& params, double data_dt, double max_dt, int n_gaps,
                                int channel) {
  std::mt19937_64 unused(0);
  const auto pattern = split_gap(data_dt, max_dt, Chunking::Greedy, unused);
  std::vector<double> steps;
  for (int g = 0; g < n_gaps; ++g) steps.insert(steps.end(), pattern.begin(), pattern.end());
  DualRollout d;
  d.times.push_back(0.0);
  for (double h : steps) d.times.push_back(d.times.back() + h);
  d.network = iterate_steps(m, start, params, steps);
  ReferenceOptions ro;
  d.reference = reference_integrate(model_rhs_fn(m, params), start, d.times, ro);
  d.truth = reference_integrate(params.size() ? sys.with_params(params) : sys, start, d.times, ro);
  d.zigzag_network = zigzag_fraction(d.network, channel);
  d.zigzag_reference = zigzag_fraction(d.reference, channel);
  return d;
}

inline std::string dual_rollout_csv(const DualRollout& d) {
  std::ostringstream os;
  os << std::setprecision(12) << "t,series";
  const Eigen::Index n = d.network.front().size();
  for (Eigen::Index c = 0; c < n; ++c) os << ",x" << c;
  os << '\n';
  auto put = [&](const char* name, const std::vector<Vec>& xs) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      os << d.times[i] << ',' << name;
      for (Eigen::Index c = 0; c < n; ++c) os << ',' << xs[i](c);
      os << '\n';
    }
  };
  put("network", d.network);
  put("reference", d.reference);
  put("truth", d.truth);
  return os.str();
}

// A point on the truth attractor to start dual rollouts from.
inline Vec attractor_point(const TruthSystem& sys, const Vec& probe_ic, const LimitCycleOptions& lc) {
  const auto c = find_limit_cycle(reference_propagator(sys), probe_ic, lc);
  return c.steady ? c.steady_state : c.orbit.front();
}

// ---------------------------------------------------------------------------
// Jacobian spectra.

enum class PointSource { TrueIc, LearnedIc, State };

inline PointSource point_source_from_string(const std::string& s) {
  if (s == "TRUE_IC") return PointSource::TrueIc;
  if (s == "LEARNED_IC") return PointSource::LearnedIc;
  if (s == "STATE") return PointSource::State;
  throw ConfigError("point source must be TRUE_IC, LEARNED_IC or STATE, got '" + s + "'");
}

// Full start state of a trajectory as the model sees it: the trained IC
// estimate on unobserved channels, measured values elsewhere.
inline Vec learned_start(const OdeNetModel& model, const Trajectory& tr, int d) {
  Vec x = Vec::Zero(d);
  const auto it = model.ic.find(tr.id);
  if (it != model.ic.end()) x = it->second.row(0).transpose();
  if (!tr.observations.empty() && tr.observations.front().t == 0.0)
    for (const auto& [c, v] : tr.observations.front().channels) x(c) = v;
  return x;
}

inline std::string eigs_csv(const std::vector<std::pair<std::string, std::vector<std::complex<double>>>>& rows) {
  std::ostringstream os;
  os << std::setprecision(10) << "source,index,real,imag\n";
  for (const auto& [name, ev] : rows)
    for (std::size_t i = 0; i < ev.size(); ++i)
      os << name << ',' << i + 1 << ',' << ev[i].real() << ',' << ev[i].imag() << '\n';
  return os.str();
}

// Real eigenvalues below `cut` in `model` that have no counterpart within
// `tol` in `truth`.
inline std::vector<double> spurious_fast_modes(const std::vector<std::complex<double>>& model,
                                               const std::vector<std::complex<double>>& truth,
                                               double cut, double tol = 0.05) {
  std::vector<double> out;
  for (const auto& e : model) {
    if (std::abs(e.imag()) > 1e-9 || !(e.real() < cut)) continue;
    bool matched = false;
    for (const auto& t : truth) matched = matched || std::abs(t - e) < tol;
    if (!matched) out.push_back(e.real());
  }
  return out;
}

}  // namespace odenet
