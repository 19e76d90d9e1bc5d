#pragma once

// Synthetic corpora with controlled sampling pathologies, key/solver time
// grids, padded batches, and the JSON-lines corpus format.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "odenet/error.hpp"
#include "odenet/reference_integrator.hpp"
#include "odenet/truth.hpp"

namespace odenet {

struct Observation {
  double t = 0.0;
  std::map<int, double> channels;  // absent channel = unobserved
};

struct Trajectory {
  std::string id;
  std::map<std::string, double> params;
  std::vector<Observation> observations;
  bool ic_given = true;
  std::optional<Vec> true_ic;  // oracle use only

  Vec param_vector(const std::vector<std::string>& names) const {
    Vec p(Eigen::Index(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto it = params.find(names[i]);
      if (it == params.end())
        throw ConfigError("trajectory " + id + ": missing parameter '" + names[i] + "'");
      p(Eigen::Index(i)) = it->second;
    }
    return p;
  }

  long measured_values() const {
    long n = 0;
    for (const auto& o : observations) n += long(o.channels.size());
    return n;
  }

  void validate(int dim) const {
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const auto& o = observations[i];
      if (!std::isfinite(o.t) || o.t < 0.0)
        throw ConfigError("trajectory " + id + ": bad observation time");
      if (i > 0 && !(o.t > observations[i - 1].t))
        throw ConfigError("trajectory " + id + ": observation times must increase");
      if (o.channels.empty())
        throw ConfigError("trajectory " + id + ": observation without channels");
      for (const auto& [c, v] : o.channels) {
        if (c < 0 || c >= dim) throw ConfigError("trajectory " + id + ": channel out of range");
        if (!std::isfinite(v)) throw ConfigError("trajectory " + id + ": non-finite value");
      }
    }
    if (ic_given) {
      if (observations.empty() || observations.front().t != 0.0 ||
          int(observations.front().channels.size()) != dim)
        throw ConfigError("trajectory " + id + ": ic_given requires a full observation at t=0");
    }
  }

  bool operator==(const Trajectory& o) const {
    if (id != o.id || params != o.params || ic_given != o.ic_given) return false;
    if (observations.size() != o.observations.size()) return false;
    for (std::size_t i = 0; i < observations.size(); ++i) {
      if (observations[i].t != o.observations[i].t) return false;
      if (observations[i].channels != o.observations[i].channels) return false;
    }
    if (true_ic.has_value() != o.true_ic.has_value()) return false;
    if (true_ic && *true_ic != *o.true_ic) return false;
    return true;
  }
};

enum class Sampling { Fixed, Gamma };
enum class ObservationScheme { Full, PerChannel };
enum class Chunking { Greedy, Uniform, Random };

inline std::string to_string(Sampling s) { return s == Sampling::Fixed ? "FIXED" : "GAMMA"; }
inline std::string to_string(ObservationScheme s) {
  return s == ObservationScheme::Full ? "FULL" : "PER_CHANNEL";
}
inline std::string to_string(Chunking c) {
  switch (c) {
    case Chunking::Greedy: return "GREEDY";
    case Chunking::Uniform: return "UNIFORM";
    case Chunking::Random: return "RANDOM";
  }
  return "?";
}
inline Sampling sampling_from_string(const std::string& s) {
  if (s == "FIXED") return Sampling::Fixed;
  if (s == "GAMMA") return Sampling::Gamma;
  throw ConfigError("unknown sampling mode '" + s + "'");
}
inline ObservationScheme observation_from_string(const std::string& s) {
  if (s == "FULL") return ObservationScheme::Full;
  if (s == "PER_CHANNEL") return ObservationScheme::PerChannel;
  throw ConfigError("unknown observation scheme '" + s + "'");
}
inline Chunking chunking_from_string(const std::string& s) {
  if (s == "GREEDY") return Chunking::Greedy;
  if (s == "UNIFORM") return Chunking::Uniform;
  if (s == "RANDOM") return Chunking::Random;
  throw ConfigError("unknown chunking mode '" + s + "'");
}

struct PathologySpec {
  std::vector<double> mean_dt{0.1};  // one entry, or one per channel
  Sampling sampling = Sampling::Fixed;
  double gamma_shape = 4.0;
  ObservationScheme observation = ObservationScheme::Full;
  bool withhold_ic = false;
  double horizon = 10.0;
  int n_trajectories = 100;
  Vec ic_low, ic_high;        // IC sampling box
  Vec param_low, param_high;  // per-trajectory parameter range (system order)
  double noise_std = 0.0;     // additive Gaussian, off by default

  double dt_for(int channel) const {
    return mean_dt.size() == 1 ? mean_dt.front() : mean_dt.at(std::size_t(channel));
  }

  void validate(int dim, int n_params) const {
    if (mean_dt.empty()) throw ConfigError("pathology: mean_dt is empty");
    if (mean_dt.size() != 1 && int(mean_dt.size()) != dim)
      throw ConfigError("pathology: mean_dt needs 1 or " + std::to_string(dim) + " entries");
    for (double d : mean_dt) {
      if (!(d > 0.0)) throw ConfigError("pathology: mean_dt must be positive");
      if (!(horizon > d)) throw ConfigError("pathology: horizon must exceed mean_dt");
    }
    if (!(gamma_shape > 0.0)) throw ConfigError("pathology: gamma_shape must be positive");
    if (n_trajectories < 0) throw ConfigError("pathology: negative trajectory count");
    if (ic_low.size() != dim || ic_high.size() != dim)
      throw ConfigError("pathology: IC box must have " + std::to_string(dim) + " entries");
    if ((ic_high.array() < ic_low.array()).any())
      throw ConfigError("pathology: IC box upper bound below lower bound");
    if (param_low.size() != n_params || param_high.size() != n_params)
      throw ConfigError("pathology: parameter range must have " + std::to_string(n_params) +
                        " entries");
    if ((param_high.array() < param_low.array()).any())
      throw ConfigError("pathology: parameter range upper bound below lower bound");
    if (!(noise_std >= 0.0)) throw ConfigError("pathology: noise_std must be non-negative");
  }
};

// Deterministic per-purpose RNG stream.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                std::uint64_t c = 0) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a),
                    std::uint32_t(a >> 32), std::uint32_t(b), std::uint32_t(c)};
  return std::mt19937_64(seq);
}

inline std::vector<double> sample_times(const PathologySpec& spec, double mean,
                                        std::mt19937_64& rng) {
  std::vector<double> t{0.0};
  if (spec.sampling == Sampling::Fixed) {
    for (long k = 1;; ++k) {
      const double tk = double(k) * mean;
      if (tk > spec.horizon + 1e-9 * spec.horizon) break;
      t.push_back(tk);
    }
  } else {
    std::gamma_distribution<double> g(spec.gamma_shape, mean / spec.gamma_shape);
    double acc = 0.0;
    for (;;) {
      acc += g(rng);
      if (acc > spec.horizon) break;
      if (acc > t.back()) t.push_back(acc);
    }
  }
  return t;
}

struct GenerateStats {
  int generated = 0;
  int skipped = 0;
  std::vector<std::string> skipped_ids;
};

inline std::vector<Trajectory> generate_corpus(const TruthSystem& sys, const PathologySpec& spec,
                                               std::uint64_t seed,
                                               GenerateStats* stats = nullptr,
                                               const ReferenceOptions& ref = {}) {
  const int d = sys.dim();
  const auto names = sys.param_names();
  spec.validate(d, int(names.size()));
  std::vector<Trajectory> out;
  GenerateStats local;
  for (int i = 0; i < spec.n_trajectories; ++i) {
    auto rng = make_rng(seed, std::uint64_t(i), 0x636f72707573ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Trajectory tr;
    tr.id = std::to_string(i);
    Vec p(Eigen::Index(names.size()));
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      p(k) = spec.param_low(k) + (spec.param_high(k) - spec.param_low(k)) * unit(rng);
      tr.params[names[std::size_t(k)]] = p(k);
    }
    Vec x0(d);
    for (int c = 0; c < d; ++c) x0(c) = spec.ic_low(c) + (spec.ic_high(c) - spec.ic_low(c)) * unit(rng);

    std::vector<std::vector<double>> per_channel(static_cast<std::size_t>(d));
    if (spec.observation == ObservationScheme::Full) {
      const auto t = sample_times(spec, spec.dt_for(0), rng);
      for (auto& pc : per_channel) pc = t;
    } else {
      for (int c = 0; c < d; ++c) per_channel[std::size_t(c)] = sample_times(spec, spec.dt_for(c), rng);
    }
    std::set<double> all;
    for (const auto& pc : per_channel) all.insert(pc.begin(), pc.end());
    std::vector<double> t_union(all.begin(), all.end());

    std::vector<Vec> xs;
    try {
      xs = reference_integrate(sys.with_params(p), x0, t_union, ref);
      for (const auto& x : xs)
        if (!x.allFinite()) throw NumericError("non-finite state");
    } catch (const NumericError&) {
      ++local.skipped;
      local.skipped_ids.push_back(tr.id);
      continue;
    }

    std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
    std::map<double, std::size_t> where;
    for (std::size_t k = 0; k < t_union.size(); ++k) where[t_union[k]] = k;
    std::map<double, Observation> obs;
    for (int c = 0; c < d; ++c) {
      for (double tk : per_channel[std::size_t(c)]) {
        if (spec.withhold_ic && tk == 0.0) continue;
        double v = xs[where[tk]](c);
        if (spec.noise_std > 0) v += noise(rng);
        auto& o = obs[tk];
        o.t = tk;
        o.channels[c] = v;
      }
    }
    for (auto& [tk, o] : obs) tr.observations.push_back(std::move(o));
    tr.ic_given = !spec.withhold_ic;
    tr.true_ic = x0;
    out.push_back(std::move(tr));
    ++local.generated;
  }
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Time grids.

enum class GridKind { Key, Solver };

struct TimeGrid {
  std::vector<double> times;
  std::vector<GridKind> kinds;
  std::vector<std::vector<int>> observed;  // per entry; empty for solver entries

  std::size_t key_count() const {
    return std::size_t(std::count(kinds.begin(), kinds.end(), GridKind::Key));
  }
};

// Sub-steps that cover one gap between key times.
inline std::vector<double> split_gap(double gap, double max_dt, Chunking mode,
                                     std::mt19937_64& rng) {
  if (!(max_dt > 0.0)) throw ConfigError("split_gap: max_dt must be positive");
  std::vector<double> steps;
  if (!(gap > 0.0)) return steps;
  const double tol = 1e-12 * std::max(1.0, gap);
  if (gap <= max_dt + tol) return {gap};
  switch (mode) {
    case Chunking::Greedy: {
      double used = 0.0;
      while (gap - used > max_dt + tol) {
        steps.push_back(max_dt);
        used += max_dt;
      }
      steps.push_back(gap - used);
      break;
    }
    case Chunking::Uniform: {
      const long n = long(std::ceil(gap / max_dt - 1e-12));
      steps.assign(std::size_t(n), gap / double(n));
      break;
    }
    case Chunking::Random: {
      std::uniform_real_distribution<double> u(0.2 * max_dt, max_dt);
      double used = 0.0;
      while (gap - used > max_dt + tol) {
        // uniform_real_distribution draws [a, b); flip to (a, b].
        const double s = 1.2 * max_dt - u(rng);
        steps.push_back(s);
        used += s;
      }
      steps.push_back(gap - used);
      break;
    }
  }
  return steps;
}

// Grid over key times key[0] < key[1] < ...; returns per-entry times and kinds.
inline TimeGrid plan_key_grid(const std::vector<double>& keys,
                              const std::vector<std::vector<int>>& observed, double max_dt,
                              Chunking mode, std::mt19937_64& rng) {
  TimeGrid g;
  if (keys.empty()) return g;
  g.times.push_back(keys.front());
  g.kinds.push_back(GridKind::Key);
  g.observed.push_back(observed.front());
  for (std::size_t k = 1; k < keys.size(); ++k) {
    const auto steps = split_gap(keys[k] - keys[k - 1], max_dt, mode, rng);
    double t = keys[k - 1];
    for (std::size_t s = 0; s + 1 < steps.size(); ++s) {
      t += steps[s];
      g.times.push_back(t);
      g.kinds.push_back(GridKind::Solver);
      g.observed.emplace_back();
    }
    g.times.push_back(keys[k]);
    g.kinds.push_back(GridKind::Key);
    g.observed.push_back(observed[k]);
  }
  return g;
}

// Key times are the observation times, preceded by t=0 when the trajectory
// has no observation there (withheld initial condition).
inline std::pair<std::vector<double>, std::vector<std::vector<int>>> key_times(
    const Trajectory& tr) {
  std::vector<double> keys;
  std::vector<std::vector<int>> obs;
  if (tr.observations.empty() || tr.observations.front().t > 0.0) {
    keys.push_back(0.0);
    obs.emplace_back();
  }
  for (const auto& o : tr.observations) {
    keys.push_back(o.t);
    std::vector<int> c;
    for (const auto& kv : o.channels) c.push_back(kv.first);
    obs.push_back(std::move(c));
  }
  return {keys, obs};
}

inline TimeGrid plan_time_grid(const Trajectory& tr, double max_dt, Chunking mode,
                               std::uint64_t seed) {
  if (!(max_dt > 0.0)) throw ConfigError("plan_time_grid: max_dt must be positive");
  auto rng = make_rng(seed, 0x67726964ULL);
  const auto [keys, obs] = key_times(tr);
  return plan_key_grid(keys, obs, max_dt, mode, rng);
}

// ---------------------------------------------------------------------------
// Batches. Arrays are stored time-major: values[k] is (trajectory x channel)
// at key index k. Key index 0 is t=0 for every trajectory.

struct Batch {
  std::vector<std::size_t> source;  // corpus index per row
  std::vector<std::string> ids;
  std::vector<bool> ic_given;
  std::vector<Mat> values;
  std::vector<Mat> mask;  // 1 = observed
  Mat times;              // traj x key
  Mat pad;                // traj x key, 1 = real entry
  Mat params;             // traj x n_params

  Eigen::Index rows() const { return Eigen::Index(ids.size()); }
  std::size_t key_count() const { return values.size(); }
  long n_data() const {
    double n = 0.0;
    for (const auto& m : mask) n += m.sum();
    return long(std::llround(n));
  }
};

inline Batch build_batch(const std::vector<Trajectory>& trajs,
                         const std::vector<std::size_t>& rows,
                         const std::vector<std::string>& param_names, int dim) {
  Batch b;
  std::size_t width = 0;
  std::vector<std::pair<std::vector<double>, std::vector<std::vector<int>>>> keys;
  for (std::size_t r : rows) {
    keys.push_back(key_times(trajs[r]));
    width = std::max(width, keys.back().first.size());
  }
  const auto n = Eigen::Index(rows.size());
  b.values.assign(width, Mat::Zero(n, dim));
  b.mask.assign(width, Mat::Zero(n, dim));
  b.times = Mat::Zero(n, Eigen::Index(width));
  b.pad = Mat::Zero(n, Eigen::Index(width));
  b.params = Mat::Zero(n, Eigen::Index(param_names.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Trajectory& tr = trajs[rows[std::size_t(i)]];
    b.source.push_back(rows[std::size_t(i)]);
    b.ids.push_back(tr.id);
    b.ic_given.push_back(tr.ic_given);
    b.params.row(i) = tr.param_vector(param_names).transpose();
    const auto& kt = keys[std::size_t(i)].first;
    const std::size_t offset = tr.observations.empty() || tr.observations.front().t > 0.0 ? 1 : 0;
    for (std::size_t k = 0; k < width; ++k) {
      if (k < kt.size()) {
        b.times(i, Eigen::Index(k)) = kt[k];
        b.pad(i, Eigen::Index(k)) = 1.0;
        if (k >= offset) {
          for (const auto& [c, v] : tr.observations[k - offset].channels) {
            b.values[k](i, c) = v;
            b.mask[k](i, c) = 1.0;
          }
        }
      } else {
        b.times(i, Eigen::Index(k)) = kt.back();
      }
    }
  }
  return b;
}

inline std::vector<std::string> default_param_names(const std::vector<Trajectory>& trajs) {
  std::vector<std::string> names;
  if (!trajs.empty())
    for (const auto& kv : trajs.front().params) names.push_back(kv.first);
  return names;
}

inline std::vector<Batch> make_batches(const std::vector<Trajectory>& trajs, int batch_size,
                                       std::uint64_t seed,
                                       std::vector<std::string> param_names = {},
                                       int dim = -1) {
  if (trajs.empty()) throw ConfigError("make_batches: empty corpus");
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be at least 1");
  if (param_names.empty()) param_names = default_param_names(trajs);
  if (dim < 0) {
    for (const auto& t : trajs) {
      if (t.true_ic) dim = std::max(dim, int(t.true_ic->size()));
      for (const auto& o : t.observations)
        if (!o.channels.empty()) dim = std::max(dim, o.channels.rbegin()->first + 1);
    }
  }
  std::vector<std::size_t> order(trajs.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  auto rng = make_rng(seed, 0x73687566ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t s = 0; s < order.size(); s += std::size_t(batch_size)) {
    const std::size_t e = std::min(order.size(), s + std::size_t(batch_size));
    out.push_back(build_batch(trajs, {order.begin() + long(s), order.begin() + long(e)},
                              param_names, dim));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines corpus.

inline nlohmann::json trajectory_to_json(const Trajectory& tr) {
  nlohmann::json j;
  j["id"] = tr.id;
  j["params"] = nlohmann::json::object();
  for (const auto& [k, v] : tr.params) j["params"][k] = v;
  j["ic_given"] = tr.ic_given;
  auto obs = nlohmann::json::array();
  for (const auto& o : tr.observations) {
    nlohmann::json c = nlohmann::json::object();
    for (const auto& [ch, v] : o.channels) c[std::to_string(ch)] = v;
    obs.push_back({{"t", o.t}, {"c", c}});
  }
  j["observations"] = obs;
  if (tr.true_ic) j["true_ic"] = std::vector<double>(tr.true_ic->data(), tr.true_ic->data() + tr.true_ic->size());
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory tr;
  tr.id = j.at("id").get<std::string>();
  for (const auto& [k, v] : j.at("params").items()) tr.params[k] = v.get<double>();
  tr.ic_given = j.at("ic_given").get<bool>();
  for (const auto& o : j.at("observations")) {
    Observation ob;
    ob.t = o.at("t").get<double>();
    for (const auto& [k, v] : o.at("c").items()) {
      std::size_t used = 0;
      const int ch = std::stoi(k, &used);
      if (used != k.size()) throw ConfigError("bad channel key '" + k + "'");
      ob.channels[ch] = v.get<double>();
    }
    tr.observations.push_back(std::move(ob));
  }
  if (j.contains("true_ic")) {
    const auto v = j.at("true_ic").get<std::vector<double>>();
    tr.true_ic = Eigen::Map<const Vec>(v.data(), Eigen::Index(v.size()));
  }
  return tr;
}

inline void write_corpus(std::ostream& os, const std::vector<Trajectory>& trajs) {
  for (const auto& tr : trajs) os << trajectory_to_json(tr).dump() << '\n';
}

inline std::vector<Trajectory> read_corpus(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  long n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError("corpus line " + std::to_string(n) + ": " + e.what(), n);
    }
  }
  return out;
}

inline void save_corpus(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  write_corpus(f, trajs);
  if (!f) throw ConfigError("write failed for '" + path + "'");
}

inline std::vector<Trajectory> load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open corpus '" + path + "'");
  return read_corpus(f);
}

}  // namespace odenet
