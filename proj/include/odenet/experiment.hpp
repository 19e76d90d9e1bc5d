#pragma once

// Experiment configs: one JSON document describing system, composer,
// data pathology, rollout/optimizer settings, seeds and evaluation protocol.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "odenet/checkpoint.hpp"
#include "odenet/dataset.hpp"
#include "odenet/error.hpp"
#include "odenet/evaluation.hpp"
#include "odenet/model.hpp"
#include "odenet/training.hpp"
#include "odenet/truth.hpp"

namespace odenet {

struct Seeds {
  std::uint64_t data = 1, init = 2, train = 3, eval = 4;

  // Run k of a multi-run batch keeps the corpus and evaluation fixed.
  Seeds for_run(int k) const {
    Seeds s = *this;
    s.init += std::uint64_t(k) * 1000003ULL;
    s.train += std::uint64_t(k) * 1000003ULL;
    return s;
  }
  static Seeds from_base(std::uint64_t b) { return {b, b + 1, b + 2, b + 3}; }
};

struct SweepSpec {
  std::string param;
  double start = 0, stop = 0, step = 0;
  std::vector<double> grid() const {
    std::vector<double> g;
    const long n = std::lround((stop - start) / step);
    for (long i = 0; i <= n; ++i) g.push_back(start + double(i) * step);
    return g;
  }
};

struct EvalSpec {
  TestProtocol test;
  SolutionProtocol solution;
  bool solution_enabled = true;
  std::vector<SweepSpec> sweeps;
  Vec sweep_probe_ic;
  Vec sweep_base_params;  // network inputs held fixed while sweeping a coupling
  LimitCycleOptions sweep_cycle;
  double model_sample_dt = 0.1;
};

struct Thresholds {
  std::optional<double> rhs_l2, solution_l2, kinetic_l2, param_error;
};

struct ExperimentConfig {
  std::string name;
  TruthSystem system = TruthSystem::make_urp({});
  Composer composer = Composer::BlackBox;
  std::vector<int> hidden{64, 64};
  bool kappa_trainable = false;
  double kappa_init = 1.0;
  bool scale_channels = false;        // corpus min-max normalization of states
  std::optional<Vec> network_scale;   // explicit output multiplier; default derived
  double init_output_scale = 1.0;     // output-layer init factor (0.01 damps resonance)
  PathologySpec pathology;
  TrainConfig train;
  double infer_max_dt = 0.1;
  Seeds seeds;
  EvalSpec eval;
  Thresholds thresholds;
  int runs = 1;
  nlohmann::json raw;

  std::vector<std::string> param_names() const { return system.param_names(); }
};

namespace detail {

inline Vec vec_field(const nlohmann::json& j, const char* key, const Vec& fallback) {
  if (!j.contains(key)) return fallback;
  return vec_from_json(j.at(key));
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline SweepSpec parse_sweep(const nlohmann::json& j) {
  SweepSpec s;
  s.param = j.at("param").get<std::string>();
  s.start = j.at("start").get<double>();
  s.stop = j.at("stop").get<double>();
  s.step = j.at("step").get<double>();
  if (!(s.step > 0) || s.stop < s.start) throw ConfigError("sweep '" + s.param + "': bad grid");
  return s;
}

inline LimitCycleOptions parse_cycle(const nlohmann::json& j, LimitCycleOptions o) {
  o.t_end = get_or(j, "t_end", o.t_end);
  o.t_cut = get_or(j, "t_cut", o.t_cut);
  o.sample_dt = get_or(j, "sample_dt", o.sample_dt);
  o.amplitude_threshold = get_or(j, "amplitude_threshold", o.amplitude_threshold);
  if (!(o.t_end > o.t_cut && o.t_cut >= 0 && o.sample_dt > 0))
    throw ConfigError("limit cycle: need 0 <= t_cut < t_end and sample_dt > 0");
  return o;
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  using detail::get_or;
  using detail::vec_field;
  ExperimentConfig c;
  c.raw = j;
  try {
    c.name = j.at("name").get<std::string>();
    c.system = truth_from_json(j.at("system"));
    const int d = c.system.dim();
    const int np = int(c.system.param_names().size());

    const auto& comp = j.at("composer");
    c.composer = composer_from_string(comp.at("kind").get<std::string>());
    c.hidden = get_or(comp, "hidden", c.hidden);
    c.kappa_trainable = get_or(comp, "kappa_trainable", false);
    c.kappa_init = get_or(comp, "kappa_init", 1.0);
    if (comp.contains("network_scale")) c.network_scale = vec_from_json(comp.at("network_scale"));
    c.scale_channels = get_or(j, "scaling", std::string("none")) == "minmax";
    if (j.contains("scaling") && j.at("scaling") != "none" && j.at("scaling") != "minmax")
      throw ConfigError("scaling must be \"none\" or \"minmax\"");

    const auto& p = j.at("pathology");
    auto& ps = c.pathology;
    if (p.contains("mean_dt")) {
      ps.mean_dt = p.at("mean_dt").is_array() ? p.at("mean_dt").get<std::vector<double>>()
                                              : std::vector<double>{p.at("mean_dt").get<double>()};
    }
    ps.sampling = sampling_from_string(get_or(p, "sampling", std::string("FIXED")));
    ps.gamma_shape = get_or(p, "gamma_shape", ps.gamma_shape);
    ps.observation = observation_from_string(get_or(p, "observation", std::string("FULL")));
    ps.withhold_ic = get_or(p, "withhold_ic", false);
    ps.horizon = get_or(p, "horizon", ps.horizon);
    ps.n_trajectories = get_or(p, "n_trajectories", ps.n_trajectories);
    ps.noise_std = get_or(p, "noise_std", 0.0);
    ps.ic_low = vec_field(p, "ic_low", Vec());
    ps.ic_high = vec_field(p, "ic_high", Vec());
    ps.param_low = vec_field(p, "param_low", Vec::Zero(np));
    ps.param_high = vec_field(p, "param_high", Vec::Zero(np));
    ps.validate(d, np);

    const auto r = j.value("rollout", nlohmann::json::object());
    auto& tc = c.train;
    tc.max_dt = get_or(r, "max_dt", tc.max_dt);
    tc.chunking = chunking_from_string(get_or(r, "chunking", std::string("GREEDY")));
    tc.epochs = get_or(r, "epochs", tc.epochs);
    tc.batch_size = get_or(r, "batch_size", tc.batch_size);
    c.init_output_scale = get_or(r, "output_scale", 1.0);
    c.infer_max_dt = get_or(r, "infer_max_dt", tc.max_dt);

    const auto o = j.value("optimizer", nlohmann::json::object());
    tc.adam.lr = get_or(o, "lr", tc.adam.lr);
    tc.adam.beta1 = get_or(o, "beta1", tc.adam.beta1);
    tc.adam.beta2 = get_or(o, "beta2", tc.adam.beta2);
    tc.adam.eps = get_or(o, "eps", tc.adam.eps);
    tc.lr_final_ratio = get_or(o, "lr_final_ratio", 1.0);
    tc.kappa_lr_scale = get_or(o, "kappa_lr_scale", 1.0);
    tc.ic_lr_scale = get_or(o, "ic_lr_scale", 1.0);
    tc.validate();
    if (tc.epochs < 1 && !j.value("allow_zero_epochs", false))
      throw ConfigError("rollout: epochs must be at least 1");
    if (!(c.init_output_scale > 0)) throw ConfigError("rollout: output_scale must be positive");

    const auto s = j.value("seeds", nlohmann::json::object());
    c.seeds.data = get_or(s, "data", c.seeds.data);
    c.seeds.init = get_or(s, "init", c.seeds.init);
    c.seeds.train = get_or(s, "train", c.seeds.train);
    c.seeds.eval = get_or(s, "eval", c.seeds.eval);
    c.runs = get_or(j, "runs", 1);
    if (c.runs < 1) throw ConfigError("runs must be at least 1");

    const auto e = j.value("evaluation", nlohmann::json::object());
    auto& ev = c.eval;
    const auto tp = e.value("test_points", nlohmann::json::object());
    ev.test.n_trajectories = get_or(tp, "n", 1000);
    ev.test.ic_low = vec_field(tp, "ic_low", ps.ic_low);
    ev.test.ic_high = vec_field(tp, "ic_high", ps.ic_high);
    ev.test.param_low = vec_field(tp, "param_low", ps.param_low);
    ev.test.param_high = vec_field(tp, "param_high", ps.param_high);
    ev.test.t_discard = get_or(tp, "t_discard", ev.test.t_discard);
    ev.test.t_end = get_or(tp, "t_end", ev.test.t_end);

    if (e.contains("solution") && e.at("solution").is_null()) {
      ev.solution_enabled = false;
    } else {
      const auto so = e.value("solution", nlohmann::json::object());
      auto& sp = ev.solution;
      sp.param_sets.clear();
      if (so.contains("param_sets"))
        for (const auto& ps_j : so.at("param_sets")) sp.param_sets.push_back(vec_from_json(ps_j));
      else
        sp.param_sets.push_back(Vec::Zero(np));
      for (const auto& v : sp.param_sets)
        if (v.size() != np) throw ConfigError("solution: each parameter set needs " + std::to_string(np) + " entries");
      sp.probe_ic = vec_field(so, "probe_ic", 0.5 * (ps.ic_low + ps.ic_high));
      if (sp.probe_ic.size() != d) throw ConfigError("solution: probe_ic has the wrong size");
      sp.n_points = get_or(so, "n_points", 50);
      sp.horizon = get_or(so, "horizon", 20.0);
      sp.sample_dt = get_or(so, "sample_dt_transient", sp.sample_dt);
      sp.infer_max_dt = c.infer_max_dt;
      sp.cycle = detail::parse_cycle(so, sp.cycle);
    }

    const auto bf = e.value("bifurcation", nlohmann::json::object());
    if (bf.contains("sweeps"))
      for (const auto& sw : bf.at("sweeps")) ev.sweeps.push_back(detail::parse_sweep(sw));
    ev.sweep_probe_ic = vec_field(bf, "probe_ic", ev.solution.probe_ic.size() ? ev.solution.probe_ic
                                                                              : Vec(0.5 * (ps.ic_low + ps.ic_high)));
    ev.sweep_base_params = vec_field(bf, "base_params", 0.5 * (ps.param_low + ps.param_high));
    ev.sweep_cycle = detail::parse_cycle(bf, ev.sweep_cycle);
    ev.model_sample_dt = get_or(bf, "model_sample_dt", c.infer_max_dt);

    const auto a = j.value("acceptance", nlohmann::json::object());
    if (a.contains("rhs_l2_max")) c.thresholds.rhs_l2 = a.at("rhs_l2_max").get<double>();
    if (a.contains("solution_l2_max")) c.thresholds.solution_l2 = a.at("solution_l2_max").get<double>();
    if (a.contains("kinetic_l2_max")) c.thresholds.kinetic_l2 = a.at("kinetic_l2_max").get<double>();
    if (a.contains("param_error_max")) c.thresholds.param_error = a.at("param_error_max").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("experiment config: ") + ex.what());
  }
  if (c.composer != Composer::BlackBox && c.composer != Composer::GrayFunctional &&
      c.system.kind == SystemKind::Linear)
    throw ConfigError("experiment config: LINEAR supports BLACK_BOX and GRAY_FUNCTIONAL only as a test hook");
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_experiment(j);
}

inline std::vector<Trajectory> generate(const ExperimentConfig& c, GenerateStats* stats = nullptr) {
  return generate_corpus(c.system, c.pathology, c.seeds.data, stats);
}

inline ModelSystem model_system_for(SystemKind k) {
  switch (k) {
    case SystemKind::Urp: return ModelSystem::Urp;
    case SystemKind::Bf: return ModelSystem::Bf;
    case SystemKind::Linear: return ModelSystem::Custom;
  }
  return ModelSystem::Custom;
}

// Network output multiplier. BLACK_BOX predicts ds/dt in internal units and
// needs none; the B&F gray box predicts growth-rate times biomass, whose
// natural size is the biomass range (rates are below 1).
inline Vec default_network_scale(const ExperimentConfig& c, const ChannelScaling& sc, int width) {
  if (c.network_scale) {
    if (c.network_scale->size() != width)
      throw ConfigError("composer.network_scale needs " + std::to_string(width) + " entries");
    return *c.network_scale;
  }
  if (c.composer == Composer::GrayFunctional && c.system.kind == SystemKind::Bf)
    return sc.range.head(3);
  if (c.composer == Composer::BlackBox) return sc.range;  // physical rate = range * ds
  return Vec::Ones(width);
}

inline Checkpoint build_model(const ExperimentConfig& c, const std::vector<Trajectory>& corpus,
                              const Seeds& seeds) {
  Checkpoint ck;
  LearnedRhs& m = ck.model.rhs;
  const int d = c.system.dim();
  m.composer = c.composer;
  m.system = model_system_for(c.system.kind);
  if (m.system == ModelSystem::Custom && c.composer == Composer::GrayFunctional)
    throw ConfigError("experiment: CUSTOM skeletons are library-only");
  m.state_dim = d;
  ck.param_names = c.param_names();
  m.param_dim = int(ck.param_names.size());
  m.scaling = c.scale_channels ? fit_scaling(corpus, d) : ChannelScaling::identity(d);
  if (c.system.kind == SystemKind::Bf) m.bf = c.system.bf;
  if (c.composer == Composer::GrayFunctional) {
    m.kappa_names = c.system.kappa_names();
    const Vec truth = c.system.kappa();
    m.kappa.resize(1, truth.size());
    m.kappa_trainable.resize(1, truth.size());
    for (Eigen::Index k = 0; k < truth.size(); ++k) {
      m.kappa(0, k) = c.kappa_trainable ? c.kappa_init : truth(k);
      m.kappa_trainable(0, k) = c.kappa_trainable ? 1.0 : 0.0;
    }
  } else {
    m.kappa.resize(1, 0);
    m.kappa_trainable.resize(1, 0);
  }
  if (c.composer == Composer::GrayAdditive || c.composer == Composer::GrayMultiplicative) {
    ck.prior_source = c.system;
    m.prior = linear_part_prior(c.system);
  }
  std::vector<int> widths{d + m.param_dim};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(m.kinetic_width());
  m.mlp = init_weights(widths, seeds.init, c.init_output_scale);
  m.output_scale = default_network_scale(c, m.scaling, m.kinetic_width());
  m.validate();
  ensure_ics(ck.model, corpus);
  ck.seed = seeds.init;
  ck.extra = {{"experiment", c.name}, {"seeds", {{"data", seeds.data}, {"init", seeds.init},
                                                 {"train", seeds.train}, {"eval", seeds.eval}}}};
  return ck;
}

// A model whose network is replaced by the exact truth sub-function.
inline Checkpoint truth_oracle_checkpoint(const ExperimentConfig& c) {
  Checkpoint ck = build_model(c, {}, c.seeds);
  ck.oracle_source = c.system.with_params(Vec(0.5 * (c.pathology.param_low + c.pathology.param_high)));
  ck.model.rhs.oracle = truth_oracle(*ck.oracle_source, c.composer);
  ck.model.rhs.scaling = ChannelScaling::identity(c.system.dim());
  ck.model.rhs.output_scale = Vec::Ones(ck.model.rhs.kinetic_width());
  if (c.composer == Composer::GrayFunctional) ck.model.rhs.kappa = c.system.kappa().transpose();
  return ck;
}

inline TrainConfig train_config(const ExperimentConfig& c, const Seeds& seeds) {
  TrainConfig t = c.train;
  t.seed = seeds.train;
  return t;
}

inline TestPointSet test_points(const ExperimentConfig& c) {
  TestProtocol p = c.eval.test;
  p.seed = c.seeds.eval;
  return make_test_points(c.system, p);
}

inline MetricsReport evaluate(const ExperimentConfig& c, const Checkpoint& ck, const TestPointSet& pts) {
  const LearnedRhs& m = ck.model.rhs;
  MetricsReport r;
  r.rhs = rhs_error(m, c.system, pts);
  if (m.composer == Composer::GrayFunctional) {
    r.kinetic = kinetic_error(m, c.system, pts);
    if (c.system.kind == SystemKind::Bf) r.growth_rate = growth_rate_error(m, c.system, pts);
    if (m.kappa_trainable.sum() > 0) {
      const Vec learned = m.kappa.row(0).transpose();
      r.param = param_error(c.system.kappa(), learned);
    }
  }
  if (c.eval.solution_enabled) r.solution = solution_error(m, c.system, c.eval.solution);
  r.metadata = {{"experiment", c.name},
                {"test_points", pts.size()},
                {"test_points_skipped", pts.skipped},
                {"eval_seed", c.seeds.eval},
                {"l2_form", "per-row root averaged over N*d"}};
  if (ck.extra.contains("seeds")) r.metadata["seeds"] = ck.extra.at("seeds");
  if (m.kappa.cols()) {
    nlohmann::json kj = nlohmann::json::object();
    for (Eigen::Index k = 0; k < m.kappa.cols(); ++k) kj[m.kappa_names[std::size_t(k)]] = m.kappa(0, k);
    r.metadata["kappa"] = kj;
  }
  return r;
}

// Names of thresholds that the report violates.
inline std::vector<std::string> threshold_failures(const Thresholds& t, const MetricsReport& r) {
  std::vector<std::string> f;
  auto check = [&f](const char* name, const std::optional<double>& lim, std::optional<double> v) {
    if (lim && (!v || !(*v <= *lim))) f.push_back(name);
  };
  check("rhs_l2", t.rhs_l2, r.rhs ? std::optional<double>(r.rhs->l2) : std::nullopt);
  check("solution_l2", t.solution_l2, r.solution ? std::optional<double>(r.solution->l2) : std::nullopt);
  check("kinetic_l2", t.kinetic_l2, r.kinetic ? std::optional<double>(r.kinetic->l2) : std::nullopt);
  check("param_error", t.param_error, r.param);
  return f;
}

}  // namespace odenet
