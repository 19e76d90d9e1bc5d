// odenet: generate / train / evaluate / bifurcate / resonance / eigs.
//
// Exit codes: 0 ok, 2 config or usage error, 3 numeric failure,
// 4 a metric missed its acceptance threshold.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "odenet/odenet.hpp"

namespace fs = std::filesystem;
using namespace odenet;

namespace {

constexpr int kOk = 0, kConfig = 2, kNumeric = 3, kThreshold = 4;

struct Options {
  std::string config, out = "out", checkpoint_dir;
  std::vector<std::string> checkpoints;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  bool truth_oracle = false;
  std::string source = "TRUE_IC", trajectory, state, cases = "ABCDE";
  int log_every = 50;
};

void write_file(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  f << s;
  if (!f) throw ConfigError("write failed for '" + p.string() + "'");
}

// Wall-clock notes go to a sidecar log so the artifacts stay byte-stable.
void sidecar(const Options& o, const std::string& line) {
  fs::create_directories(o.out);
  std::ofstream f(fs::path(o.out) / "odenet.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  f << buf << ' ' << line << '\n';
}

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto c = load_experiment(o.config);
  if (o.seed) c.seeds = Seeds::from_base(*o.seed);
  if (o.runs) {
    if (*o.runs < 1) throw ConfigError("--runs must be >= 1");
    c.runs = *o.runs;
  }
  return c;
}

fs::path run_dir(const Options& o, int k) { return fs::path(o.out) / ("run_" + std::to_string(k)); }

// Runs f(k) for k in [0, n) on ODENET_WORKERS threads. Every run finishes
// (its outputs are kept) before the first failure is rethrown.
void for_each_run(int n, const std::function<void(int)>& f) {
  const int w = std::min(worker_count(), n);
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(n));
  auto worker = [&] {
    for (int k; (k = next++) < n;) {
      try {
        f(k);
      } catch (...) {
        errs[std::size_t(k)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < w; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

std::mutex log_mu;

std::function<void(int, double)> progress(const std::string& tag, int every) {
  if (every <= 0) return {};
  return [tag, every](int e, double l) {
    if (e % every != 0) return;
    std::lock_guard<std::mutex> g(log_mu);
    std::cerr << tag << " epoch " << e << " loss " << l << '\n';
  };
}

int cmd_generate(const Options& o) {
  const auto c = load(o);
  GenerateStats st;
  const auto corpus = generate(c, &st);
  fs::create_directories(o.out);
  save_corpus((fs::path(o.out) / "corpus.jsonl").string(), corpus);
  long n_obs = 0, n_vals = 0;
  for (const auto& tr : corpus) {
    n_obs += long(tr.observations.size());
    n_vals += tr.measured_values();
  }
  std::cout << "trajectories " << corpus.size() << " skipped " << st.skipped << " observations " << n_obs
            << " values " << n_vals << '\n';
  for (const auto& id : st.skipped_ids) std::cerr << "warning: skipped trajectory " << id << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  const auto c = load(o);
  GenerateStats st;
  const auto corpus = generate(c, &st);
  fs::create_directories(o.out);
  save_corpus((fs::path(o.out) / "corpus.jsonl").string(), corpus);
  sidecar(o, "train " + c.name + " runs=" + std::to_string(c.runs) + " workers=" + std::to_string(worker_count()));
  for_each_run(c.runs, [&](int k) {
    const Seeds s = c.seeds.for_run(k);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_training(c, corpus, s, progress(c.name + "/run_" + std::to_string(k), o.log_every));
    fs::create_directories(run_dir(o, k));
    save_checkpoint((run_dir(o, k) / "checkpoint.json").string(), r.ck);
    write_file(run_dir(o, k) / "loss.csv", loss_csv(r.train.loss_history));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard<std::mutex> g(log_mu);
    sidecar(o, "run " + std::to_string(k) + " done in " + std::to_string(secs) + " s");
    std::cout << "run " << k << " final loss " << r.train.loss_history.back() << '\n';
  });
  return kOk;
}

std::vector<std::pair<std::string, Checkpoint>> checkpoints_for(const Options& o, const ExperimentConfig& c) {
  std::vector<std::pair<std::string, Checkpoint>> out;
  if (o.truth_oracle) {
    out.emplace_back("truth_oracle", truth_oracle_checkpoint(c));
    return out;
  }
  for (const auto& p : o.checkpoints) out.emplace_back(fs::path(p).parent_path().filename().string(), load_checkpoint(p));
  if (out.empty()) {
    for (int k = 0;; ++k) {
      const auto p = run_dir(o, k) / "checkpoint.json";
      if (!fs::exists(p)) break;
      out.emplace_back("run_" + std::to_string(k), load_checkpoint(p.string()));
    }
  }
  if (out.empty()) throw ConfigError("no checkpoint: pass --checkpoint, --truth-oracle, or train into --out first");
  return out;
}

int cmd_evaluate(const Options& o) {
  const auto c = load(o);
  const auto cks = checkpoints_for(o, c);
  const auto pts = test_points(c);
  std::vector<MetricsReport> reports(cks.size());
  for_each_run(int(cks.size()), [&](int k) { reports[std::size_t(k)] = evaluate(c, cks[std::size_t(k)].second, pts); });

  std::string csv = report_csv_header() + "\n";
  for (std::size_t k = 0; k < cks.size(); ++k) {
    write_file(fs::path(o.out) / ("report_" + cks[k].first + ".json"), to_json(reports[k]).dump(2) + "\n");
    csv += report_csv_row(cks[k].first, reports[k]) + "\n";
  }
  write_file(fs::path(o.out) / "reports.csv", csv);
  const auto agg = aggregate(reports);
  write_file(fs::path(o.out) / "summary.csv", aggregate_csv(agg));
  write_file(fs::path(o.out) / "summary.json",
             nlohmann::json{{"experiment", c.name}, {"runs", cks.size()}, {"metrics", aggregate_json(agg)}}.dump(2) + "\n");
  std::cout << aggregate_csv(agg);

  // Thresholds gate on the mean across runs.
  MetricsReport mean;
  auto mean_of = [&](const std::string& name) -> std::optional<double> {
    for (const auto& [n, s] : agg)
      if (n == name) return s.mean;
    return std::nullopt;
  };
  auto triple = [&](const std::string& p) -> std::optional<NormTriple> {
    const auto l2 = mean_of(p + "_L2");
    if (!l2) return std::nullopt;
    NormTriple t;
    t.l2 = *l2;
    return t;
  };
  mean.rhs = triple("rhs");
  mean.solution = triple("solution");
  mean.kinetic = triple("kinetic");
  mean.param = mean_of("parameter_error");
  const auto fails = threshold_failures(c.thresholds, mean);
  for (const auto& f : fails) std::cerr << "threshold failed: " << f << '\n';
  return fails.empty() ? kOk : kThreshold;
}

int cmd_bifurcate(const Options& o) {
  const auto c = load(o);
  if (c.eval.sweeps.empty()) throw ConfigError("config has no evaluation.bifurcation.sweeps");
  std::optional<Checkpoint> ck;
  if (!o.checkpoints.empty()) ck = load_checkpoint(o.checkpoints.front());
  for (const auto& sw : c.eval.sweeps) {
    const auto grid = sw.grid();
    const auto truth = bifurcation_sweep(truth_sweep_factory(c.system, sw.param), grid, c.eval.sweep_probe_ic,
                                         c.eval.sweep_cycle);
    std::string csv = sweep_csv(truth, "truth");
    std::cout << sw.param << " truth hopf:";
    for (double h : hopf_estimates(truth)) std::cout << ' ' << h;
    std::cout << '\n';
    if (ck) {
      const auto& m = ck->model.rhs;
      const auto model = bifurcation_sweep(
          model_sweep_factory(m, ck->param_names, c.eval.sweep_base_params, sw.param, c.eval.model_sample_dt), grid,
          c.eval.sweep_probe_ic, c.eval.sweep_cycle);
      const auto body = sweep_csv(model, "model");
      csv += body.substr(body.find('\n') + 1);
      std::cout << sw.param << " model hopf:";
      for (double h : hopf_estimates(model)) std::cout << ' ' << h;
      std::cout << '\n';
    }
    write_file(fs::path(o.out) / ("sweep_" + sw.param + ".csv"), csv);
  }
  return kOk;
}

struct ResonanceCase {
  char label;
  double scale;
  Sampling sampling;
  Chunking chunking;
};

int cmd_resonance(const Options& o) {
  const auto base = load(o);
  if (base.system.kind != SystemKind::Bf) throw ConfigError("resonance expects a BF base config");
  // GAMMA cases rely on the irregular data for step randomization. Scales are
  // relative to the base recipe's output-layer init.
  const ResonanceCase all[] = {{'A', 1.0, Sampling::Fixed, Chunking::Greedy},
                               {'B', 0.01, Sampling::Fixed, Chunking::Greedy},
                               {'C', 1.0, Sampling::Fixed, Chunking::Random},
                               {'D', 1.0, Sampling::Gamma, Chunking::Greedy},
                               {'E', 0.01, Sampling::Gamma, Chunking::Greedy}};
  const int v_channel = 4;
  std::ostringstream csv;
  csv << std::setprecision(10)
      << "case,output_scale,sampling,chunking,run,solution_L2,rhs_L2,zigzag_network,zigzag_reference\n";
  for (const auto& rc : all) {
    if (o.cases.find(rc.label) == std::string::npos) continue;
    nlohmann::json j = base.raw;
    j["name"] = base.name + "_" + std::string(1, char(std::tolower(rc.label)));
    const double scale = rc.scale * base.init_output_scale;
    j["rollout"]["output_scale"] = scale;
    j["rollout"]["chunking"] = to_string(rc.chunking);
    j["pathology"]["sampling"] = to_string(rc.sampling);
    auto c = parse_experiment(j);
    c.seeds = base.seeds;
    c.runs = base.runs;
    const auto corpus = generate(c);
    const auto pts = test_points(c);
    std::vector<RunResult> runs(static_cast<std::size_t>(c.runs));
    std::vector<MetricsReport> reps(static_cast<std::size_t>(c.runs));
    for_each_run(c.runs, [&](int k) {
      runs[std::size_t(k)] = run_training(c, corpus, c.seeds.for_run(k), progress(c.name + "/run_" + std::to_string(k), o.log_every));
      reps[std::size_t(k)] = evaluate(c, runs[std::size_t(k)].ck, pts);
    });
    const Vec start = attractor_point(c.system, c.eval.solution.probe_ic, c.eval.solution.cycle);
    std::size_t best = 0;
    for (std::size_t k = 0; k < reps.size(); ++k) {
      if (reps[k].rhs->l2 < reps[best].rhs->l2) best = k;
      const auto d = dual_rollout(runs[k].ck.model.rhs, c.system, start, Vec(0), c.pathology.dt_for(0),
                                  c.train.max_dt, 24, v_channel);
      csv << rc.label << ',' << scale << ',' << to_string(rc.sampling) << ',' << to_string(rc.chunking) << ','
          << k << ',' << (reps[k].solution ? reps[k].solution->l2 : NAN) << ',' << reps[k].rhs->l2 << ','
          << d.zigzag_network << ',' << d.zigzag_reference << '\n';
      fs::create_directories(fs::path(o.out) / c.name / ("run_" + std::to_string(k)));
      save_checkpoint((fs::path(o.out) / c.name / ("run_" + std::to_string(k)) / "checkpoint.json").string(), runs[k].ck);
    }
    const auto d = dual_rollout(runs[best].ck.model.rhs, c.system, start, Vec(0), c.pathology.dt_for(0),
                                c.train.max_dt, 24, v_channel);
    write_file(fs::path(o.out) / c.name / "dual_rollout.csv", dual_rollout_csv(d));
  }
  write_file(fs::path(o.out) / "resonance.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

Vec parse_state(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--state: bad number '" + tok + "'");
    }
  }
  return Eigen::Map<Vec>(v.data(), Eigen::Index(v.size()));
}

int cmd_eigs(const Options& o) {
  const auto src = point_source_from_string(o.source);
  std::optional<ExperimentConfig> c;
  if (!o.config.empty()) c = load(o);
  std::optional<Checkpoint> ck;
  if (!o.checkpoints.empty()) ck = load_checkpoint(o.checkpoints.front());
  if (!c && !ck) throw ConfigError("eigs needs --config (truth) and/or --checkpoint (model)");

  Vec point, params;
  std::string where;
  if (src == PointSource::State) {
    if (o.state.empty()) throw ConfigError("STATE source needs --state x0,x1,...");
    point = parse_state(o.state);
    where = "state";
  } else {
    if (!c) throw ConfigError("TRUE_IC/LEARNED_IC need --config to regenerate the corpus");
    const auto corpus = generate(*c);
    if (corpus.empty()) throw ConfigError("empty corpus");
    const Trajectory* tr = &corpus.front();
    if (!o.trajectory.empty()) {
      tr = nullptr;
      for (const auto& t : corpus)
        if (t.id == o.trajectory) tr = &t;
      if (!tr) throw ConfigError("no trajectory '" + o.trajectory + "'");
    }
    params = tr->param_vector(c->param_names());
    if (src == PointSource::TrueIc) {
      point = *tr->true_ic;
    } else {
      if (!ck) throw ConfigError("LEARNED_IC needs --checkpoint");
      point = learned_start(ck->model, *tr, ck->model.rhs.state_dim);
    }
    where = tr->id;
  }
  if (params.size() == 0 && c) params = Vec(0.5 * (c->pathology.param_low + c->pathology.param_high));

  std::vector<std::pair<std::string, std::vector<std::complex<double>>>> rows;
  if (c) {
    const TruthSystem s = params.size() ? c->system.with_params(params) : c->system;
    if (point.size() != s.dim()) throw ConfigError("state has the wrong dimension");
    rows.emplace_back("truth@" + where, jacobian_eigs(s.rhs_fn(), point));
  }
  if (ck) {
    if (point.size() != ck->model.rhs.state_dim) throw ConfigError("state has the wrong dimension");
    if (params.size() != ck->model.rhs.param_dim) params = Vec::Zero(ck->model.rhs.param_dim);
    rows.emplace_back("model@" + where, jacobian_eigs(model_rhs_fn(ck->model.rhs, params), point));
  }
  const auto csv = eigs_csv(rows);
  write_file(fs::path(o.out) / "eigs.csv", csv);
  std::cout << csv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural ODE system identification"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* s, bool seed_runs) {
    s->add_option("--config", o.config, "experiment JSON");
    s->add_option("--out", o.out, "output directory");
    s->add_option("--log-every", o.log_every, "epochs between progress lines (0 = quiet)");
    if (seed_runs) {
      s->add_option("--seed", o.seed, "base seed (data, init, train, eval derive from it)");
      s->add_option("--runs", o.runs, "independent training runs");
    }
  };
  auto* gen = app.add_subcommand("generate", "write the training corpus");
  common(gen, true);
  auto* tr = app.add_subcommand("train", "train one or more runs");
  common(tr, true);
  auto* ev = app.add_subcommand("evaluate", "score checkpoints; mean and std across runs");
  common(ev, true);
  ev->add_option("--checkpoint", o.checkpoints, "checkpoint file(s); default: <out>/run_*/checkpoint.json");
  ev->add_flag("--truth-oracle", o.truth_oracle, "score the exact model instead");
  auto* bi = app.add_subcommand("bifurcate", "truth and model parameter sweeps");
  common(bi, false);
  bi->add_option("--checkpoint", o.checkpoints, "trained model");
  auto* re = app.add_subcommand("resonance", "cases A..E from a BF base config");
  common(re, true);
  re->add_option("--cases", o.cases, "subset of ABCDE");
  auto* ei = app.add_subcommand("eigs", "Jacobian eigenvalues");
  common(ei, false);
  ei->add_option("--checkpoint", o.checkpoints, "trained model");
  ei->add_option("--source", o.source, "TRUE_IC | LEARNED_IC | STATE");
  ei->add_option("--trajectory", o.trajectory, "trajectory id (default: first)");
  ei->add_option("--state", o.state, "comma-separated state for STATE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_evaluate(o);
    if (*bi) return cmd_bifurcate(o);
    if (*re) return cmd_resonance(o);
    if (*ei) return cmd_eigs(o);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
