#pragma once

// Semi-teacher-forced rollouts over padded batches, the masked MSE loss, the
// Adam training loop with trainable couplings and initial conditions, and
// autoregressive inference.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/dataset.hpp"
#include "odenet/error.hpp"
#include "odenet/model.hpp"
#include "odenet/optim.hpp"

namespace odenet {

enum class RolloutMode { TeacherForcedTrain, AutoregressiveInfer };

// A learned vector field plus the per-trajectory initial-condition estimates
// fitted alongside it (internal coordinates, 1 x d each).
struct OdeNetModel {
  LearnedRhs rhs;
  std::map<std::string, Mat> ic;
  std::map<std::string, Mat> ic_mask;  // 1 = trainable channel

  Vec learned_ic_physical(const std::string& id) const {
    auto it = ic.find(id);
    if (it == ic.end()) throw ConfigError("model has no learned initial condition for '" + id + "'");
    return rhs.scaling.to_physical(it->second).row(0).transpose();
  }
};

struct TrainConfig {
  double max_dt = 0.1;
  Chunking chunking = Chunking::Greedy;
  int epochs = 2000;
  int batch_size = 32;
  AdamConfig adam;
  double lr_final_ratio = 1.0;  // lr decays geometrically to lr * ratio over the run
  double kappa_lr_scale = 1.0;
  double ic_lr_scale = 1.0;
  std::uint64_t seed = 0;
  std::function<void(int, double)> on_epoch;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (!(max_dt > 0.0)) throw ConfigError("train: max_dt must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (!(adam.lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (!(lr_final_ratio > 0.0)) throw ConfigError("train: lr_final_ratio must be positive");
  }
};

// Adam moments keyed by leaf name, so training can resume from a checkpoint.
struct OptimizerState {
  long step = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments;
};

struct TrainResult {
  std::vector<double> loss_history;  // per-epoch mean of batch losses
  OptimizerState optimizer;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Step schedules.

struct RowSchedule {
  std::vector<double> steps;
  std::vector<int> key_at;  // key index reached after each step, or -1
};

inline RowSchedule schedule_row(const Batch& b, Eigen::Index r, double max_dt, Chunking mode,
                                std::mt19937_64& rng) {
  RowSchedule s;
  const auto n = Eigen::Index(b.key_count());
  for (Eigen::Index k = 1; k < n; ++k) {
    if (b.pad(r, k) == 0.0) break;
    const auto sub = split_gap(b.times(r, k) - b.times(r, k - 1), max_dt, mode, rng);
    for (std::size_t j = 0; j < sub.size(); ++j) {
      s.steps.push_back(sub[j]);
      s.key_at.push_back(j + 1 == sub.size() ? int(k) : -1);
    }
  }
  return s;
}

inline std::vector<RowSchedule> schedule_batch(const Batch& b, double max_dt, Chunking mode,
                                               std::uint64_t seed, std::uint64_t salt) {
  std::vector<RowSchedule> out;
  for (Eigen::Index r = 0; r < b.rows(); ++r) {
    auto rng = make_rng(seed, salt, std::hash<std::string>{}(b.ids[std::size_t(r)]));
    out.push_back(schedule_row(b, r, max_dt, mode, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rollout.

template <class T>
struct RolloutOutput {
  T sq_sum;                      // sum of squared errors on observed entries (internal units)
  long n_data = 0;
  std::vector<Mat> predictions;  // per key index, traj x channel, physical units
};

inline Mat masked_internal(const LearnedRhs& m, const Mat& values, const Mat& mask) {
  Mat v = m.scaling.to_internal(values);
  // Unobserved entries never reach the graph, whatever the stored value.
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (mask.data()[i] == 0.0) v.data()[i] = 0.0;
  return v;
}

// Integrates every row through its own schedule in lock-step. After a row
// reaches a key time its prediction is recorded; in teacher-forced mode its
// observed channels are then overwritten by the data.
template <class T>
RolloutOutput<T> rollout(const LearnedRhs& m, const RhsParams<T>& p, const T& s0, const Batch& b,
                         const std::vector<RowSchedule>& sched, RolloutMode mode,
                         bool record = false) {
  const Eigen::Index n = b.rows();
  const int d = m.state_dim;
  if (ad::value_of(s0).rows() != n || ad::value_of(s0).cols() != d)
    throw ConfigError("rollout: initial state shape mismatch");
  if (Eigen::Index(sched.size()) != n) throw ConfigError("rollout: schedule count mismatch");

  RolloutOutput<T> out;
  out.n_data = b.n_data();
  if (record) {
    out.predictions.assign(b.key_count(), Mat::Zero(n, d));
    out.predictions[0] = m.scaling.to_physical(ad::value_of(s0));
  }
  out.sq_sum = ad::masked_sq_sum(s0, masked_internal(m, b.values[0], b.mask[0]), b.mask[0]);

  std::size_t total = 0;
  for (const auto& s : sched) total = std::max(total, s.steps.size());

  T state = s0;
  Vec h(n);
  Mat data(n, d), mask(n, d);
  for (std::size_t g = 0; g < total; ++g) {
    bool any_key = false;
    data.setZero();
    mask.setZero();
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& s = sched[std::size_t(r)];
      h(r) = g < s.steps.size() ? s.steps[g] : 0.0;
      if (g < s.steps.size() && s.key_at[g] >= 0) {
        const int k = s.key_at[g];
        mask.row(r) = b.mask[std::size_t(k)].row(r);
        data.row(r) = masked_internal(m, b.values[std::size_t(k)].row(r), mask.row(r));
        any_key = true;
      }
    }
    state = rk4_advance(m, p, state, b.params, h);
    const Mat& v = ad::value_of(state);
    if (!v.allFinite()) {
      for (Eigen::Index r = 0; r < n; ++r) {
        if (!v.row(r).allFinite()) {
          double t = 0.0;
          for (std::size_t j = 0; j <= g && j < sched[std::size_t(r)].steps.size(); ++j)
            t += sched[std::size_t(r)].steps[j];
          throw RolloutError("rollout: non-finite state in trajectory " + b.ids[std::size_t(r)] +
                                 " at t=" + std::to_string(t),
                             long(g));
        }
      }
    }
    if (!any_key) continue;
    if (record) {
      const Mat phys = m.scaling.to_physical(v);
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto& s = sched[std::size_t(r)];
        if (g < s.steps.size() && s.key_at[g] >= 0)
          out.predictions[std::size_t(s.key_at[g])].row(r) = phys.row(r);
      }
    }
    if (mask.sum() > 0) {
      out.sq_sum = ad::add(out.sq_sum, ad::masked_sq_sum(state, data, mask));
      if (mode == RolloutMode::TeacherForcedTrain) state = ad::mask_blend(state, data, mask);
    }
  }
  return out;
}

// L = (1/N_data) * sum of squared errors over observed entries.
template <class T>
T masked_mse(const RolloutOutput<T>& r) {
  if (r.n_data <= 0) throw UsageError("masked_mse: no observed entries (N_data = 0)");
  return ad::scale(r.sq_sum, 1.0 / double(r.n_data));
}

// Direct form over prediction arrays (physical units), used by tests.
inline double masked_mse(const std::vector<Mat>& pred, const Batch& b) {
  double s = 0.0;
  long n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    s += (b.mask[k].array() * (pred[k] - b.values[k]).array().square()).sum();
    n += long(std::llround(b.mask[k].sum()));
  }
  if (n == 0) throw UsageError("masked_mse: no observed entries (N_data = 0)");
  return s / double(n);
}

// ---------------------------------------------------------------------------
// Initial conditions.

inline Mat ic_trainable_mask(const Trajectory& tr, int d) {
  Mat mask = Mat::Ones(1, d);
  if (!tr.observations.empty() && tr.observations.front().t == 0.0)
    for (const auto& kv : tr.observations.front().channels) mask(0, kv.first) = 0.0;
  return mask;
}

// Registers a zero estimate (internal units) for every trajectory whose
// initial condition is not fully measured.
inline void ensure_ics(OdeNetModel& model, const std::vector<Trajectory>& corpus) {
  const int d = model.rhs.state_dim;
  for (const auto& tr : corpus) {
    if (tr.ic_given) continue;
    if (!model.ic.count(tr.id)) model.ic[tr.id] = Mat::Zero(1, d);
    model.ic_mask[tr.id] = ic_trainable_mask(tr, d);
  }
}

// Start state of every row: measured channels from the data, the rest from
// the model's estimates. With T = Tensor the estimates become leaves.
template <class T>
T assemble_ic(const OdeNetModel& model, const Batch& b, std::vector<std::pair<std::string, T>>* leaves,
              ad::Tape* tape) {
  std::vector<T> rows;
  const int d = model.rhs.state_dim;
  for (Eigen::Index r = 0; r < b.rows(); ++r) {
    const auto& id = b.ids[std::size_t(r)];
    auto it = model.ic.find(id);
    const Mat est = (b.ic_given[std::size_t(r)] || it == model.ic.end()) ? Mat::Zero(1, d) : it->second;
    if constexpr (std::is_same_v<T, Mat>) {
      rows.push_back(est);
    } else {
      if (!b.ic_given[std::size_t(r)] && it != model.ic.end()) {
        T leaf = tape->leaf(est);
        if (leaves) leaves->emplace_back(id, leaf);
        rows.push_back(leaf);
      } else {
        rows.push_back(tape->constant(est));
      }
    }
  }
  const T stacked = ad::vstack(rows);
  return ad::mask_blend(stacked, masked_internal(model.rhs, b.values[0], b.mask[0]), b.mask[0]);
}

// ---------------------------------------------------------------------------
// Training.

inline void register_params(ParamStore& store, OdeNetModel& model, const TrainConfig& cfg) {
  auto& layers = model.rhs.mlp.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    store.add("mlp/w" + std::to_string(i), layers[i].weight);
    store.add("mlp/b" + std::to_string(i), layers[i].bias);
  }
  if (model.rhs.kappa_trainable.sum() > 0)
    store.add("kappa", model.rhs.kappa, model.rhs.kappa_trainable, cfg.kappa_lr_scale);
  for (auto& [id, v] : model.ic) store.add("ic/" + id, v, model.ic_mask.at(id), cfg.ic_lr_scale);
}

inline OptimizerState export_optimizer(const ParamStore& store) {
  OptimizerState s;
  s.step = store.step();
  for (const auto& l : store.leaves()) s.moments[l.name] = {l.m, l.v};
  return s;
}

inline void import_optimizer(ParamStore& store, const OptimizerState& s) {
  store.set_step(s.step);
  for (auto& l : store.leaves()) {
    auto it = s.moments.find(l.name);
    if (it == s.moments.end()) continue;
    if (it->second.first.rows() != l.m.rows() || it->second.first.cols() != l.m.cols())
      throw ConfigError("optimizer state: shape mismatch for '" + l.name + "'");
    l.m = it->second.first;
    l.v = it->second.second;
  }
}

// Loss and gradients for one batch; gradients land in the store.
inline double batch_step_gradients(OdeNetModel& model, ParamStore& store, const Batch& b,
                                   const std::vector<RowSchedule>& sched) {
  ad::Tape tape;
  const auto p = tape_rhs_params(tape, model.rhs);
  std::vector<std::pair<std::string, ad::Tensor>> ic_leaves;
  const ad::Tensor s0 = assemble_ic<ad::Tensor>(model, b, &ic_leaves, &tape);
  const auto r = rollout(model.rhs, p, s0, b, sched, RolloutMode::TeacherForcedTrain);
  const ad::Tensor loss = masked_mse(r);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) return value;
  tape.backward(loss);
  for (std::size_t i = 0; i < p.mlp.weights.size(); ++i) {
    store.accumulate("mlp/w" + std::to_string(i), tape.grad(p.mlp.weights[i]));
    store.accumulate("mlp/b" + std::to_string(i), tape.grad(p.mlp.biases[i]));
  }
  if (store.contains("kappa")) store.accumulate("kappa", tape.grad(p.kappa));
  for (const auto& [id, leaf] : ic_leaves) store.accumulate("ic/" + id, tape.grad(leaf));
  return value;
}

// Loss of a batch without gradients (plain evaluation).
inline double batch_loss(const OdeNetModel& model, const Batch& b,
                         const std::vector<RowSchedule>& sched,
                         RolloutMode mode = RolloutMode::TeacherForcedTrain) {
  const auto p = plain_rhs_params(model.rhs);
  const Mat s0 = assemble_ic<Mat>(model, b, nullptr, nullptr);
  return masked_mse(rollout(model.rhs, p, s0, b, sched, mode))(0, 0);
}

inline TrainResult train(OdeNetModel& model, const std::vector<Trajectory>& corpus,
                         const TrainConfig& cfg, const std::vector<std::string>& param_names,
                         const OptimizerState* resume = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("train: empty corpus");
  model.rhs.validate();
  for (const auto& tr : corpus) tr.validate(model.rhs.state_dim);
  ensure_ics(model, corpus);

  ParamStore store;
  register_params(store, model, cfg);
  if (resume) import_optimizer(store, *resume);

  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  // Deterministic chunking can be planned once per trajectory.
  std::map<std::string, RowSchedule> cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(corpus, cfg.batch_size, cfg.seed + 7919ULL * std::uint64_t(epoch),
                                      param_names, model.rhs.state_dim);
    AdamConfig adam = cfg.adam;
    if (cfg.epochs > 1)
      adam.lr *= std::pow(cfg.lr_final_ratio, double(epoch) / double(cfg.epochs - 1));
    double sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& b = batches[bi];
      std::vector<RowSchedule> sched;
      if (cfg.chunking == Chunking::Random) {
        sched = schedule_batch(b, cfg.max_dt, cfg.chunking, cfg.seed, 0x100000ULL + std::uint64_t(epoch));
      } else {
        for (Eigen::Index r = 0; r < b.rows(); ++r) {
          const auto& id = b.ids[std::size_t(r)];
          auto it = cache.find(id);
          if (it == cache.end()) {
            std::mt19937_64 unused(0);
            it = cache.emplace(id, schedule_row(b, r, cfg.max_dt, cfg.chunking, unused)).first;
          }
          sched.push_back(it->second);
        }
      }
      double loss = 0.0;
      try {
        loss = batch_step_gradients(model, store, b, sched);
      } catch (const RolloutError& e) {
        throw RolloutError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(bi) + ")",
                           e.step);
      }
      if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi));
      adam_step(store, adam);
      sum += loss;
    }
    res.loss_history.push_back(sum / double(batches.size()));
    if (cfg.on_epoch) cfg.on_epoch(epoch, res.loss_history.back());
  }
  res.optimizer = export_optimizer(store);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Inference.

// Autoregressive integration of many initial states (rows, physical units)
// through a shared output grid; each gap is split into equal sub-steps no
// longer than max_dt. Returns one (rows x d) array per output time.
inline std::vector<Mat> infer_batch(const LearnedRhs& m, const Mat& x0, const Mat& params,
                                    const std::vector<double>& t_eval, double max_dt) {
  if (!(max_dt > 0.0)) throw ConfigError("infer: max_dt must be positive");
  for (std::size_t i = 1; i < t_eval.size(); ++i)
    if (!(t_eval[i] > t_eval[i - 1])) throw ConfigError("infer: t_eval must be increasing");
  std::vector<Mat> out;
  if (t_eval.empty()) return out;
  const auto p = plain_rhs_params(m);
  Mat s = m.scaling.to_internal(x0);
  out.push_back(x0);
  std::mt19937_64 unused(0);
  long step = 0;
  for (std::size_t i = 1; i < t_eval.size(); ++i) {
    for (double h : split_gap(t_eval[i] - t_eval[i - 1], max_dt, Chunking::Uniform, unused)) {
      s = rk4_advance(m, p, s, params, Vec::Constant(s.rows(), h));
      if (!s.allFinite())
        throw RolloutError("infer: non-finite state at t=" + std::to_string(t_eval[i]), step);
      ++step;
    }
    out.push_back(m.scaling.to_physical(s));
  }
  return out;
}

inline std::vector<Vec> infer_trajectory(const LearnedRhs& m, const Vec& ic, const Vec& params,
                                         const std::vector<double>& t_eval, double max_dt) {
  const auto rows = infer_batch(m, Mat(ic.transpose()), Mat(params.transpose()), t_eval, max_dt);
  std::vector<Vec> out;
  for (const auto& r : rows) out.push_back(r.row(0).transpose());
  return out;
}

// States after each of an explicit list of steps (network iteration with a
// prescribed step pattern).
inline std::vector<Vec> iterate_steps(const LearnedRhs& m, const Vec& ic, const Vec& params,
                                      const std::vector<double>& steps) {
  const auto p = plain_rhs_params(m);
  Mat s = m.scaling.to_internal(Mat(ic.transpose()));
  const Mat pm = params.transpose();
  std::vector<Vec> out{ic};
  long k = 0;
  for (double h : steps) {
    s = rk4_advance(m, p, s, pm, Vec::Constant(1, h));
    check_finite_step(s, k++);
    out.push_back(m.scaling.to_physical(s).row(0).transpose());
  }
  return out;
}

// Per-channel min-max of all observed values; degenerate channels get range 1.
inline ChannelScaling fit_scaling(const std::vector<Trajectory>& corpus, int d) {
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  for (const auto& tr : corpus)
    for (const auto& o : tr.observations)
      for (const auto& [c, v] : o.channels) {
        lo(c) = std::min(lo(c), v);
        hi(c) = std::max(hi(c), v);
      }
  ChannelScaling s = ChannelScaling::identity(d);
  for (int c = 0; c < d; ++c) {
    if (!std::isfinite(lo(c))) continue;
    s.offset(c) = lo(c);
    s.range(c) = hi(c) > lo(c) ? hi(c) - lo(c) : 1.0;
  }
  return s;
}

}  // namespace odenet
