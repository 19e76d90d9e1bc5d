#include <gtest/gtest.h>

#include <cstring>

#include "fixtures.hpp"

using namespace odenet;
using namespace fixtures;

namespace {

Batch one_row_batch(std::vector<double> t, std::vector<std::vector<double>> v, std::vector<std::vector<int>> obs) {
  Trajectory tr;
  tr.id = "r";
  for (std::size_t k = 0; k < t.size(); ++k) {
    Observation o;
    o.t = t[k];
    for (int c : obs[k]) o.channels[c] = v[k][std::size_t(c)];
    tr.observations.push_back(o);
  }
  tr.ic_given = !obs.empty() && t[0] == 0.0 && obs[0].size() == v[0].size();
  return build_batch({tr}, {0}, {}, int(v[0].size()));
}

OdeNetModel wrap(LearnedRhs r) {
  OdeNetModel m;
  m.rhs = std::move(r);
  return m;
}

std::vector<RowSchedule> plan(const Batch& b, double max_dt) {
  return schedule_batch(b, max_dt, Chunking::Greedy, 0, 0);
}

}  // namespace

TEST(MaskedMse, WorkedExamples) {
  const Batch b = one_row_batch({0.0, 1.0}, {{0, 0}, {1, 4}}, {{0, 1}, {0, 1}});
  std::vector<Mat> pred{Mat::Zero(1, 2), (Mat(1, 2) << 1, 2).finished()};
  EXPECT_DOUBLE_EQ(masked_mse(pred, b), 4.0 / 4.0);
  const Batch b2 = one_row_batch({0.0, 1.0}, {{0, 0}, {1, 4}}, {{0, 1}, {0}});
  EXPECT_DOUBLE_EQ(masked_mse(pred, b2), 0.0);
  Batch empty = b2;
  for (auto& m : empty.mask) m.setZero();
  EXPECT_THROW(masked_mse(pred, empty), UsageError);
}

TEST(MaskedMse, RolloutFormCountsOnlyObservedEntries) {
  const LearnedRhs f = field(2, [](const Mat& x) { return Mat::Zero(x.rows(), 2); });
  const Batch b = one_row_batch({0.0, 1.0, 2.0}, {{1, 1}, {2, 5}, {3, 1}}, {{0, 1}, {1}, {0}});
  const auto r = rollout(f, plain_rhs_params(f), Mat(Mat::Ones(1, 2)), b, plan(b, 0.5),
                         RolloutMode::AutoregressiveInfer, true);
  EXPECT_EQ(r.n_data, 4);
  EXPECT_DOUBLE_EQ(masked_mse(r)(0, 0), (16.0 + 4.0) / 4.0);
  EXPECT_DOUBLE_EQ(masked_mse(r.predictions, b), 5.0);
}

// An exact vector field integrated with small steps reproduces the corpus.
TEST(Rollout, PerfectModelReproducesData) {
  const auto sys = TruthSystem::make_urp();
  const auto corpus = generate_corpus(sys, urp_spec(8), 3);
  const LearnedRhs m = oracle_model(sys, Composer::GrayFunctional);
  const auto batches = make_batches(corpus, 8, 1, {"Da"}, 2);
  const Batch& b = batches.front();
  const auto r = rollout(m, plain_rhs_params(m), Mat(b.values[0]), b, plan(b, 0.02),
                         RolloutMode::AutoregressiveInfer, true);
  EXPECT_LE(masked_mse(r)(0, 0), 1e-8);
  EXPECT_LE(masked_mse(r.predictions, b), 1e-8);
}

// Teacher-forced loss with one step per gap equals the mean one-step error
// computed directly from consecutive observations.
TEST(Rollout, TeacherForcingRestartsFromData) {
  const auto sys = TruthSystem::make_urp();
  auto spec = urp_spec(1);
  spec.horizon = 2;
  const auto corpus = generate_corpus(sys, spec, 5);
  const LearnedRhs m = black_box(2, 1, {16}, 6, 0.3);
  const Batch b = build_batch(corpus, {0}, {"Da"}, 2);
  const auto p = plain_rhs_params(m);
  const double tf = masked_mse(rollout(m, p, Mat(b.values[0]), b, plan(b, 0.1), RolloutMode::TeacherForcedTrain))(0, 0);

  double s = 0;
  for (std::size_t k = 1; k < b.key_count(); ++k) {
    const Mat next = rk4_step(m, p, b.values[k - 1], b.params, b.times(0, Eigen::Index(k)) - b.times(0, Eigen::Index(k - 1)));
    s += (next - b.values[k]).squaredNorm();
  }
  EXPECT_NEAR(tf, s / double(2 * b.key_count()), 1e-15);

  const double ar = masked_mse(rollout(m, p, Mat(b.values[0]), b, plan(b, 0.1), RolloutMode::AutoregressiveInfer))(0, 0);
  EXPECT_NE(tf, ar);
}

TEST(Rollout, UnobservedValuesNeverReachTheGraph) {
  const auto sys = TruthSystem::make_urp();
  auto spec = urp_spec(6);
  spec.sampling = Sampling::Gamma;
  spec.mean_dt = {0.4, 0.45};
  spec.observation = ObservationScheme::PerChannel;
  spec.withhold_ic = true;
  spec.horizon = 4;
  const auto corpus = generate_corpus(sys, spec, 7);
  OdeNetModel model = wrap(black_box(2, 1, {16}, 8, 0.3));
  ensure_ics(model, corpus);
  const Batch clean = make_batches(corpus, 6, 1, {"Da"}, 2).front();
  Batch dirty = clean;
  for (std::size_t k = 0; k < dirty.key_count(); ++k)
    for (Eigen::Index i = 0; i < dirty.values[k].size(); ++i)
      if (dirty.mask[k].data()[i] == 0.0) dirty.values[k].data()[i] = (i % 2) ? 1e300 : std::nan("");

  auto grads = [&](const Batch& b, double& loss) {
    OdeNetModel mm = model;
    ParamStore store;
    register_params(store, mm, TrainConfig{});
    loss = batch_step_gradients(mm, store, b, plan(b, 0.1));
    std::vector<Mat> g;
    for (const auto& l : store.leaves()) g.push_back(l.grad);
    return g;
  };
  double lc = 0, ld = 0;
  const auto gc = grads(clean, lc), gd = grads(dirty, ld);
  EXPECT_EQ(std::memcmp(&lc, &ld, sizeof lc), 0);
  ASSERT_EQ(gc.size(), gd.size());
  for (std::size_t i = 0; i < gc.size(); ++i) {
    ASSERT_EQ(gc[i].size(), gd[i].size());
    EXPECT_EQ(std::memcmp(gc[i].data(), gd[i].data(), sizeof(double) * std::size_t(gc[i].size())), 0) << i;
  }
}

TEST(InitialConditions, MeasuredChannelsAreClamped) {
  // Channel 0 is measured at t = 0, channel 1 is not.
  Trajectory tr;
  tr.id = "p";
  tr.params["Da"] = 0.3;
  tr.ic_given = false;
  tr.observations.push_back({0.0, {{0, 0.6}}});
  tr.observations.push_back({0.5, {{0, 0.5}, {1, 1.0}}});
  tr.observations.push_back({1.0, {{0, 0.4}, {1, 1.5}}});
  OdeNetModel model = wrap(black_box(2, 1, {8}, 9));
  ensure_ics(model, {tr});
  ASSERT_EQ(model.ic_mask.at("p"), (Mat(1, 2) << 0, 1).finished());
  model.ic.at("p") << 5.0, 0.2;  // the 5.0 must be ignored

  ParamStore store;
  register_params(store, model, TrainConfig{});
  const Batch b = build_batch({tr}, {0}, {"Da"}, 2);
  batch_step_gradients(model, store, b, plan(b, 0.1));
  const Mat g = store.at("ic/p").grad;
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_NE(g(0, 1), 0.0);

  const Mat s0 = assemble_ic<Mat>(model, b, nullptr, nullptr);
  EXPECT_EQ(s0(0, 0), 0.6);
  EXPECT_EQ(s0(0, 1), 0.2);
}

TEST(InitialConditions, GivenIcsGetNoEstimate) {
  const auto corpus = generate_corpus(TruthSystem::make_urp(), urp_spec(3), 1);
  OdeNetModel model = wrap(black_box(2, 1, {8}, 9));
  ensure_ics(model, corpus);
  EXPECT_TRUE(model.ic.empty());
}

namespace {

TrainConfig small_cfg(Chunking mode, std::uint64_t seed, int epochs = 3) {
  TrainConfig c;
  c.max_dt = 0.2;
  c.chunking = mode;
  c.epochs = epochs;
  c.batch_size = 4;
  c.adam.lr = 3e-3;
  c.seed = seed;
  return c;
}

std::vector<Trajectory> small_corpus() {
  auto spec = urp_spec(10);
  spec.horizon = 3;
  spec.mean_dt = {0.5};
  spec.sampling = Sampling::Gamma;
  spec.withhold_ic = true;
  return generate_corpus(TruthSystem::make_urp(), spec, 2);
}

}  // namespace

TEST(Train, SameSeedIsBitIdentical) {
  const auto corpus = small_corpus();
  for (auto mode : {Chunking::Greedy, Chunking::Random}) {
    OdeNetModel a = wrap(black_box(2, 1, {16}, 3)), b = a, c = a;
    const auto ra = train(a, corpus, small_cfg(mode, 11), {"Da"});
    const auto rb = train(b, corpus, small_cfg(mode, 11), {"Da"});
    train(c, corpus, small_cfg(mode, 12), {"Da"});
    EXPECT_EQ(ra.loss_history, rb.loss_history);
    for (std::size_t l = 0; l < a.rhs.mlp.layers.size(); ++l) {
      EXPECT_EQ(a.rhs.mlp.layers[l].weight, b.rhs.mlp.layers[l].weight);
      EXPECT_NE(a.rhs.mlp.layers[l].weight, c.rhs.mlp.layers[l].weight);
    }
    for (const auto& [id, v] : a.ic) EXPECT_EQ(v, b.ic.at(id));
  }
}

TEST(Train, ZeroEpochsIsANoOp) {
  const auto corpus = small_corpus();
  OdeNetModel a = wrap(black_box(2, 1, {16}, 3));
  const auto before = a.rhs.mlp;
  const auto r = train(a, corpus, small_cfg(Chunking::Greedy, 1, 0), {"Da"});
  EXPECT_TRUE(r.loss_history.empty());
  for (std::size_t l = 0; l < before.layers.size(); ++l) EXPECT_EQ(a.rhs.mlp.layers[l].weight, before.layers[l].weight);
  EXPECT_EQ(r.optimizer.step, 0);
}

TEST(Train, LossDecreasesOnLinearDecay) {
  const auto sys = TruthSystem::make_linear((Mat(2, 2) << -0.5, 1.0, -1.0, -0.5).finished());
  PathologySpec spec;
  spec.mean_dt = {0.25};
  spec.horizon = 5;
  spec.n_trajectories = 16;
  spec.ic_low = Vec::Constant(2, -1);
  spec.ic_high = Vec::Constant(2, 1);
  spec.param_low = Vec(0);
  spec.param_high = Vec(0);
  const auto corpus = generate_corpus(sys, spec, 1);
  OdeNetModel m = wrap(black_box(2, 0, {16}, 4, 0.1));
  TrainConfig c = small_cfg(Chunking::Greedy, 1, 60);
  c.max_dt = 0.25;
  c.adam.lr = 1e-2;
  const auto r = train(m, corpus, c, {});
  EXPECT_LT(r.loss_history.back(), 0.2 * r.loss_history.front());
}

TEST(Train, RejectsBadConfig) {
  const auto corpus = small_corpus();
  OdeNetModel a = wrap(black_box(2, 1, {16}, 3));
  auto c = small_cfg(Chunking::Greedy, 1);
  c.max_dt = 0;
  EXPECT_THROW(train(a, corpus, c, {"Da"}), ConfigError);
  EXPECT_THROW(train(a, {}, small_cfg(Chunking::Greedy, 1), {"Da"}), ConfigError);
  EXPECT_THROW(train(a, corpus, small_cfg(Chunking::Greedy, 1), {"B"}), ConfigError);
}

TEST(Train, OptimizerStateRoundTripsThroughImport) {
  const auto corpus = small_corpus();
  OdeNetModel a = wrap(black_box(2, 1, {16}, 3));
  const auto r = train(a, corpus, small_cfg(Chunking::Greedy, 1), {"Da"});
  EXPECT_EQ(r.optimizer.step, 3 * 3);
  ParamStore store;
  register_params(store, a, TrainConfig{});
  import_optimizer(store, r.optimizer);
  const auto again = export_optimizer(store);
  EXPECT_EQ(again.step, r.optimizer.step);
  for (const auto& [k, mv] : r.optimizer.moments) {
    EXPECT_EQ(again.moments.at(k).first, mv.first);
    EXPECT_EQ(again.moments.at(k).second, mv.second);
  }
}

TEST(Infer, ExponentialDecay) {
  const LearnedRhs m = field(1, [](const Mat& x) { return Mat(-x); });
  const auto out = infer_batch(m, Mat::Ones(2, 1), Mat(2, 0), {0.0, 1.0}, 0.1);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], Mat::Ones(2, 1));
  EXPECT_NEAR(out[1](0, 0), std::exp(-1.0), 1e-6);
  const auto tr = infer_trajectory(m, Vec::Constant(1, 2.0), Vec(0), {0.0, 0.5, 1.0}, 0.1);
  EXPECT_NEAR(tr[2](0), 2 * std::exp(-1.0), 1e-6);
}

TEST(Infer, ErrorsAndEmptyGrid) {
  const LearnedRhs m = field(1, [](const Mat& x) { return Mat(-x); });
  EXPECT_TRUE(infer_batch(m, Mat::Ones(1, 1), Mat(1, 0), {}, 0.1).empty());
  EXPECT_THROW(infer_batch(m, Mat::Ones(1, 1), Mat(1, 0), {0.0, 0.0}, 0.1), ConfigError);
  EXPECT_THROW(infer_batch(m, Mat::Ones(1, 1), Mat(1, 0), {0.0, 1.0}, 0.0), ConfigError);
  const LearnedRhs boom = field(1, [](const Mat& x) { return Mat(x.array().square().matrix() * 1e300); });
  EXPECT_THROW(infer_batch(boom, Mat::Constant(1, 1, 1e10), Mat(1, 0), {0.0, 1.0}, 0.1), RolloutError);
}

TEST(Infer, IterateStepsFollowsThePattern) {
  const LearnedRhs m = field(1, [](const Mat& x) { return x; });
  const auto s = iterate_steps(m, Vec::Ones(1), Vec(0), {0.1, 0.1});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s[1](0), 1.1051708333, 1e-10);
  EXPECT_NEAR(s[2](0), 1.1051708333 * 1.1051708333, 1e-9);
}

TEST(Scaling, MinMaxOverObservedValues) {
  Trajectory tr;
  tr.observations.push_back({0.0, {{0, 1.0}, {1, 5.0}}});
  tr.observations.push_back({1.0, {{0, 3.0}, {1, 5.0}}});
  const auto s = fit_scaling({tr}, 3);
  EXPECT_EQ(s.offset, (Vec(3) << 1.0, 5.0, 0.0).finished());
  EXPECT_EQ(s.range, (Vec(3) << 2.0, 1.0, 1.0).finished());
  const Mat x = (Mat(1, 3) << 2.0, 6.0, 7.0).finished();
  EXPECT_EQ(s.to_physical(s.to_internal(x)), x);
}
