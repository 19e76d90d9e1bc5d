#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace odenet;
using namespace fixtures;

namespace {

// Straight loop transcription of the three norms, independent of the
// vectorised implementation.
NormTriple brute_norms(const Mat& yt, const Mat& yp) {
  const Eigen::Index n = yt.rows(), d = yt.cols();
  std::vector<double> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
  for (Eigen::Index c = 0; c < d; ++c) {
    lo[std::size_t(c)] = hi[std::size_t(c)] = yt(0, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      lo[std::size_t(c)] = std::min(lo[std::size_t(c)], yt(i, c));
      hi[std::size_t(c)] = std::max(hi[std::size_t(c)], yt(i, c));
    }
  }
  NormTriple r;
  for (Eigen::Index i = 0; i < n; ++i) {
    double sq = 0, mx = 0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double span = hi[std::size_t(c)] - lo[std::size_t(c)];
      const double e = std::abs((yp(i, c) - lo[std::size_t(c)]) / span - (yt(i, c) - lo[std::size_t(c)]) / span);
      r.l1 += e;
      sq += e * e;
      mx = std::max(mx, e);
    }
    r.l2 += std::sqrt(sq);
    r.linf += mx;
  }
  r.l1 /= double(n * d);
  r.l2 /= double(n * d);
  r.linf /= double(n);
  return r;
}

}  // namespace

TEST(Norms, WorkedExample) {
  const Mat yt = (Mat(2, 2) << 0, 0, 1, 2).finished();
  const Mat yp = (Mat(2, 2) << 0.1, 0, 1, 2.2).finished();
  const auto n = norms(yt, yp);
  EXPECT_NEAR(n.l1, 0.05, 1e-15);
  EXPECT_NEAR(n.l2, 0.05, 1e-15);
  EXPECT_NEAR(n.linf, 0.1, 1e-15);
  EXPECT_TRUE(n.excluded.empty());
}

TEST(Norms, IdenticalArraysGiveZero) {
  const Mat y = random_mat(30, 4, 1);
  const auto n = norms(y, y);
  EXPECT_EQ(n.l1, 0.0);
  EXPECT_EQ(n.l2, 0.0);
  EXPECT_EQ(n.linf, 0.0);
}

TEST(Norms, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Mat yt = random_mat(50, 6, 10 + s, -3, 7), yp = random_mat(50, 6, 20 + s, -3, 7);
    const auto a = norms(yt, yp), b = brute_norms(yt, yp);
    EXPECT_NEAR(a.l1, b.l1, 1e-13);
    EXPECT_NEAR(a.l2, b.l2, 1e-13);
    EXPECT_NEAR(a.linf, b.linf, 1e-13);
  }
}

TEST(Norms, InvariantUnderPerChannelAffineMaps) {
  const Mat yt = random_mat(40, 3, 2), yp = random_mat(40, 3, 3);
  const Vec a = (Vec(3) << 2.0, 1e3, 0.01).finished(), b = (Vec(3) << -5, 17, 1e4).finished();
  auto map = [&](const Mat& y) { return Mat(((y.array().rowwise() * a.transpose().array()).rowwise() + b.transpose().array()).matrix()); };
  const auto n0 = norms(yt, yp), n1 = norms(map(yt), map(yp));
  EXPECT_NEAR(n0.l1, n1.l1, 1e-10);
  EXPECT_NEAR(n0.l2, n1.l2, 1e-10);
  EXPECT_NEAR(n0.linf, n1.linf, 1e-10);
}

TEST(Norms, DegenerateChannelsAreExcluded) {
  Mat yt = random_mat(10, 3, 4), yp = random_mat(10, 3, 5);
  yt.col(1).setConstant(2.0);
  const auto n = norms(yt, yp);
  ASSERT_EQ(n.excluded, std::vector<int>{1});
  Mat kt(10, 2), kp(10, 2);
  kt << yt.col(0), yt.col(2);
  kp << yp.col(0), yp.col(2);
  EXPECT_NEAR(n.l2, norms(kt, kp).l2, 1e-15);

  const Mat flat = Mat::Constant(4, 2, 1.0);
  const auto u = norms(flat, Mat::Constant(4, 2, 1.5));
  EXPECT_TRUE(u.unscaled);
  EXPECT_NEAR(u.l1, 0.5, 1e-15);
}

TEST(Norms, RejectsBadInput) {
  EXPECT_THROW(norms(Mat::Zero(2, 2), Mat::Zero(3, 2)), ConfigError);
  EXPECT_THROW(norms(Mat(0, 2), Mat(0, 2)), ConfigError);
  Mat bad = Mat::Zero(2, 2);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(norms(bad, Mat::Zero(2, 2)), NumericError);
}

TEST(ParamError, WorkedExample) {
  EXPECT_NEAR(param_error((Vec(2) << 1, 2).finished(), (Vec(2) << 1.01, 2.04).finished()), 0.015, 1e-12);
  EXPECT_EQ(param_error(Vec::Constant(3, 4.0), Vec::Constant(3, 4.0)), 0.0);
  EXPECT_THROW(param_error(Vec(0), Vec(0)), ConfigError);
  EXPECT_THROW(param_error(Vec::Zero(1), Vec::Ones(1)), NumericError);
}

TEST(TestPoints, DeterministicAndInsideBoxWithoutIntegration) {
  TestProtocol p;
  p.n_trajectories = 20;
  p.ic_low = (Vec(2) << 0.5, 0).finished();
  p.ic_high = (Vec(2) << 1, 2).finished();
  p.param_low = Vec::Constant(1, 0.2);
  p.param_high = Vec::Constant(1, 0.5);
  p.t_discard = p.t_end = 0;
  const auto sys = TruthSystem::make_urp();
  const auto a = make_test_points(sys, p), b = make_test_points(sys, p);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.size(), 20);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    EXPECT_GE(a.states(i, 0), 0.5);
    EXPECT_LE(a.states(i, 1), 2.0);
    EXPECT_GE(a.params(i, 0), 0.2);
  }
  p.t_discard = 3;
  p.t_end = 2;
  EXPECT_THROW(make_test_points(sys, p), ConfigError);
}

TEST(Oracle, TruthModelScoresZero) {
  for (const auto& sys : {TruthSystem::make_urp(), TruthSystem::make_bf()}) {
    TestProtocol p;
    p.n_trajectories = 30;
    if (sys.kind == SystemKind::Urp) {
      p.ic_low = (Vec(2) << 0.5, 0).finished();
      p.ic_high = (Vec(2) << 1, 2).finished();
      p.param_low = Vec::Constant(1, 0.2);
      p.param_high = Vec::Constant(1, 0.5);
    } else {
      p.ic_low = (Vec(6) << 10, 1, 0.2, 20, 200, 0.5).finished();
      p.ic_high = (Vec(6) << 100, 8, 2, 200, 2000, 5).finished();
      p.param_low = p.param_high = Vec(0);
      p.t_end = 50;
    }
    const auto pts = make_test_points(sys, p);
    ASSERT_EQ(pts.skipped, 0);
    const LearnedRhs m = oracle_model(sys, Composer::GrayFunctional);
    EXPECT_LT(rhs_error(m, sys, pts).l2, 1e-14);
    EXPECT_LT(kinetic_error(m, sys, pts).l2, 1e-14);
    const auto g = growth_rate_error(m, sys, pts);
    EXPECT_EQ(g.has_value(), sys.kind == SystemKind::Bf);
    if (g) {
      EXPECT_LT(g->l2, 1e-13);
    }
  }
}

TEST(Oracle, KineticErrorNeedsAFunctionalGrayBox) {
  const auto sys = TruthSystem::make_urp();
  const LearnedRhs m = oracle_model(sys, Composer::BlackBox);
  TestPointSet pts;
  pts.states = Mat::Constant(2, 2, 0.5);
  pts.params = Mat::Constant(2, 1, 0.3);
  EXPECT_THROW(kinetic_error(m, sys, pts), ConfigError);
}

TEST(Solution, SampleTimes) {
  SolutionProtocol p;
  p.horizon = 20;
  p.sample_dt = 0.1;
  const auto t = p.sample_times();
  ASSERT_EQ(t.size(), 201u);
  EXPECT_EQ(t.back(), 20.0);
  p.sample_dt = 0;
  EXPECT_EQ(p.sample_times(), (std::vector<double>{0.0, 20.0}));
}

TEST(Solution, OracleModelTracksTruthOnTheCycle) {
  const auto sys = TruthSystem::make_urp();
  SolutionProtocol p;
  p.param_sets = {Vec::Constant(1, 0.35)};
  p.probe_ic = (Vec(2) << 0.7, 1.0).finished();
  p.n_points = 10;
  p.horizon = 5;
  p.sample_dt = 0.5;
  p.infer_max_dt = 0.01;
  p.cycle.sample_dt = 0.05;
  const LearnedRhs m = oracle_model(sys, Composer::BlackBox);
  const auto s = solution_samples(m, sys, p);
  EXPECT_EQ(s.truth.rows(), 10 * 10);
  EXPECT_LT(solution_error(m, sys, p).l2, 1e-6);
}

TEST(Sweep, HopfEstimatesFromClassificationFlips) {
  std::vector<SweepRecord> r(5);
  const SweepKind k[] = {SweepKind::Steady, SweepKind::Cycle, SweepKind::Unresolved, SweepKind::Cycle, SweepKind::Steady};
  for (int i = 0; i < 5; ++i) {
    r[std::size_t(i)].value = i;
    r[std::size_t(i)].kind = k[i];
  }
  EXPECT_EQ(hopf_estimates(r), (std::vector<double>{0.5, 3.5}));
}

TEST(Sweep, UrpTruthAndOracleModelBracketTheHopfPoint) {
  const auto sys = TruthSystem::make_urp();
  const std::vector<double> grid{0.22, 0.26, 0.30, 0.34};
  const Vec probe = (Vec(2) << 0.7, 1.0).finished();
  LimitCycleOptions opt;
  opt.sample_dt = 0.05;
  const auto truth = bifurcation_sweep(truth_sweep_factory(sys, "Da"), grid, probe, opt);
  const auto ht = hopf_estimates(truth);
  ASSERT_EQ(ht.size(), 1u);
  EXPECT_NEAR(ht[0], 0.28, 1e-12);
  const LearnedRhs m = oracle_model(sys, Composer::BlackBox);
  const auto model = bifurcation_sweep(model_sweep_factory(m, {"Da"}, Vec::Constant(1, 0.3), "Da", 0.05), grid, probe, opt);
  const auto hm = hopf_estimates(model);
  ASSERT_EQ(hm.size(), 1u);
  EXPECT_NEAR(hm[0], 0.28, 1e-12);
  EXPECT_NE(sweep_csv(truth).find("0.3,cycle,0,"), std::string::npos);
  EXPECT_THROW(model_sweep_factory(m, {"Da"}, Vec::Constant(1, 0.3), "gamma", 0.05)(0.1), ConfigError);
}

TEST(Report, JsonAndCsvMarkMissingMetrics) {
  MetricsReport r;
  r.rhs = NormTriple{};
  r.rhs->l1 = 0.1;
  r.rhs->l2 = 0.2;
  r.rhs->linf = 0.3;
  r.param = 0.015;
  const auto j = to_json(r);
  EXPECT_TRUE(j.at("solution_error").is_null());
  EXPECT_EQ(j.at("rhs_error").at("L2").get<double>(), 0.2);
  EXPECT_EQ(report_csv_row("x", r), "x,NA,NA,NA,0.1,0.2,0.3,NA,NA,NA,0.015");
  const std::string h = report_csv_header();
  EXPECT_EQ(std::count(h.begin(), h.end(), ','), 10);
}
