#pragma once

#include <random>

#include "odenet/odenet.hpp"

namespace fixtures {

using namespace odenet;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Network-backed vector field with identity scaling and no kappa.
inline LearnedRhs black_box(int d, int np, std::vector<int> hidden, std::uint64_t seed,
                            double out_scale = 1.0) {
  LearnedRhs m;
  m.composer = Composer::BlackBox;
  m.system = ModelSystem::Custom;
  m.state_dim = d;
  m.param_dim = np;
  std::vector<int> w{d + np};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(d);
  m.mlp = init_weights(w, seed, out_scale);
  m.kappa = Mat(1, 0);
  m.kappa_trainable = Mat(1, 0);
  m.scaling = ChannelScaling::identity(d);
  m.output_scale = Vec::Ones(d);
  return m;
}

inline LearnedRhs urp_gray(std::uint64_t seed, bool kappa_trainable) {
  const auto sys = TruthSystem::make_urp();
  LearnedRhs m;
  m.composer = Composer::GrayFunctional;
  m.system = ModelSystem::Urp;
  m.state_dim = 2;
  m.param_dim = 1;
  m.mlp = init_weights({3, 16, 16, 1}, seed);
  m.kappa_names = sys.kappa_names();
  m.kappa = sys.kappa().transpose();
  m.kappa_trainable = Mat::Constant(1, 2, kappa_trainable ? 1.0 : 0.0);
  m.scaling = ChannelScaling::identity(2);
  m.output_scale = Vec::Ones(1);
  return m;
}

// Model whose "network" is the exact truth quantity for the composer.
inline LearnedRhs oracle_model(const TruthSystem& sys, Composer c) {
  LearnedRhs m;
  m.composer = c;
  m.system = sys.kind == SystemKind::Urp ? ModelSystem::Urp
             : sys.kind == SystemKind::Bf ? ModelSystem::Bf
                                          : ModelSystem::Custom;
  m.state_dim = sys.dim();
  m.param_dim = int(sys.param_names().size());
  m.kappa_names = sys.kappa_names();
  m.kappa = sys.kappa().transpose();
  if (m.kappa.cols() == 0) m.kappa = Mat(1, 0);
  m.kappa_trainable = Mat::Zero(1, m.kappa.cols());
  m.bf = sys.bf;
  m.scaling = ChannelScaling::identity(sys.dim());
  if (c == Composer::GrayAdditive || c == Composer::GrayMultiplicative) m.prior = linear_part_prior(sys);
  m.oracle = truth_oracle(sys, c);
  m.validate();
  return m;
}

// Constant or linear vector fields, for integrator checks.
inline LearnedRhs field(int d, std::function<Mat(const Mat&)> f) {
  LearnedRhs m;
  m.composer = Composer::BlackBox;
  m.system = ModelSystem::Custom;
  m.state_dim = d;
  m.kappa = Mat(1, 0);
  m.kappa_trainable = Mat(1, 0);
  m.scaling = ChannelScaling::identity(d);
  m.oracle = [f](const Mat& x, const Mat&) { return f(x); };
  return m;
}

inline PathologySpec urp_spec(int n = 5) {
  PathologySpec s;
  s.mean_dt = {0.1};
  s.horizon = 10;
  s.n_trajectories = n;
  s.ic_low = (Vec(2) << 0.5, 0.0).finished();
  s.ic_high = (Vec(2) << 1.0, 2.0).finished();
  s.param_low = Vec::Constant(1, 0.2);
  s.param_high = Vec::Constant(1, 0.5);
  return s;
}

}  // namespace fixtures
