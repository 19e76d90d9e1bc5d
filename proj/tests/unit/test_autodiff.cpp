#include <gtest/gtest.h>

#include <random>

#include "odenet/autodiff.hpp"
#include "odenet/mlp.hpp"

using namespace odenet;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double sum_outputs(const Mlp& mlp, const Mat& x) { return forward(mlp, x).sum(); }

// Max elementwise relative error of tape gradients of sum(forward) against
// central differences, over entries with |grad| > 1e-8.
double mlp_gradcheck(const Mlp& mlp, const Mat& x) {
  ad::Tape tape;
  auto p = tape_params(tape, mlp);
  auto out = ad::sum(forward(p, tape.constant(x)));
  tape.backward(out);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      const Mat g = tape.grad(which == 0 ? p.weights[l] : p.biases[l]);
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        Mlp a = mlp, b = mlp;
        Mat& ma = which == 0 ? a.layers[l].weight : a.layers[l].bias;
        Mat& mb = which == 0 ? b.layers[l].weight : b.layers[l].bias;
        ma.data()[i] += h;
        mb.data()[i] -= h;
        const double fd = (sum_outputs(a, x) - sum_outputs(b, x)) / (2 * h);
        const double ga = g.data()[i];
        // floor keeps tiny gradients from turning differencing noise into a ratio
        worst = std::max(worst, std::abs(ga - fd) / std::max(std::abs(ga), 1e-3));
      }
    }
  }
  return worst;
}

}  // namespace

TEST(Forward, ZeroNetworkGivesZero) {
  Mlp mlp = init_weights({3, 4, 2}, 1);
  for (auto& l : mlp.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Mat out = forward(mlp, random_mat(5, 3, 2));
  EXPECT_EQ(out, Mat::Zero(5, 2));
}

TEST(Forward, SingleAffineLayer) {
  Mlp mlp;
  mlp.layers.push_back({Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 1.0), Activation::Linear});
  EXPECT_EQ(forward(mlp, Mat::Constant(1, 1, 3.0))(0, 0), 7.0);
}

TEST(Forward, SiluAtZeroIsZero) {
  Mlp mlp;
  mlp.layers.push_back({Mat::Ones(1, 2), Mat::Zero(1, 2), Activation::SiLU});
  mlp.layers.push_back({Mat::Ones(2, 1), Mat::Zero(1, 1), Activation::Linear});
  EXPECT_EQ(forward(mlp, Mat::Zero(1, 1))(0, 0), 0.0);
}

TEST(Forward, WidthMismatchIsConfigError) {
  Mlp mlp = init_weights({3, 4, 2}, 1);
  EXPECT_THROW(forward(mlp, Mat::Zero(1, 2)), ConfigError);
}

TEST(Forward, LinearNetworkIsHomogeneousWithoutBias) {
  Mlp mlp;
  mlp.layers.push_back({random_mat(3, 2, 5), Mat::Zero(1, 2), Activation::Linear});
  const Mat x = random_mat(4, 3, 6);
  const Mat a = forward(mlp, Mat(2.5 * x));
  const Mat b = 2.5 * forward(mlp, x);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Silu, IdentityAndDerivativeAtZero) {
  EXPECT_EQ(ad::silu(0.0), 0.0);
  EXPECT_EQ(ad::silu_grad(0.0), 0.5);
  for (double x : {-3.0, -0.5, 0.7, 4.0})
    EXPECT_DOUBLE_EQ(ad::silu(x), x / (1.0 + std::exp(-x)));
  ad::Tape tape;
  auto w = tape.leaf(Mat::Zero(1, 1));
  auto y = ad::silu(w);
  EXPECT_EQ(y.value()(0, 0), 0.0);
  tape.backward(y);
  EXPECT_EQ(tape.grad(w)(0, 0), 0.5);
}

TEST(Backward, SquareGradient) {
  ad::Tape tape;
  auto w = tape.leaf(Mat::Constant(1, 1, 3.0));
  tape.backward(ad::sum(ad::mul(w, w)));
  EXPECT_EQ(tape.grad(w)(0, 0), 6.0);
}

TEST(Backward, UnreachedLeafHasZeroGradient) {
  ad::Tape tape;
  auto w = tape.leaf(Mat::Constant(2, 2, 3.0));
  auto v = tape.leaf(Mat::Constant(1, 1, 1.0));
  tape.backward(ad::sum(ad::scale(v, 4.0)));
  EXPECT_EQ(tape.grad(w), Mat::Zero(2, 2));
  EXPECT_EQ(tape.grad(v)(0, 0), 4.0);
}

TEST(Backward, NonScalarRootIsUsageError) {
  ad::Tape tape;
  auto w = tape.leaf(Mat::Ones(2, 1));
  EXPECT_THROW(tape.backward(w), UsageError);
}

TEST(Backward, MlpGradientMatchesFiniteDifferences) {
  const Mlp mlp = init_weights({3, 64, 64, 2}, 11);
  EXPECT_LE(mlp_gradcheck(mlp, random_mat(4, 3, 12)), 1e-4);
}

TEST(Backward, LargestSpecNetworkGradcheck) {
  const Mlp mlp = init_weights({6, 64, 64, 6}, 21);
  EXPECT_LE(mlp_gradcheck(mlp, random_mat(3, 6, 22)), 1e-4);
}

// Every op through one scalar loss, checked against central differences.
TEST(Backward, ElementwiseOpsGradcheck) {
  const Mat a0 = random_mat(3, 4, 31, 0.5, 1.5), b0 = random_mat(3, 4, 32, 0.5, 1.5);
  const Mat k0 = random_mat(1, 2, 33, 0.5, 1.5);
  const Mat data = random_mat(6, 4, 34), mask = (random_mat(6, 4, 35).array() > 0).cast<double>();
  const Vec h = random_mat(3, 1, 36, 0.1, 0.3);
  const Vec s = random_mat(4, 1, 37, 0.5, 2.0), o = random_mat(4, 1, 38);
  auto plain = [&](const Mat& a, const Mat& b, const Mat& k) {
    Mat x = ad::add(ad::mul(a, b), ad::div(a, b));
    x = ad::sub(ad::exp(ad::scale(x, 0.3)), ad::silu(ad::add_scalar(b, -0.2)));
    x = ad::col_affine(ad::row_scale(x, h), s, o);
    Mat c = ad::hstack({ad::col(x, 0), ad::scale_by_entry(ad::col(x, 1), k, 1), ad::col(x, 2), ad::col(x, 3)});
    Mat v = ad::vstack({c, ad::mask_blend(a, Mat(data.topRows(3)), Mat(mask.topRows(3)))});
    return ad::add(ad::masked_sq_sum(v, data, mask), ad::sum(ad::matmul(a, Mat(b0.transpose()))))(0, 0);
  };
  ad::Tape tape;
  auto a = tape.leaf(a0), b = tape.leaf(b0), k = tape.leaf(k0);
  auto x = ad::add(ad::mul(a, b), ad::div(a, b));
  x = ad::sub(ad::exp(ad::scale(x, 0.3)), ad::silu(ad::add_scalar(b, -0.2)));
  x = ad::col_affine(ad::row_scale(x, h), s, o);
  auto c = ad::hstack({ad::col(x, 0), ad::scale_by_entry(ad::col(x, 1), k, 1), ad::col(x, 2), ad::col(x, 3)});
  auto v = ad::vstack({c, ad::mask_blend(a, Mat(data.topRows(3)), Mat(mask.topRows(3)))});
  auto root = ad::add(ad::masked_sq_sum(v, data, mask), ad::sum(ad::matmul(a, tape.constant(b0.transpose()))));
  EXPECT_NEAR(root.value()(0, 0), plain(a0, b0, k0), 1e-12);
  tape.backward(root);

  const double step = 1e-6;
  auto check = [&](const Mat& g, int which) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      Mat ap = a0, am = a0, bp = b0, bm = b0, kp = k0, km = k0;
      Mat& p = which == 0 ? ap : which == 1 ? bp : kp;
      Mat& m = which == 0 ? am : which == 1 ? bm : km;
      p.data()[i] += step;
      m.data()[i] -= step;
      // the right operand of matmul is the constant b0 in both graphs
      const double fp = plain(ap, bp, kp), fm = plain(am, bm, km);
      const double fd = (fp - fm) / (2 * step);
      const double ga = g.data()[i];
      if (std::abs(ga) > 1e-8) EXPECT_LE(std::abs(ga - fd) / std::abs(ga), 1e-5) << "leaf " << which << " entry " << i;
      else EXPECT_NEAR(fd, 0.0, 1e-6);
    }
  };
  check(tape.grad(a), 0);
  check(tape.grad(b), 1);
  check(tape.grad(k), 2);
}

TEST(InitWeights, SameSeedIsBitIdentical) {
  const Mlp a = init_weights({3, 64, 64, 2}, 7), b = init_weights({3, 64, 64, 2}, 7);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].weight, b.layers[l].weight);
    EXPECT_EQ(a.layers[l].bias, b.layers[l].bias);
  }
}

TEST(InitWeights, OutputScaleShrinksOutputLayer) {
  const Mlp a = init_weights({3, 64, 64, 2}, 7, 1.0), b = init_weights({3, 64, 64, 2}, 7, 0.01);
  const double ra = a.layers.back().weight.cwiseAbs().maxCoeff();
  const double rb = b.layers.back().weight.cwiseAbs().maxCoeff();
  EXPECT_NEAR(ra / rb, 100.0, 1e-9);
  EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
  EXPECT_EQ(a.layers[1].weight, b.layers[1].weight);
}

TEST(InitWeights, FanInBounds) {
  const Mlp m = init_weights({3, 64, 64, 2}, 0);
  EXPECT_LE(m.layers[0].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 3));
  EXPECT_LE(m.layers[0].bias.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 3));
  for (std::size_t l = 1; l < m.layers.size(); ++l) {
    EXPECT_LE(m.layers[l].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 64));
    EXPECT_LE(m.layers[l].bias.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 64));
  }
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.layers.back().activation, Activation::Linear);
  EXPECT_EQ(m.layers[0].activation, Activation::SiLU);
}

TEST(InitWeights, RejectsBadArguments) {
  EXPECT_THROW(init_weights({3}, 0), ConfigError);
  EXPECT_THROW(init_weights({3, 2}, 0, 0.0), ConfigError);
}
