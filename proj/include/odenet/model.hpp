#pragma once

// Learned right-hand side: an MLP, optionally composed with known physics,
// evaluated inside a fixed-step RK4 template.
//
// Internally the state may be rescaled per channel: X = offset + range * s.
// Every composer forms the physical derivative dX first and returns
// ds/dt = dX / range, so gray-box skeletons always see physical units.

#include <functional>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/error.hpp"
#include "odenet/mlp.hpp"
#include "odenet/truth.hpp"

namespace odenet {

enum class Composer { BlackBox, GrayFunctional, GrayAdditive, GrayMultiplicative };
enum class ModelSystem { Urp, Bf, Custom };

inline std::string to_string(Composer c) {
  switch (c) {
    case Composer::BlackBox: return "BLACK_BOX";
    case Composer::GrayFunctional: return "GRAY_FUNCTIONAL";
    case Composer::GrayAdditive: return "GRAY_ADDITIVE";
    case Composer::GrayMultiplicative: return "GRAY_MULTIPLICATIVE";
  }
  return "?";
}
inline Composer composer_from_string(const std::string& s) {
  if (s == "BLACK_BOX") return Composer::BlackBox;
  if (s == "GRAY_FUNCTIONAL") return Composer::GrayFunctional;
  if (s == "GRAY_ADDITIVE") return Composer::GrayAdditive;
  if (s == "GRAY_MULTIPLICATIVE") return Composer::GrayMultiplicative;
  throw ConfigError("unknown composer '" + s + "'");
}
inline std::string to_string(ModelSystem s) {
  switch (s) {
    case ModelSystem::Urp: return "URP";
    case ModelSystem::Bf: return "BF";
    case ModelSystem::Custom: return "CUSTOM";
  }
  return "?";
}
inline ModelSystem model_system_from_string(const std::string& s) {
  if (s == "URP") return ModelSystem::Urp;
  if (s == "BF") return ModelSystem::Bf;
  if (s == "CUSTOM" || s == "LINEAR") return ModelSystem::Custom;
  throw ConfigError("unknown model system '" + s + "'");
}

struct ChannelScaling {
  Vec offset;
  Vec range;

  static ChannelScaling identity(int d) { return {Vec::Zero(d), Vec::Ones(d)}; }
  bool is_identity() const {
    return (offset.array() == 0.0).all() && (range.array() == 1.0).all();
  }
  Mat to_internal(const Mat& x) const {
    return ((x.rowwise() - offset.transpose()).array().rowwise() / range.transpose().array())
        .matrix();
  }
  Mat to_physical(const Mat& s) const {
    return ((s.array().rowwise() * range.transpose().array()).rowwise() +
            offset.transpose().array())
        .matrix();
  }
};

// User-supplied physics in both value representations. Skeleton maps
// (X, params, kinetics, kappa) to dX; a white-box prior maps (X, params) to dX.
struct Skeleton {
  std::function<Mat(const Mat&, const Mat&, const Mat&, const Mat&)> plain;
  std::function<ad::Tensor(const ad::Tensor&, const Mat&, const ad::Tensor&, const ad::Tensor&)>
      tape;
  explicit operator bool() const { return bool(plain) && bool(tape); }
};
struct WhiteBox {
  std::function<Mat(const Mat&, const Mat&)> plain;
  std::function<ad::Tensor(const ad::Tensor&, const Mat&)> tape;
  explicit operator bool() const { return bool(plain) && bool(tape); }
};

struct LearnedRhs {
  Composer composer = Composer::BlackBox;
  ModelSystem system = ModelSystem::Urp;
  int state_dim = 0;
  int param_dim = 0;
  Mlp mlp;
  std::vector<std::string> kappa_names;
  Mat kappa;            // 1 x nk
  Mat kappa_trainable;  // 1 x nk, 1 = trainable
  BfParams bf;          // fixed B&F constants (alpha, u_f, maintenance rates)
  ChannelScaling scaling;
  Vec output_scale;     // multiplies network outputs column-wise
  Skeleton custom;      // CUSTOM + GRAY_FUNCTIONAL
  WhiteBox prior;       // GRAY_ADDITIVE / GRAY_MULTIPLICATIVE
  // Stand-in for the network (plain evaluation only): returns what the
  // scaled network output represents, given physical state and parameters.
  std::function<Mat(const Mat&, const Mat&)> oracle;

  int kinetic_width() const {
    if (composer != Composer::GrayFunctional) return state_dim;
    if (system == ModelSystem::Urp) return 1;
    if (system == ModelSystem::Bf) return 3;
    return mlp.output_width();
  }

  void validate() const {
    if (state_dim <= 0) throw ConfigError("learned rhs: state_dim must be positive");
    if (scaling.offset.size() != state_dim || scaling.range.size() != state_dim)
      throw ConfigError("learned rhs: scaling size mismatch");
    if ((scaling.range.array() <= 0.0).any())
      throw ConfigError("learned rhs: scaling ranges must be positive");
    if (kappa.rows() != 1 || kappa.cols() != Eigen::Index(kappa_names.size()) ||
        kappa_trainable.rows() != 1 || kappa_trainable.cols() != kappa.cols())
      throw ConfigError("learned rhs: kappa shape mismatch");
    if (!oracle) {
      mlp.validate();
      if (mlp.input_width() != state_dim + param_dim)
        throw ConfigError("learned rhs: network input width " + std::to_string(mlp.input_width()) +
                          " != state + parameter width " + std::to_string(state_dim + param_dim));
      if (mlp.output_width() != kinetic_width())
        throw ConfigError("learned rhs: " + to_string(composer) + " on " + to_string(system) +
                          " needs output width " + std::to_string(kinetic_width()) + ", got " +
                          std::to_string(mlp.output_width()));
      if (output_scale.size() != mlp.output_width())
        throw ConfigError("learned rhs: output_scale size mismatch");
    }
    switch (composer) {
      case Composer::BlackBox: break;
      case Composer::GrayFunctional:
        if (system == ModelSystem::Urp && (state_dim != 2 || kappa.cols() != 2))
          throw ConfigError("learned rhs: URP gray box needs 2 states and kappa {B, beta}");
        if (system == ModelSystem::Bf && (state_dim != 6 || kappa.cols() != 4))
          throw ConfigError("learned rhs: BF gray box needs 6 states and kappa {omega, sigma, rho, eta}");
        if (system == ModelSystem::Custom && !custom)
          throw ConfigError("learned rhs: CUSTOM gray box needs a skeleton");
        break;
      case Composer::GrayAdditive:
      case Composer::GrayMultiplicative:
        if (!prior) throw ConfigError("learned rhs: " + to_string(composer) + " needs a white-box prior");
        break;
    }
  }
};

template <class T>
struct RhsParams {
  MlpParams<T> mlp;
  T kappa;
};

inline RhsParams<Mat> plain_rhs_params(const LearnedRhs& m) {
  RhsParams<Mat> p;
  if (!m.oracle) p.mlp = plain_params(m.mlp);
  p.kappa = m.kappa;
  return p;
}

// Network weights become leaves; kappa becomes a leaf only if some entry trains.
inline RhsParams<ad::Tensor> tape_rhs_params(ad::Tape& tape, const LearnedRhs& m) {
  if (m.oracle) throw UsageError("tape evaluation is not available for oracle kinetics");
  RhsParams<ad::Tensor> p;
  p.mlp = tape_params(tape, m.mlp);
  p.kappa = m.kappa_trainable.sum() > 0 ? tape.leaf(m.kappa) : tape.constant(m.kappa);
  return p;
}

namespace detail {

template <class T>
T network_output(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const T& x_phys,
                 const Mat& params) {
  if constexpr (std::is_same_v<T, Mat>) {
    if (m.oracle) return m.oracle(x_phys, params);
  }
  T input = m.param_dim > 0 ? ad::hstack(std::vector<T>{s, ad::lift(s, params)}) : s;
  T out = forward(p.mlp, input);
  if (!(m.output_scale.array() == 1.0).all())
    out = ad::col_affine(out, m.output_scale, Vec::Zero(m.output_scale.size()));
  return out;
}

template <class T>
T urp_skeleton_t(const T& x, const T& phi, const T& kappa) {
  const T x1 = ad::col(x, 0), x2 = ad::col(x, 1);
  const T dx1 = ad::sub(phi, x1);
  // -x2 + B phi - beta x2
  const T dx2 = ad::sub(ad::scale_by_entry(phi, kappa, 0),
                        ad::add(x2, ad::scale_by_entry(x2, kappa, 1)));
  return ad::hstack(std::vector<T>{dx1, dx2});
}

template <class T>
T bf_skeleton_t(const T& x, const T& r, const T& kappa, const BfParams& bp) {
  std::vector<T> c;
  for (int i = 0; i < 6; ++i) c.push_back(ad::col(x, i));
  const T r1 = ad::col(r, 0), r2 = ad::col(r, 1), r3 = ad::col(r, 2);
  const double a = bp.alpha;
  const T dx = ad::sub(r1, ad::scale(c[0], a + bp.mu_c1));
  const T dy = ad::sub(r2, ad::scale(c[1], a + bp.mu_c2));
  const T dz = ad::sub(r3, ad::scale(c[2], a + bp.mu_c3));
  const T du = ad::sub(ad::add_scalar(ad::scale(c[3], -a), a * bp.u_f), r1);
  const T dv = ad::sub(ad::sub(ad::scale_by_entry(r1, kappa, 0), ad::add(r2, ad::scale(c[4], a))),
                       ad::scale_by_entry(r3, kappa, 1));
  const T dg = ad::sub(ad::add(ad::scale_by_entry(r2, kappa, 2), ad::scale_by_entry(r3, kappa, 3)),
                       ad::scale(c[5], a));
  return ad::hstack(std::vector<T>{dx, dy, dz, du, dv, dg});
}

}  // namespace detail

// Physical derivative dX at internal state s (rows = batch).
template <class T>
T eval_rhs_physical(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params) {
  const Mat& sv = ad::value_of(s);
  if (sv.cols() != m.state_dim)
    throw ConfigError("eval_rhs: state width " + std::to_string(sv.cols()) + " != " +
                      std::to_string(m.state_dim));
  if (params.cols() != m.param_dim || (m.param_dim > 0 && params.rows() != sv.rows()))
    throw ConfigError("eval_rhs: parameter array has shape " + std::to_string(params.rows()) + "x" +
                      std::to_string(params.cols()) + ", expected " + std::to_string(sv.rows()) +
                      "x" + std::to_string(m.param_dim));
  const bool scaled = !m.scaling.is_identity();
  const T x = scaled ? ad::col_affine(s, m.scaling.range, m.scaling.offset) : s;
  const T net = detail::network_output(m, p, s, x, params);
  switch (m.composer) {
    case Composer::BlackBox: return net;
    case Composer::GrayFunctional:
      switch (m.system) {
        case ModelSystem::Urp: return detail::urp_skeleton_t(x, net, p.kappa);
        case ModelSystem::Bf: return detail::bf_skeleton_t(x, net, p.kappa, m.bf);
        case ModelSystem::Custom:
          if constexpr (std::is_same_v<T, Mat>) return m.custom.plain(x, params, net, p.kappa);
          else return m.custom.tape(x, params, net, p.kappa);
      }
      break;
    case Composer::GrayAdditive:
    case Composer::GrayMultiplicative: {
      T prior;
      if constexpr (std::is_same_v<T, Mat>) prior = m.prior.plain(x, params);
      else prior = m.prior.tape(x, params);
      return m.composer == Composer::GrayAdditive ? ad::add(prior, net) : ad::mul(prior, net);
    }
  }
  throw ConfigError("eval_rhs: unsupported composer/system combination");
}

// ds/dt in internal coordinates.
template <class T>
T eval_rhs(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params) {
  T dx = eval_rhs_physical(m, p, s, params);
  if (m.scaling.is_identity()) return dx;
  return ad::col_affine(dx, m.scaling.range.cwiseInverse(), Vec::Zero(m.state_dim));
}

inline void check_finite_step(const Mat& v, long step) {
  if (!v.allFinite())
    throw RolloutError("rk4_step: non-finite state at step " + std::to_string(step), step);
}

// One classical RK4 step with a per-row step size h (rows with h = 0 stay put).
template <class T>
T rk4_advance(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params,
              const Vec& h) {
  const Vec half = 0.5 * h;
  const T k1 = eval_rhs(m, p, s, params);
  const T k2 = eval_rhs(m, p, ad::add(s, ad::row_scale(k1, half)), params);
  const T k3 = eval_rhs(m, p, ad::add(s, ad::row_scale(k2, half)), params);
  const T k4 = eval_rhs(m, p, ad::add(s, ad::row_scale(k3, h)), params);
  const T incr = ad::add(ad::add(k1, k4), ad::scale(ad::add(k2, k3), 2.0));
  return ad::add(s, ad::row_scale(incr, h / 6.0));
}

template <class T>
T rk4_step(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params, const Vec& h,
           long step = 0) {
  if (h.size() != ad::value_of(s).rows()) throw ConfigError("rk4_step: step vector length mismatch");
  if ((h.array() < 0.0).any()) throw ConfigError("rk4_step: negative step");
  T out = rk4_advance(m, p, s, params, h);
  check_finite_step(ad::value_of(out), step);
  return out;
}

template <class T>
T rk4_step(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params, double dt,
           long step = 0) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  return rk4_step(m, p, s, params, Vec::Constant(ad::value_of(s).rows(), dt), step);
}

template <class T>
T integrate_gap(const LearnedRhs& m, const RhsParams<T>& p, const T& s, const Mat& params,
                const std::vector<double>& sub_steps) {
  T x = s;
  long k = 0;
  for (double h : sub_steps) x = rk4_step(m, p, x, params, h, k++);
  return x;
}

// Convenience wrappers in physical coordinates (plain evaluation).
inline void check_state_width(const LearnedRhs& m, const Mat& x) {
  if (x.cols() != m.state_dim)
    throw ConfigError("model: state width " + std::to_string(x.cols()) + " != " +
                      std::to_string(m.state_dim));
}

inline Mat model_rhs(const LearnedRhs& m, const Mat& x_phys, const Mat& params) {
  check_state_width(m, x_phys);
  const auto p = plain_rhs_params(m);
  return eval_rhs_physical(m, p, Mat(m.scaling.to_internal(x_phys)), params);
}

// Network-side kinetic quantities (gray-box: phi or mu_i * biomass_i).
inline Mat model_kinetics(const LearnedRhs& m, const Mat& x_phys, const Mat& params) {
  check_state_width(m, x_phys);
  const auto p = plain_rhs_params(m);
  const Mat s = m.scaling.to_internal(x_phys);
  return detail::network_output(m, p, s, x_phys, params);
}

inline RhsFn model_rhs_fn(const LearnedRhs& m, const Vec& params) {
  return [m, params](const Vec& x) -> Vec {
    const Mat out = model_rhs(m, Mat(x.transpose()), Mat(params.transpose()));
    return out.row(0).transpose();
  };
}

// Known physics with zero kinetics, usable as an additive/multiplicative prior.
inline WhiteBox linear_part_prior(const TruthSystem& sys) {
  WhiteBox w;
  if (sys.kind == SystemKind::Urp) {
    const double beta = sys.urp.beta;
    w.plain = [beta](const Mat& x, const Mat&) {
      Mat d(x.rows(), 2);
      d.col(0) = -x.col(0);
      d.col(1) = -(1.0 + beta) * x.col(1);
      return d;
    };
    w.tape = [beta](const ad::Tensor& x, const Mat&) {
      return ad::hstack(std::vector<ad::Tensor>{ad::scale(ad::col(x, 0), -1.0),
                                                ad::scale(ad::col(x, 1), -(1.0 + beta))});
    };
  } else if (sys.kind == SystemKind::Bf) {
    const BfParams bp = sys.bf;
    w.plain = [bp](const Mat& x, const Mat&) {
      const Mat zero = Mat::Zero(x.rows(), 3);
      Mat kappa(1, 4);
      kappa << bp.omega, bp.sigma, bp.rho, bp.eta;
      return detail::bf_skeleton_t<Mat>(x, zero, kappa, bp);
    };
    w.tape = [bp](const ad::Tensor& x, const Mat&) {
      Mat kappa(1, 4);
      kappa << bp.omega, bp.sigma, bp.rho, bp.eta;
      const ad::Tensor zero = x.tape().constant(Mat::Zero(x.rows(), 3));
      return detail::bf_skeleton_t<ad::Tensor>(x, zero, x.tape().constant(kappa), bp);
    };
  } else {
    const Mat a = sys.linear;
    w.plain = [a](const Mat& x, const Mat&) { return Mat(x * a.transpose()); };
    w.tape = [a](const ad::Tensor& x, const Mat&) {
      return ad::matmul(x, x.tape().constant(a.transpose()));
    };
  }
  return w;
}

// Network replaced by the exact kinetic sub-functions of the truth system.
inline std::function<Mat(const Mat&, const Mat&)> truth_oracle(const TruthSystem& sys,
                                                               Composer composer) {
  return [sys, composer](const Mat& x, const Mat& params) {
    const int k = composer == Composer::GrayFunctional
                      ? (sys.kind == SystemKind::Urp ? 1 : 3)
                      : sys.dim();
    Mat out(x.rows(), k);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const TruthSystem s = params.cols() > 0 ? sys.with_params(params.row(r).transpose()) : sys;
      const Vec xr = x.row(r).transpose();
      if (composer == Composer::GrayFunctional) {
        out.row(r) = s.kinetic_targets(xr).transpose();
      } else if (composer == Composer::BlackBox) {
        out.row(r) = s.rhs(xr).transpose();
      } else {
        const Vec prior = linear_part_prior(s).plain(Mat(xr.transpose()), Mat()).row(0).transpose();
        const Vec full = s.rhs(xr);
        if (composer == Composer::GrayAdditive)
          out.row(r) = (full - prior).transpose();
        else
          out.row(r) = full.cwiseQuotient(prior).transpose();
      }
    }
    return out;
  };
}

}  // namespace odenet
