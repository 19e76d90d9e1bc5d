#pragma once

// Ground-truth mechanistic systems used to generate data and score models:
// the non-isothermal CSTR of Uppal, Ray & Poore (two states, parameter Da) and
// the Baltzis & Fredrickson three-species co-culture (six states).

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/error.hpp"

namespace odenet {

using RhsFn = std::function<Vec(const Vec&)>;

struct UrpParams {
  double B = 11.0;
  double beta = 3.0;
  double Da = 0.3;

  void validate() const {
    if (!(B > 0.0)) throw ConfigError("urp: B must be positive");
    if (!(beta >= 0.0)) throw ConfigError("urp: beta must be non-negative");
    if (!(Da >= 0.0 && Da < 1.0)) throw ConfigError("urp: Da must lie in [0, 1)");
  }
};

struct UrpState {
  double x1 = 0.0;  // conversion
  double x2 = 0.0;  // dimensionless temperature
};

struct BfParams {
  double alpha = 1.0 / 7.3;
  double u_f = 250.0;
  double omega = 9.7;
  double sigma = 10.0;
  double rho = 0.13138686;
  double eta = 1.29166;
  double phi1 = 0.2941176;
  double phi2 = 0.367647;
  double mu_c1 = 0.367647;
  double mu_c2 = 0.117647;
  double mu_c3 = 0.1617647;

  void validate() const {
    for (double v : {alpha, u_f, omega, sigma, rho, eta, phi1, phi2, mu_c1, mu_c2, mu_c3})
      if (!(v > 0.0)) throw ConfigError("bf: all parameters must be strictly positive");
  }
};

struct BfState {
  double x = 0.0, y = 0.0, z = 0.0;  // host, commensal 1, commensal 2
  double u = 0.0, v = 0.0, g = 0.0;  // substrate, growth factor, inhibition factor
};

// ---------------------------------------------------------------------------
// Direct right-hand sides.

inline std::array<double, 2> urp_rhs(const UrpState& s, const UrpParams& p) {
  const double reaction = p.Da * (1.0 - s.x1) * std::exp(s.x2);
  return {-s.x1 + reaction, -s.x2 + p.B * p.Da * (1.0 - s.x1) * std::exp(s.x2) - p.beta * s.x2};
}

// Reaction kinetics phi = Da (1 - x1) exp(x2).
inline double urp_kinetics(const UrpState& s, const UrpParams& p) {
  return p.Da * (1.0 - s.x1) * std::exp(s.x2);
}

// Conservation skeleton of the CSTR given the reaction rate phi.
inline std::array<double, 2> urp_skeleton(const UrpState& s, double phi, double B, double beta) {
  return {-s.x1 + phi, -s.x2 + B * phi - beta * s.x2};
}

struct BfGrowth {
  double mu1, mu2, mu3;
};

inline BfGrowth bf_growth(const BfState& s, const BfParams& p) {
  const double d1 = (1.0 + s.u) * (1.0 + s.g);
  const double d2 = 1.0 + s.v;
  const double d3 = p.sigma + s.v;
  if (!(d1 > 0.0) || !(d2 > 0.0) || !(d3 > 0.0))
    throw DomainError("bf: non-positive growth-rate denominator");
  return {s.u / d1, p.phi1 * s.v / d2, p.phi2 * s.v / d3};
}

inline std::array<double, 6> bf_rhs(const BfState& s, const BfParams& p) {
  const BfGrowth m = bf_growth(s, p);
  return {
      -p.alpha * s.x + m.mu1 * s.x - p.mu_c1 * s.x,
      -p.alpha * s.y + m.mu2 * s.y - p.mu_c2 * s.y,
      -p.alpha * s.z + m.mu3 * s.z - p.mu_c3 * s.z,
      p.alpha * (p.u_f - s.u) - m.mu1 * s.x,
      -p.alpha * s.v + p.omega * m.mu1 * s.x - m.mu2 * s.y - p.sigma * m.mu3 * s.z,
      -p.alpha * s.g + p.rho * m.mu2 * s.y + p.eta * m.mu3 * s.z,
  };
}

// Mass-balance skeleton driven by biomass-weighted rates r_i = mu_i * biomass_i.
// Couplings omega, sigma, rho, eta are passed separately because a gray-box
// model may be fitting them.
inline std::array<double, 6> bf_skeleton(const BfState& s, const std::array<double, 3>& r,
                                         const BfParams& p, const std::array<double, 4>& kappa) {
  const auto [omega, sigma, rho, eta] = kappa;
  return {
      -p.alpha * s.x + r[0] - p.mu_c1 * s.x,
      -p.alpha * s.y + r[1] - p.mu_c2 * s.y,
      -p.alpha * s.z + r[2] - p.mu_c3 * s.z,
      p.alpha * (p.u_f - s.u) - r[0],
      -p.alpha * s.v + omega * r[0] - r[1] - sigma * r[2],
      -p.alpha * s.g + rho * r[1] + eta * r[2],
  };
}

// ---------------------------------------------------------------------------
// Tagged system record consumed by the dataset and evaluation layers.

enum class SystemKind { Urp, Bf, Linear };

inline std::string to_string(SystemKind k) {
  switch (k) {
    case SystemKind::Urp: return "URP";
    case SystemKind::Bf: return "BF";
    case SystemKind::Linear: return "LINEAR";
  }
  return "?";
}

inline SystemKind system_kind_from_string(const std::string& s) {
  if (s == "URP") return SystemKind::Urp;
  if (s == "BF") return SystemKind::Bf;
  if (s == "LINEAR") return SystemKind::Linear;
  throw ConfigError("unknown system '" + s + "'");
}

struct TruthSystem {
  SystemKind kind = SystemKind::Urp;
  UrpParams urp;
  BfParams bf;
  Mat linear;  // dx/dt = A x, test hook

  static TruthSystem make_urp(UrpParams p = {}) {
    p.validate();
    TruthSystem s;
    s.kind = SystemKind::Urp;
    s.urp = p;
    return s;
  }
  static TruthSystem make_bf(BfParams p = {}) {
    p.validate();
    TruthSystem s;
    s.kind = SystemKind::Bf;
    s.bf = p;
    return s;
  }
  static TruthSystem make_linear(Mat a) {
    if (a.rows() != a.cols()) throw ConfigError("linear system: matrix must be square");
    TruthSystem s;
    s.kind = SystemKind::Linear;
    s.linear = std::move(a);
    return s;
  }

  int dim() const {
    switch (kind) {
      case SystemKind::Urp: return 2;
      case SystemKind::Bf: return 6;
      case SystemKind::Linear: return int(linear.rows());
    }
    return 0;
  }

  // Per-trajectory parameters that enter the model as extra inputs.
  std::vector<std::string> param_names() const {
    if (kind == SystemKind::Urp) return {"Da"};
    return {};
  }
  Vec param_vector() const {
    if (kind == SystemKind::Urp) return Vec::Constant(1, urp.Da);
    return Vec(0);
  }

  std::vector<std::string> channel_names() const {
    if (kind == SystemKind::Urp) return {"x1", "x2"};
    if (kind == SystemKind::Bf) return {"x", "y", "z", "u", "v", "g"};
    std::vector<std::string> n;
    for (int i = 0; i < dim(); ++i) n.push_back("s" + std::to_string(i));
    return n;
  }

  // Copy with one named parameter replaced (Da, B, beta, or a B&F name).
  TruthSystem with_param(const std::string& name, double value) const {
    TruthSystem s = *this;
    if (kind == SystemKind::Urp) {
      if (name == "Da") s.urp.Da = value;
      else if (name == "B") s.urp.B = value;
      else if (name == "beta") s.urp.beta = value;
      else throw ConfigError("urp: unknown parameter '" + name + "'");
      return s;
    }
    if (kind == SystemKind::Bf) {
      double* slot = nullptr;
      auto& p = s.bf;
      if (name == "alpha") slot = &p.alpha;
      else if (name == "u_f") slot = &p.u_f;
      else if (name == "omega") slot = &p.omega;
      else if (name == "sigma") slot = &p.sigma;
      else if (name == "rho") slot = &p.rho;
      else if (name == "eta") slot = &p.eta;
      else if (name == "phi1") slot = &p.phi1;
      else if (name == "phi2") slot = &p.phi2;
      else if (name == "mu_c1") slot = &p.mu_c1;
      else if (name == "mu_c2") slot = &p.mu_c2;
      else if (name == "mu_c3") slot = &p.mu_c3;
      if (!slot) throw ConfigError("bf: unknown parameter '" + name + "'");
      *slot = value;
      return s;
    }
    throw ConfigError("linear system has no named parameters");
  }

  TruthSystem with_params(const Vec& p) const {
    if (kind == SystemKind::Urp) {
      if (p.size() != 1) throw ConfigError("urp: expected one parameter (Da)");
      return with_param("Da", p(0));
    }
    if (p.size() != 0) throw ConfigError(to_string(kind) + ": takes no per-trajectory parameters");
    return *this;
  }

  Vec rhs(const Vec& x) const {
    if (x.size() != dim()) throw ConfigError("truth rhs: state dimension mismatch");
    Vec d(dim());
    switch (kind) {
      case SystemKind::Urp: {
        const auto r = urp_rhs({x(0), x(1)}, urp);
        d << r[0], r[1];
        break;
      }
      case SystemKind::Bf: {
        const auto r = bf_rhs({x(0), x(1), x(2), x(3), x(4), x(5)}, bf);
        for (int i = 0; i < 6; ++i) d(i) = r[i];
        break;
      }
      case SystemKind::Linear: d = linear * x; break;
    }
    return d;
  }

  RhsFn rhs_fn() const {
    return [self = *this](const Vec& x) { return self.rhs(x); };
  }

  // Quantities a functional gray box learns: phi for URP; mu_i * biomass_i
  // for B&F.
  Vec kinetic_targets(const Vec& x) const {
    if (kind == SystemKind::Urp) return Vec::Constant(1, urp_kinetics({x(0), x(1)}, urp));
    if (kind == SystemKind::Bf) {
      const auto m = bf_growth({x(0), x(1), x(2), x(3), x(4), x(5)}, bf);
      Vec r(3);
      r << m.mu1 * x(0), m.mu2 * x(1), m.mu3 * x(2);
      return r;
    }
    throw ConfigError("linear system has no kinetic sub-functions");
  }

  // Growth rates mu_i (B&F only).
  Vec growth_rates(const Vec& x) const {
    if (kind != SystemKind::Bf) throw ConfigError("growth rates are defined for BF only");
    const auto m = bf_growth({x(0), x(1), x(2), x(3), x(4), x(5)}, bf);
    Vec r(3);
    r << m.mu1, m.mu2, m.mu3;
    return r;
  }

  // Experimental couplings a gray box may fit: URP {B, beta}; BF {omega,
  // sigma, rho, eta}.
  std::vector<std::string> kappa_names() const {
    if (kind == SystemKind::Urp) return {"B", "beta"};
    if (kind == SystemKind::Bf) return {"omega", "sigma", "rho", "eta"};
    return {};
  }
  Vec kappa() const {
    if (kind == SystemKind::Urp) return (Vec(2) << urp.B, urp.beta).finished();
    if (kind == SystemKind::Bf) return (Vec(4) << bf.omega, bf.sigma, bf.rho, bf.eta).finished();
    return Vec(0);
  }
};

}  // namespace odenet
