#pragma once

// Tape-based reverse-mode differentiation over dense row-major-by-convention
// matrices (rows = batch, cols = features). Every op below exists twice: once
// on plain Eigen matrices and once on tape tensors, so model code written as a
// template over the value type runs unchanged for inference and training.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "odenet/error.hpp"

namespace odenet {
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
}  // namespace odenet

namespace odenet::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns the storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf: gradients are accumulated for it.
  Tensor leaf(Mat value) { return push(std::move(value), true, {}); }
  // Constant: never receives a gradient.
  Tensor constant(Mat value) { return push(std::move(value), false, {}); }

  Tensor push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward)});
    return Tensor(this, nodes_.size() - 1);
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape backwards. Leaves not
  // reachable from root report a zero gradient.
  void backward(const Tensor& root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw UsageError("backward: root must be a 1x1 scalar, got " + std::to_string(root.rows()) +
                       "x" + std::to_string(root.cols()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      // Parents always have smaller ids, so no callback writes back into node i.
      Mat g = std::move(n.grad);
      n.backward(*this, g);
      nodes_[i].grad = std::move(g);
    }
  }

  Mat grad(const Tensor& t) const {
    const Node& n = nodes_[t.id()];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Tensor::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Scalar helpers

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

enum class Activation { Linear, SiLU };

namespace detail {

inline bool any_grad(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.tape().requires_grad(t.id())) return true;
  return false;
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

inline Mat apply_silu(const Mat& z) { return z.unaryExpr([](double v) { return silu(v); }); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain overloads

inline Mat lift(const Mat& /*like*/, Mat m) { return m; }
inline Mat add(const Mat& a, const Mat& b) {
  detail::check_same_shape(a, b, "add");
  return a + b;
}
inline Mat sub(const Mat& a, const Mat& b) {
  detail::check_same_shape(a, b, "sub");
  return a - b;
}
inline Mat mul(const Mat& a, const Mat& b) {
  detail::check_same_shape(a, b, "mul");
  return a.cwiseProduct(b);
}
inline Mat div(const Mat& a, const Mat& b) {
  detail::check_same_shape(a, b, "div");
  return a.cwiseQuotient(b);
}
inline Mat scale(const Mat& a, double c) { return a * c; }
inline Mat add_scalar(const Mat& a, double c) { return a.array() + c; }
inline Mat row_scale(const Mat& a, const Vec& h) { return h.asDiagonal() * a; }
inline Mat col_affine(const Mat& a, const Vec& s, const Vec& o) {
  Mat r = a * s.asDiagonal();
  r.rowwise() += o.transpose();
  return r;
}
inline Mat exp(const Mat& a) { return a.array().exp(); }
inline Mat silu(const Mat& a) { return detail::apply_silu(a); }
inline Mat col(const Mat& a, Eigen::Index j) { return a.col(j); }
inline Mat hstack(const std::vector<Mat>& parts) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Mat r(parts.empty() ? 0 : parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r.rows()) throw ConfigError("hstack: row mismatch");
    r.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return r;
}
inline Mat vstack(const std::vector<Mat>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat r(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index o = 0;
  for (const auto& p : parts) {
    if (p.cols() != r.cols()) throw ConfigError("vstack: column mismatch");
    r.middleRows(o, p.rows()) = p;
    o += p.rows();
  }
  return r;
}
inline Mat scale_by_entry(const Mat& a, const Mat& k, Eigen::Index j) { return a * k(0, j); }
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  return a * b;
}
inline Mat dense(const Mat& x, const Mat& w, const Mat& b, Activation act) {
  if (x.cols() != w.rows()) {
    throw ConfigError("dense: input width " + std::to_string(x.cols()) + " != layer width " +
                      std::to_string(w.rows()));
  }
  Mat z = x * w;
  z.rowwise() += b.row(0);
  if (act == Activation::SiLU) return detail::apply_silu(z);
  return z;
}
inline Mat mask_blend(const Mat& a, const Mat& data, const Mat& mask) {
  detail::check_same_shape(a, data, "mask_blend");
  return (a.array() * (1.0 - mask.array()) + data.array() * mask.array()).matrix();
}
inline Mat masked_sq_sum(const Mat& a, const Mat& data, const Mat& mask) {
  detail::check_same_shape(a, data, "masked_sq_sum");
  Mat r(1, 1);
  r(0, 0) = (mask.array() * (a - data).array().square()).sum();
  return r;
}
inline Mat sum(const Mat& a) {
  Mat r(1, 1);
  r(0, 0) = a.sum();
  return r;
}

// ---------------------------------------------------------------------------
// Tape overloads

inline Tensor lift(const Tensor& like, Mat m) { return like.tape().constant(std::move(m)); }

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a.value(), b.value(), "add");
  const bool rg = detail::any_grad({a, b});
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), rg, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a.value(), b.value(), "sub");
  const bool rg = detail::any_grad({a, b});
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), rg, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a.value(), b.value(), "mul");
  const bool rg = detail::any_grad({a, b});
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value().cwiseProduct(b.value()), rg, [ia, ib](Tape& t, const Mat& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a.value(), b.value(), "div");
  const bool rg = detail::any_grad({a, b});
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value().cwiseQuotient(b.value()), rg, [ia, ib](Tape& t, const Mat& g) {
    const Mat& bv = t.value(ib);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseQuotient(bv));
    if (t.requires_grad(ib)) {
      t.accumulate(ib, (-g.array() * t.value(ia).array() / bv.array().square()).matrix());
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  const auto ia = a.id();
  return a.tape().push(a.value() * c, detail::any_grad({a}),
                       [ia, c](Tape& t, const Mat& g) { t.accumulate(ia, g * c); });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  const auto ia = a.id();
  return a.tape().push(a.value().array() + c, detail::any_grad({a}),
                       [ia](Tape& t, const Mat& g) { t.accumulate(ia, g); });
}

inline Tensor row_scale(const Tensor& a, const Vec& h) {
  if (h.size() != a.rows()) throw ConfigError("row_scale: length mismatch");
  const auto ia = a.id();
  return a.tape().push(h.asDiagonal() * a.value(), detail::any_grad({a}),
                       [ia, h](Tape& t, const Mat& g) { t.accumulate(ia, h.asDiagonal() * g); });
}

inline Tensor col_affine(const Tensor& a, const Vec& s, const Vec& o) {
  const auto ia = a.id();
  return a.tape().push(odenet::ad::col_affine(a.value(), s, o), detail::any_grad({a}),
                       [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s.asDiagonal()); });
}

inline Tensor exp(const Tensor& a) {
  const auto ia = a.id();
  Mat v = a.value().array().exp();
  const auto self = a.tape().size();
  return a.tape().push(std::move(v), detail::any_grad({a}), [ia, self](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(self)));
  });
}

inline Tensor silu(const Tensor& a) {
  const auto ia = a.id();
  return a.tape().push(detail::apply_silu(a.value()), detail::any_grad({a}),
                       [ia](Tape& t, const Mat& g) {
                         t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(
                                              [](double v) { return silu_grad(v); })));
                       });
}

inline Tensor col(const Tensor& a, Eigen::Index j) {
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return a.tape().push(a.value().col(j), detail::any_grad({a}),
                       [ia, j, rows, cols](Tape& t, const Mat& g) {
                         Mat full = Mat::Zero(rows, cols);
                         full.col(j) = g;
                         t.accumulate(ia, full);
                       });
}

inline Tensor hstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("hstack: no parts");
  std::vector<Mat> values;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  bool rg = false;
  for (const auto& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
    rg = rg || p.tape().requires_grad(p.id());
  }
  return parts.front().tape().push(odenet::ad::hstack(values), rg,
                                   [ids, widths](Tape& t, const Mat& g) {
                                     Eigen::Index c = 0;
                                     for (std::size_t i = 0; i < ids.size(); ++i) {
                                       if (t.requires_grad(ids[i]))
                                         t.accumulate(ids[i], g.middleCols(c, widths[i]));
                                       c += widths[i];
                                     }
                                   });
}

inline Tensor vstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("vstack: no parts");
  std::vector<Mat> values;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> heights;
  bool rg = false;
  for (const auto& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rg = rg || p.tape().requires_grad(p.id());
  }
  return parts.front().tape().push(odenet::ad::vstack(values), rg,
                                   [ids, heights](Tape& t, const Mat& g) {
                                     Eigen::Index r = 0;
                                     for (std::size_t i = 0; i < ids.size(); ++i) {
                                       if (t.requires_grad(ids[i]))
                                         t.accumulate(ids[i], g.middleRows(r, heights[i]));
                                       r += heights[i];
                                     }
                                   });
}

inline Tensor scale_by_entry(const Tensor& a, const Tensor& k, Eigen::Index j) {
  const auto ia = a.id(), ik = k.id();
  const double kj = k.value()(0, j);
  return a.tape().push(a.value() * kj, detail::any_grad({a, k}),
                       [ia, ik, j, kj](Tape& t, const Mat& g) {
                         if (t.requires_grad(ia)) t.accumulate(ia, g * kj);
                         if (t.requires_grad(ik)) {
                           Mat dk = Mat::Zero(t.value(ik).rows(), t.value(ik).cols());
                           dk(0, j) = g.cwiseProduct(t.value(ia)).sum();
                           t.accumulate(ik, dk);
                         }
                       });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() * b.value(), detail::any_grad({a, b}),
                       [ia, ib](Tape& t, const Mat& g) {
                         if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                         if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                       });
}

// Fused affine layer + activation: act(x W + 1 b).
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
  if (x.cols() != w.rows()) {
    throw ConfigError("dense: input width " + std::to_string(x.cols()) + " != layer width " +
                      std::to_string(w.rows()));
  }
  Mat z = x.value() * w.value();
  z.rowwise() += b.value().row(0);
  Mat out = act == Activation::SiLU ? detail::apply_silu(z) : z;
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  Mat dact;
  if (act == Activation::SiLU) dact = z.unaryExpr([](double v) { return silu_grad(v); });
  return x.tape().push(std::move(out), detail::any_grad({x, w, b}),
                       [ix, iw, ib, dact = std::move(dact)](Tape& t, const Mat& g) {
                         const Mat dz = dact.size() ? Mat(g.cwiseProduct(dact)) : g;
                         if (t.requires_grad(ix)) t.accumulate(ix, dz * t.value(iw).transpose());
                         if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * dz);
                         if (t.requires_grad(ib)) t.accumulate(ib, dz.colwise().sum());
                       });
}

inline Tensor mask_blend(const Tensor& a, const Mat& data, const Mat& mask) {
  detail::check_same_shape(a.value(), data, "mask_blend");
  const auto ia = a.id();
  Mat keep = (1.0 - mask.array()).matrix();
  Mat v = (a.value().array() * keep.array() + data.array() * mask.array()).matrix();
  return a.tape().push(std::move(v), detail::any_grad({a}),
                       [ia, keep = std::move(keep)](Tape& t, const Mat& g) {
                         t.accumulate(ia, g.cwiseProduct(keep));
                       });
}

inline Tensor masked_sq_sum(const Tensor& a, const Mat& data, const Mat& mask) {
  detail::check_same_shape(a.value(), data, "masked_sq_sum");
  const auto ia = a.id();
  Mat diff = (mask.array() * (a.value() - data).array()).matrix();
  Mat v(1, 1);
  v(0, 0) = (mask.array() * (a.value() - data).array().square()).sum();
  return a.tape().push(std::move(v), detail::any_grad({a}),
                       [ia, diff = std::move(diff)](Tape& t, const Mat& g) {
                         t.accumulate(ia, diff * (2.0 * g(0, 0)));
                       });
}

inline Tensor sum(const Tensor& a) {
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape().push(std::move(v), detail::any_grad({a}),
                       [ia, rows, cols](Tape& t, const Mat& g) {
                         t.accumulate(ia, Mat::Constant(rows, cols, g(0, 0)));
                       });
}

// Uniform access to the numeric payload of either representation.
inline const Mat& value_of(const Mat& m) { return m; }
inline const Mat& value_of(const Tensor& t) { return t.value(); }

}  // namespace odenet::ad
