#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/error.hpp"

namespace odenet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Registry of trainable leaves. Values are owned elsewhere (the model); the
// store keeps gradients and Adam moments keyed by leaf name. One step counter
// is shared by all leaves.
class ParamStore {
 public:
  struct Leaf {
    std::string name;
    Mat* value = nullptr;
    Mat grad;
    Mat m;
    Mat v;
    Mat mask;  // 1 = trainable entry; empty means every entry trains
    double lr_scale = 1.0;
    bool has_grad = false;
  };

  void add(const std::string& name, Mat& value, Mat mask = {}, double lr_scale = 1.0) {
    if (index_.count(name)) throw ConfigError("param store: duplicate leaf '" + name + "'");
    if (mask.size() && (mask.rows() != value.rows() || mask.cols() != value.cols()))
      throw ConfigError("param store: mask shape mismatch for '" + name + "'");
    Leaf l;
    l.name = name;
    l.value = &value;
    l.grad = Mat::Zero(value.rows(), value.cols());
    l.m = Mat::Zero(value.rows(), value.cols());
    l.v = Mat::Zero(value.rows(), value.cols());
    l.mask = std::move(mask);
    l.lr_scale = lr_scale;
    index_[name] = leaves_.size();
    leaves_.push_back(std::move(l));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Leaf& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("param store: unknown leaf '" + name + "'");
    return leaves_[it->second];
  }
  const Leaf& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("param store: unknown leaf '" + name + "'");
    return leaves_[it->second];
  }

  void accumulate(const std::string& name, const Mat& g) {
    Leaf& l = at(name);
    if (g.rows() != l.grad.rows() || g.cols() != l.grad.cols())
      throw ConfigError("param store: gradient shape mismatch for '" + name + "'");
    l.grad += g;
    l.has_grad = true;
  }

  void zero_grad() {
    for (auto& l : leaves_) {
      l.grad.setZero();
      l.has_grad = false;
    }
  }

  std::vector<Leaf>& leaves() { return leaves_; }
  const std::vector<Leaf>& leaves() const { return leaves_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

 private:
  std::vector<Leaf> leaves_;
  std::map<std::string, std::size_t> index_;
  long step_ = 0;
};

// Bias-corrected Adam over every leaf that received a gradient since the last
// step. Masked-out entries never move. Gradients are zeroed afterwards.
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (const auto& l : store.leaves()) {
    if (l.has_grad && !l.grad.allFinite())
      throw NumericError("adam_step: non-finite gradient in leaf '" + l.name + "'");
  }
  store.set_step(store.step() + 1);
  const double t = double(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& l : store.leaves()) {
    if (!l.has_grad) continue;
    Mat g = l.grad;
    if (l.mask.size()) g = g.cwiseProduct(l.mask);
    l.m = cfg.beta1 * l.m + (1.0 - cfg.beta1) * g;
    l.v = cfg.beta2 * l.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double lr = cfg.lr * l.lr_scale;
    Mat update =
        (lr * (l.m.array() / c1) / ((l.v.array() / c2).sqrt() + cfg.eps)).matrix();
    if (l.mask.size()) update = update.cwiseProduct(l.mask);
    *l.value -= update;
  }
  store.zero_grad();
}

inline void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  adam_step(store, AdamConfig{lr, beta1, beta2, eps});
}

}  // namespace odenet
