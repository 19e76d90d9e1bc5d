#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/error.hpp"

namespace odenet {

using ad::Activation;

struct Layer {
  Mat weight;  // in x out
  Mat bias;    // 1 x out
  Activation activation = Activation::Linear;
};

// Multilayer perceptron: SiLU on every hidden layer, linear output layer.
struct Mlp {
  std::vector<Layer> layers;

  int input_width() const { return layers.empty() ? 0 : int(layers.front().weight.rows()); }
  int output_width() const { return layers.empty() ? 0 : int(layers.back().weight.cols()); }

  std::vector<int> widths() const {
    std::vector<int> w;
    if (layers.empty()) return w;
    w.push_back(input_width());
    for (const auto& l : layers) w.push_back(int(l.weight.cols()));
    return w;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
        throw ConfigError("mlp: bias shape mismatch at layer " + std::to_string(i));
      if (i + 1 < layers.size() && layers[i + 1].weight.rows() != l.weight.cols())
        throw ConfigError("mlp: widths do not chain at layer " + std::to_string(i));
      const bool last = i + 1 == layers.size();
      if (last && l.activation != Activation::Linear)
        throw ConfigError("mlp: output layer must be linear");
      if (!last && l.activation != Activation::SiLU)
        throw ConfigError("mlp: hidden layers must use SiLU");
    }
  }
};

// Hidden layers: U(-sqrt(1/fan_in), sqrt(1/fan_in)) for weights and biases.
// The output layer draws from the same law and is then multiplied by
// output_scale (0.01 shrinks the initial vector field).
inline Mlp init_weights(const std::vector<int>& widths, std::uint64_t seed,
                        double output_scale = 1.0) {
  if (widths.size() < 2) throw ConfigError("init_weights: need at least input and output width");
  if (!(output_scale > 0.0)) throw ConfigError("init_weights: output_scale must be positive");
  for (int w : widths)
    if (w <= 0) throw ConfigError("init_weights: widths must be positive");

  std::mt19937_64 rng(seed);
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    const double bound = std::sqrt(1.0 / widths[i]);
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l;
    l.weight.resize(widths[i], widths[i + 1]);
    l.bias.resize(1, widths[i + 1]);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = u(rng);
    for (Eigen::Index c = 0; c < l.bias.cols(); ++c) l.bias(0, c) = u(rng);
    if (last) {
      l.weight *= output_scale;
      l.bias *= output_scale;
    }
    l.activation = last ? Activation::Linear : Activation::SiLU;
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

// Parameters of an MLP in either representation (plain matrices or tape
// leaves). Built once per rollout, then evaluated many times.
template <class T>
struct MlpParams {
  std::vector<T> weights;
  std::vector<T> biases;
  std::vector<Activation> activations;
};

inline MlpParams<Mat> plain_params(const Mlp& mlp) {
  MlpParams<Mat> p;
  for (const auto& l : mlp.layers) {
    p.weights.push_back(l.weight);
    p.biases.push_back(l.bias);
    p.activations.push_back(l.activation);
  }
  return p;
}

inline MlpParams<ad::Tensor> tape_params(ad::Tape& tape, const Mlp& mlp) {
  MlpParams<ad::Tensor> p;
  for (const auto& l : mlp.layers) {
    p.weights.push_back(tape.leaf(l.weight));
    p.biases.push_back(tape.leaf(l.bias));
    p.activations.push_back(l.activation);
  }
  return p;
}

template <class T>
T forward(const MlpParams<T>& p, const T& input) {
  if (p.weights.empty()) throw ConfigError("forward: empty network");
  const auto& first = ad::value_of(p.weights.front());
  if (ad::value_of(input).cols() != first.rows()) {
    throw ConfigError("forward: input width " + std::to_string(ad::value_of(input).cols()) +
                      " != network input width " + std::to_string(first.rows()));
  }
  T h = ad::dense(input, p.weights[0], p.biases[0], p.activations[0]);
  for (std::size_t i = 1; i < p.weights.size(); ++i)
    h = ad::dense(h, p.weights[i], p.biases[i], p.activations[i]);
  return h;
}

inline Mat forward(const Mlp& mlp, const Mat& input) {
  if (mlp.layers.empty()) throw ConfigError("forward: empty network");
  if (input.cols() != mlp.input_width()) {
    throw ConfigError("forward: input width " + std::to_string(input.cols()) +
                      " != network input width " + std::to_string(mlp.input_width()));
  }
  Mat h = ad::dense(input, mlp.layers[0].weight, mlp.layers[0].bias, mlp.layers[0].activation);
  for (std::size_t i = 1; i < mlp.layers.size(); ++i)
    h = ad::dense(h, mlp.layers[i].weight, mlp.layers[i].bias, mlp.layers[i].activation);
  return h;
}

}  // namespace odenet
