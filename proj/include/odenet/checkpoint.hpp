#pragma once

// JSON checkpoints. Doubles are written in shortest round-trip form, so
// load(save(x)) reproduces every weight, moment and IC bit for bit.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "odenet/error.hpp"
#include "odenet/model.hpp"
#include "odenet/training.hpp"
#include "odenet/truth.hpp"

namespace odenet {

inline nlohmann::json mat_to_json(const Mat& m) {
  std::vector<double> flat;
  flat.reserve(std::size_t(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || Eigen::Index(flat.size()) != rows * cols)
    throw ConfigError("checkpoint: matrix payload does not match its shape");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[std::size_t(r * cols + c)];
  return m;
}

inline nlohmann::json vec_to_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
inline Vec vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), Eigen::Index(v.size()));
}

inline nlohmann::json bf_params_to_json(const BfParams& p) {
  return {{"alpha", p.alpha}, {"u_f", p.u_f},     {"omega", p.omega}, {"sigma", p.sigma},
          {"rho", p.rho},     {"eta", p.eta},     {"phi1", p.phi1},   {"phi2", p.phi2},
          {"mu_c1", p.mu_c1}, {"mu_c2", p.mu_c2}, {"mu_c3", p.mu_c3}};
}

inline BfParams bf_params_from_json(const nlohmann::json& j, BfParams p = {}) {
  auto get = [&j](const char* k, double& slot) {
    if (j.contains(k)) slot = j.at(k).get<double>();
  };
  get("alpha", p.alpha);
  get("u_f", p.u_f);
  get("omega", p.omega);
  get("sigma", p.sigma);
  get("rho", p.rho);
  get("eta", p.eta);
  get("phi1", p.phi1);
  get("phi2", p.phi2);
  get("mu_c1", p.mu_c1);
  get("mu_c2", p.mu_c2);
  get("mu_c3", p.mu_c3);
  return p;
}

inline nlohmann::json truth_to_json(const TruthSystem& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case SystemKind::Urp: j["B"] = s.urp.B; j["beta"] = s.urp.beta; j["Da"] = s.urp.Da; break;
    case SystemKind::Bf: j["params"] = bf_params_to_json(s.bf); break;
    case SystemKind::Linear: j["A"] = mat_to_json(s.linear); break;
  }
  return j;
}

inline TruthSystem truth_from_json(const nlohmann::json& j) {
  const auto kind = system_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case SystemKind::Urp: {
      UrpParams p;
      if (j.contains("B")) p.B = j.at("B").get<double>();
      if (j.contains("beta")) p.beta = j.at("beta").get<double>();
      if (j.contains("Da")) p.Da = j.at("Da").get<double>();
      return TruthSystem::make_urp(p);
    }
    case SystemKind::Bf:
      return TruthSystem::make_bf(j.contains("params") ? bf_params_from_json(j.at("params")) : BfParams{});
    case SystemKind::Linear: return TruthSystem::make_linear(mat_from_json(j.at("A")));
  }
  throw ConfigError("unknown system");
}

struct Checkpoint {
  OdeNetModel model;
  std::vector<std::string> param_names;
  OptimizerState optimizer;
  std::uint64_t seed = 0;
  // Physics that function members were built from, so they can be rebuilt.
  std::optional<TruthSystem> oracle_source;
  std::optional<TruthSystem> prior_source;
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  const LearnedRhs& m = ck.model.rhs;
  if (m.system == ModelSystem::Custom && m.composer == Composer::GrayFunctional)
    throw ConfigError("checkpoint: custom skeletons cannot be serialized");
  if (m.oracle && !ck.oracle_source) throw ConfigError("checkpoint: oracle without a source system");
  if (m.prior && !ck.prior_source) throw ConfigError("checkpoint: prior without a source system");
  nlohmann::json j;
  j["format"] = "odenet-checkpoint";
  j["version"] = 1;
  j["composer"] = to_string(m.composer);
  j["system"] = to_string(m.system);
  j["state_dim"] = m.state_dim;
  j["param_dim"] = m.param_dim;
  j["param_names"] = ck.param_names;
  auto layers = nlohmann::json::array();
  for (const auto& l : m.mlp.layers)
    layers.push_back({{"activation", l.activation == Activation::SiLU ? "silu" : "linear"},
                      {"weight", mat_to_json(l.weight)},
                      {"bias", mat_to_json(l.bias)}});
  j["layers"] = layers;
  j["widths"] = m.mlp.widths();
  j["kappa_names"] = m.kappa_names;
  j["kappa"] = mat_to_json(m.kappa);
  j["kappa_trainable"] = mat_to_json(m.kappa_trainable);
  j["bf_constants"] = bf_params_to_json(m.bf);
  j["scaling"] = {{"offset", vec_to_json(m.scaling.offset)}, {"range", vec_to_json(m.scaling.range)}};
  j["output_scale"] = vec_to_json(m.output_scale);
  if (ck.oracle_source) j["oracle"] = truth_to_json(*ck.oracle_source);
  if (ck.prior_source) j["prior"] = truth_to_json(*ck.prior_source);
  nlohmann::json ic = nlohmann::json::object(), icm = nlohmann::json::object();
  for (const auto& [id, v] : ck.model.ic) ic[id] = mat_to_json(v);
  for (const auto& [id, v] : ck.model.ic_mask) icm[id] = mat_to_json(v);
  j["ic"] = ic;
  j["ic_mask"] = icm;
  nlohmann::json mom = nlohmann::json::object();
  for (const auto& [name, mv] : ck.optimizer.moments)
    mom[name] = {{"m", mat_to_json(mv.first)}, {"v", mat_to_json(mv.second)}};
  j["optimizer"] = {{"step", ck.optimizer.step}, {"moments", mom}};
  j["seed"] = ck.seed;
  j["extra"] = ck.extra;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "odenet-checkpoint") throw ConfigError("not an odenet checkpoint");
  Checkpoint ck;
  LearnedRhs& m = ck.model.rhs;
  m.composer = composer_from_string(j.at("composer").get<std::string>());
  m.system = model_system_from_string(j.at("system").get<std::string>());
  m.state_dim = j.at("state_dim").get<int>();
  m.param_dim = j.at("param_dim").get<int>();
  ck.param_names = j.at("param_names").get<std::vector<std::string>>();
  for (const auto& l : j.at("layers")) {
    Layer layer;
    const auto act = l.at("activation").get<std::string>();
    if (act != "silu" && act != "linear") throw ConfigError("checkpoint: unknown activation " + act);
    layer.activation = act == "silu" ? Activation::SiLU : Activation::Linear;
    layer.weight = mat_from_json(l.at("weight"));
    layer.bias = mat_from_json(l.at("bias"));
    m.mlp.layers.push_back(std::move(layer));
  }
  m.kappa_names = j.at("kappa_names").get<std::vector<std::string>>();
  m.kappa = mat_from_json(j.at("kappa"));
  m.kappa_trainable = mat_from_json(j.at("kappa_trainable"));
  m.bf = bf_params_from_json(j.at("bf_constants"));
  m.scaling.offset = vec_from_json(j.at("scaling").at("offset"));
  m.scaling.range = vec_from_json(j.at("scaling").at("range"));
  m.output_scale = vec_from_json(j.at("output_scale"));
  if (j.contains("oracle")) {
    ck.oracle_source = truth_from_json(j.at("oracle"));
    m.oracle = truth_oracle(*ck.oracle_source, m.composer);
  }
  if (j.contains("prior")) {
    ck.prior_source = truth_from_json(j.at("prior"));
    m.prior = linear_part_prior(*ck.prior_source);
  }
  for (const auto& [id, v] : j.at("ic").items()) ck.model.ic[id] = mat_from_json(v);
  for (const auto& [id, v] : j.at("ic_mask").items()) ck.model.ic_mask[id] = mat_from_json(v);
  ck.optimizer.step = j.at("optimizer").at("step").get<long>();
  for (const auto& [name, mv] : j.at("optimizer").at("moments").items())
    ck.optimizer.moments[name] = {mat_from_json(mv.at("m")), mat_from_json(mv.at("v"))};
  ck.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("extra")) ck.extra = j.at("extra");
  m.validate();
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << checkpoint_to_json(ck).dump() << '\n';
  if (!f) throw ConfigError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace odenet
