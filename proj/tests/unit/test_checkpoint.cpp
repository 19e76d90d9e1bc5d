#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"

using namespace odenet;
using namespace fixtures;

namespace {

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void expect_same(const LearnedRhs& a, const LearnedRhs& b) {
  EXPECT_EQ(a.composer, b.composer);
  EXPECT_EQ(a.system, b.system);
  EXPECT_EQ(a.state_dim, b.state_dim);
  EXPECT_EQ(a.param_dim, b.param_dim);
  ASSERT_EQ(a.mlp.layers.size(), b.mlp.layers.size());
  for (std::size_t l = 0; l < a.mlp.layers.size(); ++l) {
    EXPECT_EQ(a.mlp.layers[l].weight, b.mlp.layers[l].weight);
    EXPECT_EQ(a.mlp.layers[l].bias, b.mlp.layers[l].bias);
    EXPECT_EQ(a.mlp.layers[l].activation, b.mlp.layers[l].activation);
  }
  EXPECT_EQ(a.kappa_names, b.kappa_names);
  EXPECT_EQ(a.kappa, b.kappa);
  EXPECT_EQ(a.kappa_trainable, b.kappa_trainable);
  EXPECT_EQ(a.scaling.offset, b.scaling.offset);
  EXPECT_EQ(a.scaling.range, b.scaling.range);
  EXPECT_EQ(a.output_scale, b.output_scale);
}

}  // namespace

TEST(Checkpoint, TrainedModelRoundTripsBitExactly) {
  auto spec = urp_spec(6);
  spec.horizon = 2;
  spec.withhold_ic = true;
  const auto corpus = generate_corpus(TruthSystem::make_urp(), spec, 1);
  Checkpoint ck;
  ck.model.rhs = urp_gray(3, true);
  ck.model.rhs.scaling = fit_scaling(corpus, 2);
  ck.model.rhs.output_scale = Vec::Constant(1, 0.37);
  ck.param_names = {"Da"};
  ck.seed = 0xfeedfacecafebeefULL;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  tc.max_dt = 0.25;
  ck.optimizer = train(ck.model, corpus, tc, ck.param_names).optimizer;
  ck.extra = {{"note", "x"}};

  const auto path = tmp("odenet_ck_trained.json");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);

  expect_same(ck.model.rhs, back.model.rhs);
  EXPECT_EQ(back.param_names, ck.param_names);
  EXPECT_EQ(back.seed, ck.seed);
  EXPECT_EQ(back.extra, ck.extra);
  ASSERT_EQ(back.model.ic.size(), 6u);
  for (const auto& [id, v] : ck.model.ic) {
    EXPECT_EQ(back.model.ic.at(id), v);
    EXPECT_EQ(back.model.ic_mask.at(id), ck.model.ic_mask.at(id));
  }
  EXPECT_EQ(back.optimizer.step, ck.optimizer.step);
  ASSERT_EQ(back.optimizer.moments.size(), ck.optimizer.moments.size());
  for (const auto& [k, mv] : ck.optimizer.moments) {
    EXPECT_EQ(back.optimizer.moments.at(k).first, mv.first);
    EXPECT_EQ(back.optimizer.moments.at(k).second, mv.second);
  }
  const Mat x = random_mat(7, 2, 4, 0, 1), p = random_mat(7, 1, 5, 0.2, 0.5);
  EXPECT_EQ(model_rhs(ck.model.rhs, x, p), model_rhs(back.model.rhs, x, p));
}

TEST(Checkpoint, OracleAndPriorAreRebuilt) {
  const auto bf = TruthSystem::make_bf();
  Checkpoint ck;
  ck.model.rhs = oracle_model(bf, Composer::GrayAdditive);
  ck.oracle_source = bf;
  ck.prior_source = bf;
  const Checkpoint back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(ck).dump()));
  ASSERT_TRUE(back.model.rhs.oracle);
  ASSERT_TRUE(back.model.rhs.prior);
  Mat x = random_mat(5, 6, 6, 0.5, 1.0);
  x.col(3) *= 100;
  x.col(4) *= 1000;
  EXPECT_EQ(model_rhs(ck.model.rhs, x, Mat(5, 0)), model_rhs(back.model.rhs, x, Mat(5, 0)));
}

TEST(Checkpoint, NonSerializableModelsAreRejected) {
  Checkpoint ck;
  ck.model.rhs = oracle_model(TruthSystem::make_urp(), Composer::BlackBox);
  EXPECT_THROW(checkpoint_to_json(ck), ConfigError);  // oracle without source

  Checkpoint custom;
  custom.model.rhs = black_box(2, 0, {4}, 1);
  custom.model.rhs.composer = Composer::GrayFunctional;
  EXPECT_THROW(checkpoint_to_json(custom), ConfigError);
}

TEST(Checkpoint, CorruptFilesAreConfigErrors) {
  const auto path = tmp("odenet_ck_bad.json");
  {
    std::ofstream f(path);
    f << "{\"format\": \"odenet-checkpoint\", ";
  }
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  {
    std::ofstream f(path);
    f << "{\"format\": \"something-else\"}";
  }
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  EXPECT_THROW(mat_from_json(nlohmann::json{{"rows", 2}, {"cols", 2}, {"data", {1, 2, 3}}}), ConfigError);
}

TEST(Checkpoint, TruthSystemJsonRoundTrip) {
  BfParams p;
  p.omega = 7.5;
  const auto bf = truth_from_json(truth_to_json(TruthSystem::make_bf(p)));
  EXPECT_EQ(bf.bf.omega, 7.5);
  UrpParams u;
  u.Da = 0.31;
  const auto urp = truth_from_json(truth_to_json(TruthSystem::make_urp(u)));
  EXPECT_EQ(urp.urp.Da, 0.31);
  const auto lin = truth_from_json(truth_to_json(TruthSystem::make_linear(Mat::Identity(3, 3))));
  EXPECT_EQ(lin.linear, Mat::Identity(3, 3));
}
