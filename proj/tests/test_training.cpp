#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "mtpn/mtpn.hpp"

using namespace mtpn;

namespace {

constexpr int kH = 64, kW = 96, kClasses = 3;

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::for_backbone(Backbone::mobilenetv2);
  c.num_classes = kClasses;
  c.fusion_width = 32;
  c.skip_width = 16;
  c.seg_width = 32;
  c.input_h = kH;
  c.input_w = kW;
  return c;
}

std::vector<Sample> tiny_dataset(int n, std::uint64_t seed0 = 100) {
  std::vector<Sample> out;
  for (int k = 0; k < n; ++k) out.push_back(synth_sample(seed0 + std::uint64_t(k), kH, kW, Difficulty::easy, kClasses));
  return out;
}

bool is_seg(const std::string& name) { return has_prefix(name, "seg_drivable.") || has_prefix(name, "seg_lane."); }

std::map<std::string, Tensor<float>> snapshot(const Model& m, bool (*pick)(const std::string&)) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, t] : m.parameters)
    if (pick(name)) out.emplace(name, t);
  return out;
}

bool same_bytes(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Synth, SameSeedIsBitwiseIdentical) {
  for (Difficulty d : {Difficulty::easy, Difficulty::medium}) {
    const Sample a = synth_sample(42, 128, 192, d), b = synth_sample(42, 128, 192, d), c = synth_sample(43, 128, 192, d);
    EXPECT_TRUE(a.image == b.image);
    EXPECT_EQ(a.boxes, b.boxes);
    EXPECT_EQ(a.drivable, b.drivable);
    EXPECT_EQ(a.lane, b.lane);
    EXPECT_FALSE(a.image == c.image);
  }
}

TEST(Synth, GeneratorContract) {
  for (Difficulty d : {Difficulty::easy, Difficulty::medium}) {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      const Sample s = synth_sample(seed, 128, 192, d, 4);
      EXPECT_EQ(s.image.shape(), (Shape{1, 3, 128, 192}));
      for (float v : s.image.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
      EXPECT_GE(s.boxes.size(), 1u);
      EXPECT_LE(s.boxes.size(), d == Difficulty::easy ? 3u : 5u);
      for (const GtBox& b : s.boxes) {
        EXPECT_GT(b.box.w, 0);
        EXPECT_GT(b.box.h, 0);
        EXPECT_GE(b.box.x1(), 0);
        EXPECT_GE(b.box.y1(), 0);
        EXPECT_LE(b.box.x2(), 192);
        EXPECT_LE(b.box.y2(), 128);
        EXPECT_GE(b.class_id, 0);
        EXPECT_LT(b.class_id, 4);
      }
      EXPECT_NO_THROW(s.drivable.check_binary("test"));
      EXPECT_NO_THROW(s.lane.check_binary("test"));
      EXPECT_GT(s.lane.count(), 0);
      // every box is a legal detection target
      ModelConfig c = tiny_config();
      c.num_classes = 4;
      EXPECT_NO_THROW(assign_targets(s.boxes, c, 128, 192));
    }
  }
}

TEST(Synth, DrivableFractionBand) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Sample s = synth_sample(seed, 128, 192);
    const double f = double(s.drivable.count()) / double(s.drivable.size());
    EXPECT_GT(f, 0.05) << seed;
    EXPECT_LT(f, 0.6) << seed;
  }
}

TEST(Synth, RejectsBadArguments) {
  EXPECT_THROW(synth_sample(1, 100, 64), ConfigError);
  EXPECT_THROW(synth_sample(1, 64, 64, Difficulty::easy, 0), ConfigError);
  EXPECT_THROW(parse_difficulty("hard"), ConfigError);
}

TEST(Synth, DatasetRoundTripsThroughDisk) {
  const auto dir = std::filesystem::temp_directory_path() / "mtpn_test_dataset";
  std::filesystem::remove_all(dir);
  const auto data = tiny_dataset(3);
  save_dataset(data, dir);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    EXPECT_TRUE(back[k].image == data[k].image);
    EXPECT_EQ(back[k].boxes, data[k].boxes);
    EXPECT_EQ(back[k].drivable, data[k].drivable);
    EXPECT_EQ(back[k].lane, data[k].lane);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset(dir), IoError);
}

TEST(Phase, FreezeSegHeadsRemovesExactlyThem) {
  Model m = build_model(tiny_config(), 1);
  apply_phase(m, Phase{1, {ParamGroup::seg_heads}});
  int seg = 0;
  for (const auto& name : m.learnable_names()) {
    EXPECT_EQ(m.trainable.contains(name), !is_seg(name)) << name;
    seg += is_seg(name);
  }
  EXPECT_GT(seg, 0);
  apply_phase(m, Phase{1, {}});
  EXPECT_EQ(m.trainable, m.learnable_names());
  apply_phase(m, std::vector<std::string>{"backbone", "fusion"});
  for (const auto& name : m.trainable) EXPECT_TRUE(has_prefix(name, "det_head.") || is_seg(name)) << name;
  EXPECT_THROW(apply_phase(m, std::vector<std::string>{"heads"}), ConfigError);
}

TEST(Phase, FrozenParametersUnchangedAfterSteps) {
  Model m = build_model(tiny_config(), 2);
  apply_phase(m, Phase{1, {ParamGroup::seg_heads}});
  const auto seg0 = snapshot(m, is_seg);
  const auto det0 = snapshot(m, [](const std::string& n) { return has_prefix(n, "det_head."); });
  const auto data = tiny_dataset(2);
  Optimizer opt(OptimizerKind::adam, 1e-3);
  for (int step = 0; step < 3; ++step) {
    const Sample* s = &data[std::size_t(step % 2)];
    train_step(m, opt, std::span<const Sample* const>(&s, 1), LossConfig{}, 1);
  }
  for (const auto& [name, t] : seg0) EXPECT_TRUE(same_bytes(t, m.param(name))) << name;
  int moved = 0;
  for (const auto& [name, t] : det0) moved += !same_bytes(t, m.param(name));
  EXPECT_GT(moved, 0);
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (OptimizerKind k : {OptimizerKind::sgd_momentum, OptimizerKind::adam}) {
    Model m = build_model(tiny_config(), 3);
    const Model before = m;
    std::map<std::string, Tensor<float>> zeros;
    std::map<std::string, const Tensor<float>*> grads;
    for (const auto& name : m.trainable) zeros.emplace(name, Tensor<float>(m.param(name).shape()));
    for (const auto& [name, t] : zeros) grads.emplace(name, &t);
    Optimizer opt(k, 0.1);
    opt.step(m, grads);
    opt.step(m, grads);
    for (const auto& [name, t] : before.parameters) EXPECT_TRUE(same_bytes(t, m.param(name))) << name;
  }
}

TEST(Optimizer, SgdMomentumUpdateRule) {
  Model m = build_model(tiny_config(), 3);
  const std::string name = *m.trainable.begin();
  const Tensor<float> p0 = m.param(name);
  Tensor<float> g(p0.shape(), 0.5f);
  Optimizer opt(OptimizerKind::sgd_momentum, 0.1, 0.9);
  opt.step(m, {{name, &g}});
  opt.step(m, {{name, &g}});
  // v1 = 0.5, v2 = 0.9 * 0.5 + 0.5 = 0.95; total step 0.1 * 1.45
  for (std::size_t i = 0; i < std::size_t(p0.numel()); ++i) EXPECT_NEAR(m.param(name)[i], p0[i] - 0.145f, 1e-6);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainSchedule s;
  s.phases = {{2, {}}};
  s.learning_rate = 0;
  s.seed = 5;
  const auto r = train(tiny_config(), s, tiny_dataset(2));
  const Model fresh = build_model(tiny_config(), 5);
  for (const auto& [name, t] : fresh.parameters) EXPECT_TRUE(same_bytes(t, r.model.param(name))) << name;
  ASSERT_EQ(r.log.epochs.size(), 2u);
  for (const auto& e : r.log.epochs) {
    EXPECT_GT(e.l_total, 0);
    EXPECT_TRUE(std::isfinite(e.l_total));
  }
  // nothing moves, so the loss is the same both epochs
  EXPECT_EQ(r.log.epochs[0].l_total, r.log.epochs[1].l_total);
}

TEST(Train, DeterministicForFixedSeed) {
  TrainSchedule s;
  s.phases = {{1, {}}, {1, {ParamGroup::seg_heads}}};
  s.seed = 9;
  s.batch_size = 2;
  const auto data = tiny_dataset(3);
  const auto a = train(tiny_config(), s, data);
  const auto b = train(tiny_config(), s, data);
  EXPECT_EQ(to_json(a.log).dump(), to_json(b.log).dump());
  ASSERT_EQ(a.log.steps.size(), b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) EXPECT_EQ(a.log.steps[i].loss.l_total, b.log.steps[i].loss.l_total);
  for (const auto& [name, t] : a.model.parameters) EXPECT_TRUE(same_bytes(t, b.model.param(name))) << name;
}

TEST(Train, LogFollowsWeightedSumAndContiguousEpochs) {
  TrainSchedule s;
  s.phases = {{2, {}}, {1, {ParamGroup::seg_heads}}};
  s.seed = 11;
  TrainOptions o;
  o.loss.weights = {2.0, 0.5};
  const auto data = tiny_dataset(2);
  o.probe = &data[0];
  const auto r = train(tiny_config(), s, data, o);
  ASSERT_EQ(r.log.epochs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& e = r.log.epochs[k];
    EXPECT_EQ(e.epoch, int(k) + 1);
    EXPECT_EQ(e.phase, k < 2 ? 1 : 2);
    EXPECT_EQ(e.l_total, 2.0 * e.l_det + 0.5 * e.l_seg);
    EXPECT_EQ(e.learning_rate, s.learning_rate);
    ASSERT_TRUE(e.probe.has_value());
    EXPECT_EQ(e.probe->l_total, 2.0 * e.probe->l_det + 0.5 * e.probe->l_seg);
  }
  for (const auto& st : r.log.steps) EXPECT_EQ(st.loss.l_total, 2.0 * st.loss.l_det + 0.5 * st.loss.l_seg);
  const json j = to_json(r.log);
  EXPECT_EQ(j.at("epochs").size(), 3u);
  EXPECT_TRUE(j.at("epochs")[0].contains("l_seg"));
}

TEST(Train, SecondPhaseKeepsSegHeadsFixed) {
  TrainSchedule s;
  s.phases = {{1, {}}, {2, {ParamGroup::seg_heads}}};
  s.seed = 12;
  std::map<std::string, Tensor<float>> at_phase2;
  TrainOptions o;
  o.on_phase_start = [&](int phase, const Model& m) {
    if (phase == 2) at_phase2 = snapshot(m, is_seg);
  };
  const auto r = train(tiny_config(), s, tiny_dataset(2), o);
  ASSERT_FALSE(at_phase2.empty());
  for (const auto& [name, t] : at_phase2) EXPECT_TRUE(same_bytes(t, r.model.param(name))) << name;
  const Model fresh = build_model(tiny_config(), 12);
  int moved = 0;
  for (const auto& [name, t] : at_phase2) moved += !same_bytes(t, fresh.param(name));
  EXPECT_GT(moved, 0);  // phase 1 did train them
}

TEST(Train, NonFiniteLossReportsEpoch) {
  // alpha * l_det + beta * l_seg overflows to +inf on the first step
  TrainSchedule s;
  s.phases = {{1, {}}};
  TrainOptions o;
  o.loss.weights = {1e308, 1e308};
  try {
    train(tiny_config(), s, tiny_dataset(1), o);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, RejectsBadInputs) {
  TrainSchedule s;
  EXPECT_THROW(train(tiny_config(), s, {}), ValueError);
  auto data = tiny_dataset(1);
  data.push_back(synth_sample(1, 128, 96));
  EXPECT_THROW(train(tiny_config(), s, data), ValueError);
}

TEST(Schedule, Validation) {
  TrainSchedule s;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.phases.size(), 2u);
  EXPECT_TRUE(s.phases[1].frozen.contains(ParamGroup::seg_heads));
  auto bad = [&](auto mutate) {
    TrainSchedule t;
    mutate(t);
    EXPECT_THROW(t.validate(), ConfigError);
  };
  bad([](TrainSchedule& t) { t.phases.clear(); });
  bad([](TrainSchedule& t) { t.phases[0].epochs = 0; });
  bad([](TrainSchedule& t) {
    t.phases[0].frozen = {ParamGroup::backbone, ParamGroup::fusion, ParamGroup::det_head, ParamGroup::seg_heads};
  });
  bad([](TrainSchedule& t) { t.learning_rate = -1; });
  bad([](TrainSchedule& t) { t.batch_size = 0; });
  bad([](TrainSchedule& t) { t.momentum = 1.0; });
  EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
}
