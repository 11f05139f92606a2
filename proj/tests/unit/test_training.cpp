#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "dettoy/error.hpp"
#include "dettoy/geometry.hpp"
#include "dettoy/training.hpp"
#include "test_support.hpp"

namespace dettoy {
namespace {

using ad::Matrix;

Detection det(double p_class0, Box box) {
  Detection d;
  d.class_probs = {p_class0, 0.0, 0.0, 1.0 - p_class0};
  d.box = box;
  return d;
}

TEST(MatchingCost, HandCases) {
  const Box b = Box::cxcywh(0.4, 0.5, 0.2, 0.3);
  const GroundTruth gt{b, 0};
  EXPECT_DOUBLE_EQ(matching_cost(det(1.0, b), gt, LossWeights(1, 5, 2)), -1.0);
  EXPECT_DOUBLE_EQ(matching_cost(det(0.0, b), gt, LossWeights(1, 5, 2)), 0.0);
  // Oracle: shifted box, terms computed by hand from the definition.
  const Box p = Box::cxcywh(0.5, 0.5, 0.2, 0.3);
  const double l1 = 0.1;
  const double g = giou(to_xyxy(p, 1, 1), to_xyxy(b, 1, 1));
  EXPECT_NEAR(matching_cost(det(0.25, p), gt, LossWeights(1, 5, 2)),
              -0.25 + 5 * l1 + 2 * (1 - g), 1e-12);
  EXPECT_THROW(matching_cost(det(1.0, to_xyxy(b, 64, 64)), gt, LossWeights()), InvalidArgument);
}

TEST(LossWeights, Validation) {
  EXPECT_THROW(LossWeights(0, 0, 0), InvalidArgument);
  EXPECT_THROW(LossWeights(-1, 5, 2), InvalidArgument);
  EXPECT_NO_THROW(LossWeights(0, 0, 1));
}

Target one_target() {
  Target t;
  t.labels = {1, 0};
  t.boxes.resize(2, 4);
  t.boxes << 0.3, 0.3, 0.2, 0.2, 0.7, 0.6, 0.25, 0.3;
  return t;
}

HeadOutput head_from(ad::Tape& tape, const Matrix& logits, const Matrix& boxes) {
  return {tape.constant(logits), tape.constant(boxes)};
}

TEST(HeadLoss, PermutationInvariant) {
  Matrix logits(4, 4), boxes(4, 4);
  logits << 0.1, 2.0, -1.0, 0.3, 1.5, 0.2, 0.1, -0.4, 0.0, 0.0, 0.0, 2.0, -0.5, 0.3, 0.8, 0.1;
  boxes << 0.32, 0.29, 0.21, 0.18, 0.69, 0.62, 0.2, 0.31, 0.5, 0.5, 0.4, 0.4, 0.1, 0.9, 0.1, 0.1;
  const std::vector<int> perm{2, 0, 3, 1};
  Matrix pl(4, 4), pb(4, 4);
  for (int i = 0; i < 4; ++i) {
    pl.row(i) = logits.row(perm[i]);
    pb.row(i) = boxes.row(perm[i]);
  }
  ad::Tape t(false);
  const Target target = one_target();
  const double a = head_loss(head_from(t, logits, boxes), target, LossWeights()).total.value()(0, 0);
  const double b = head_loss(head_from(t, pl, pb), target, LossWeights()).total.value()(0, 0);
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(HeadLoss, PerfectPredictionsHaveZeroBoxTerms) {
  const Target target = one_target();
  Matrix logits = Matrix::Constant(3, 4, -20.0);
  logits(0, 1) = 20.0;
  logits(1, 0) = 20.0;
  logits(2, 3) = 20.0;
  Matrix boxes(3, 4);
  boxes.topRows(2) = target.boxes;
  boxes.row(2) << 0.5, 0.5, 0.1, 0.1;
  ad::Tape t(false);
  const LossBreakdown lb = head_loss(head_from(t, logits, boxes), target, LossWeights());
  EXPECT_NEAR(lb.l1, 0.0, 1e-12);
  EXPECT_NEAR(lb.giou, 0.0, 1e-12);
  EXPECT_LT(lb.cls, 1e-12);
}

TEST(HeadLoss, SingleGroundTruthPicksCheaperCandidate) {
  Target target;
  target.labels = {2};
  target.boxes.resize(1, 4);
  target.boxes << 0.5, 0.5, 0.3, 0.3;
  Matrix logits(2, 4), boxes(2, 4);
  logits << 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0, 0.0;
  boxes << 0.52, 0.5, 0.3, 0.3, 0.7, 0.6, 0.3, 0.3;
  const LossWeights w;
  ad::Tape t(false);
  const LossBreakdown lb = head_loss(head_from(t, logits, boxes), target, w);
  // Brute force over both assignments.
  const GroundTruth gt{Box::cxcywh(0.5, 0.5, 0.3, 0.3), 2};
  double cost[2];
  for (int q = 0; q < 2; ++q) {
    const auto dets = decode_head(logits, boxes);
    cost[q] = matching_cost(dets[static_cast<std::size_t>(q)], gt, w);
  }
  const int best = cost[0] <= cost[1] ? 0 : 1;
  ASSERT_EQ(lb.matches.size(), 1u);
  ASSERT_EQ(lb.matches[0].pairs.size(), 1u);
  EXPECT_EQ(lb.matches[0].pairs[0].first, best);
}

TEST(HeadLoss, BoxWeightsScaleLinearly) {
  Target target;
  target.labels = {0};
  target.boxes.resize(1, 4);
  target.boxes << 0.4, 0.4, 0.2, 0.2;
  Matrix logits(1, 4), boxes(1, 4);
  logits << 0.5, 0.1, 0.2, 0.0;
  boxes << 0.45, 0.42, 0.25, 0.18;
  ad::Tape t(false);
  const LossBreakdown one = head_loss(head_from(t, logits, boxes), target, LossWeights(1, 5, 2));
  const LossBreakdown two = head_loss(head_from(t, logits, boxes), target, LossWeights(1, 10, 4));
  const double box_one = 5 * one.l1 + 2 * one.giou;
  EXPECT_NEAR(two.total.value()(0, 0) - one.total.value()(0, 0), box_one, 1e-12);
  EXPECT_GE(one.giou, 0.0);
  EXPECT_LE(one.giou, 2.0);
}

TEST(HeadLoss, EmptyTargetSupervisesNoObject) {
  Target empty;
  empty.boxes.resize(0, 4);
  Matrix logits = Matrix::Zero(3, 4), boxes = Matrix::Constant(3, 4, 0.5);
  ad::Tape t(false);
  const LossBreakdown lb = head_loss(head_from(t, logits, boxes), empty, LossWeights());
  EXPECT_NEAR(lb.cls, std::log(4.0), 1e-12);
  EXPECT_EQ(lb.l1, 0.0);
}

TEST(ComputeLoss, CoversEveryDecoderBlock) {
  const ModelConfig cfg = test::tiny_config(Variant::DinoMini);
  const Model model(cfg, 1);
  const Dataset ds = make_dataset(1, cfg.image_size, 1);
  ad::Tape tape(false);
  ParameterBinding binding(tape, model.parameters());
  const ModelOutput out = model.forward(binding, ds.images[0].image);
  const LossBreakdown lb = compute_loss(out, make_target(ds.images[0]), LossWeights());
  EXPECT_EQ(lb.matches.size(), static_cast<std::size_t>(cfg.decoder_blocks) + 1);
  EXPECT_TRUE(std::isfinite(lb.total.value()(0, 0)));
}

TrainSettings quick_settings() {
  TrainSettings s;
  s.epochs = 1;
  s.batch_size = 2;
  s.learning_rate = 1e-3;
  s.seed = 4;
  return s;
}

TEST(Train, OneEpochLogsOneFiniteRecord) {
  Model model(test::tiny_config(Variant::DetrMini), 1);
  const Dataset train_set = make_dataset(10, 32, 1);
  const Dataset val = make_dataset(4, 32, 2);
  int calls = 0;
  const auto log = train(model, train_set, &val, quick_settings(),
                         [&](const EpochRecord&, const Model&) { ++calls; });
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(log[0].epoch, 1);
  EXPECT_EQ(log[0].steps, 5);
  EXPECT_TRUE(std::isfinite(log[0].loss));
  ASSERT_TRUE(log[0].val_mgiou.has_value());
  EXPECT_GE(*log[0].val_f1, 0.0);
  EXPECT_TRUE(model.try_lock_parameters());
  model.unlock_parameters();
}

TEST(Train, DeterministicGivenSeed) {
  const Dataset train_set = make_dataset(6, 32, 1);
  Model a(test::tiny_config(Variant::DdetrMini), 1);
  Model b(test::tiny_config(Variant::DdetrMini), 1);
  TrainSettings s = quick_settings();
  s.epochs = 2;
  train(a, train_set, nullptr, s);
  train(b, train_set, nullptr, s);
  EXPECT_EQ(a.parameters().checksum(), b.parameters().checksum());
  Model c(test::tiny_config(Variant::DdetrMini), 1);
  s.seed = 5;
  train(c, train_set, nullptr, s);
  EXPECT_NE(a.parameters().checksum(), c.parameters().checksum());
}

TEST(Train, FrozenContentStaysZero) {
  ModelConfig cfg = test::tiny_config(Variant::DinoMini);
  cfg.freeze_content_queries = true;
  Model model(cfg, 1);
  const Dataset train_set = make_dataset(6, 32, 1);
  TrainSettings s = quick_settings();
  s.epochs = 3;
  bool zero_every_epoch = true;
  train(model, train_set, nullptr, s, [&](const EpochRecord&, const Model& m) {
    zero_every_epoch = zero_every_epoch &&
                       m.parameters().at(Model::content_query_path()).isZero(0.0);
  });
  EXPECT_TRUE(zero_every_epoch);
  EXPECT_TRUE(model.parameters().at(Model::content_query_path()).isZero(0.0));
}

TEST(Train, DivergenceNamesTheStep) {
  Model model(test::tiny_config(Variant::DetrMini), 1);
  model.parameters().at("decoder.block0.class_head.b")(0, 0) =
      std::numeric_limits<double>::quiet_NaN();
  const Dataset train_set = make_dataset(4, 32, 1);
  try {
    train(model, train_set, nullptr, quick_settings());
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsLockedModelAndEmptyData) {
  Model model(test::tiny_config(Variant::DetrMini), 1);
  const Dataset empty;
  EXPECT_THROW(train(model, empty, nullptr, quick_settings()), InvalidArgument);
  ASSERT_TRUE(model.try_lock_parameters());
  EXPECT_THROW(train(model, make_dataset(2, 32, 1), nullptr, quick_settings()),
               ContractViolation);
  model.unlock_parameters();
}

TEST(TrainSettings, JsonRoundTrip) {
  TrainSettings s = quick_settings();
  s.loss = LossWeights(2, 3, 4);
  const TrainSettings back = train_settings_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  nlohmann::json doc = to_json(s);
  doc["momentum"] = 0.9;
  EXPECT_THROW(train_settings_from_json(doc), ValidationError);
  doc = to_json(s);
  doc["batch_size"] = 0;
  EXPECT_THROW(train_settings_from_json(doc), ValidationError);
}

}  // namespace
}  // namespace dettoy
