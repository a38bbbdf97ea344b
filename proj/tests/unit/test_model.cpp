#include <gtest/gtest.h>

#include <fstream>

#include "flowmix/data.hpp"
#include "flowmix/errors.hpp"
#include "flowmix/model.hpp"
#include "flowmix/tensor_bridge.hpp"
#include "flowmix/trainer.hpp"
#include "test_util.hpp"

using namespace flowmix;

namespace {

std::vector<LabeledSample> tiny_dataset(int count, std::uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.seed = seed;
  return generate_dataset(cfg, count);
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ToyFlowModel, OutputShapeLengthAndFiniteness) {
  torch::set_num_threads(1);
  ToyFlowModel model;
  EXPECT_LE(model.parameter_count(), 500000);
  EXPECT_GT(model.parameter_count(), 0);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{30, 44}, std::pair{8, 8}}) {
    auto f1 = torch::rand({2, 3, h, w});
    auto f2 = torch::rand({2, 3, h, w});
    for (int iters : {1, 3}) {
      auto seq = model.forward(f1, f2, iters);
      ASSERT_EQ(seq.size(), static_cast<std::size_t>(iters));
      for (const auto& f : seq.flows) {
        EXPECT_EQ(f.sizes(), (std::vector<std::int64_t>{2, 2, h, w}));
        EXPECT_TRUE(torch::isfinite(f).all().item<bool>());
      }
    }
  }
}

TEST(ToyFlowModel, ContractErrors) {
  ToyFlowModel model;
  EXPECT_THROW(model.forward(torch::rand({1, 3, 16, 16}), torch::rand({1, 3, 16, 16}), 0), ContractViolation);
  EXPECT_THROW(model.forward(torch::rand({1, 3, 16, 16}), torch::rand({1, 3, 16, 17}), 1), ContractViolation);
  ToyModelConfig bad;
  bad.corr_levels = 9;
  EXPECT_THROW(ToyFlowModel{bad}, ContractViolation);
}

TEST(ToyFlowModel, SeededInitAndEvalDeterminism) {
  ToyFlowModel a(ToyModelConfig{}, 5), b(ToyModelConfig{}, 5), c(ToyModelConfig{}, 6);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(torch::equal(pa[i].second, pb[i].second)) << pa[i].first;
    any_diff |= !torch::equal(pa[i].second, pc[i].second);
  }
  EXPECT_TRUE(any_diff);

  auto data = tiny_dataset(1);
  auto p1 = a.predict(data[0].frame1, data[0].frame2);
  auto p2 = a.predict(data[0].frame1, data[0].frame2);
  EXPECT_TRUE(torch::equal(p1.final(), p2.final()));
  EXPECT_FALSE(p1.final().requires_grad());
}

TEST(ToyFlowModel, CopyParameters) {
  ToyFlowModel a(ToyModelConfig{}, 1), b(ToyModelConfig{}, 2);
  b.copy_parameters_from(a);
  auto f = torch::rand({1, 3, 16, 16});
  a.set_training(false);
  b.set_training(false);
  torch::NoGradGuard ng;
  EXPECT_TRUE(torch::equal(a.forward(f, f, 2).final(), b.forward(f, f, 2).final()));
  ToyModelConfig wider;
  wider.hidden_dim = 32;
  ToyFlowModel c(wider);
  EXPECT_THROW(c.copy_parameters_from(a), ContractViolation);
}

TEST(PredictBidirectional, DirectionTagsAndLengths) {
  ToyFlowModel model;
  auto data = tiny_dataset(1);
  auto bi = predict_bidirectional(model, data[0].frame1, data[0].frame2, 3);
  EXPECT_EQ(bi.forward.direction, FlowDirection::kForward);
  EXPECT_EQ(bi.backward.direction, FlowDirection::kBackward);
  EXPECT_EQ(bi.forward.size(), 3u);
  EXPECT_EQ(bi.backward.size(), 3u);
  auto swapped = model.predict(data[0].frame2, data[0].frame1, 3);
  EXPECT_TRUE(torch::equal(bi.backward.final(), swapped.final()));
}

TEST(OracleStub, AnswersGroundTruthPlusOffset) {
  auto data = tiny_dataset(3);
  OracleStubModel stub(3.0f, 4.0f);
  stub.bind(data);
  auto seq = stub.predict(data[1].frame1, data[1].frame2, 2);
  ASSERT_EQ(seq.size(), 2u);
  auto f = tensor_to_flow(seq.final(), 0);
  EXPECT_FLOAT_EQ(f.u(5, 5), data[1].gt_flow.u(5, 5) + 3.0f);
  EXPECT_FLOAT_EQ(f.v(5, 5), data[1].gt_flow.v(5, 5) + 4.0f);
  auto unknown = stub.predict(data[1].frame2, data[1].frame1, 1);
  EXPECT_EQ(unknown.final().abs().sum().item<float>(), 0.0f);
}

TEST(Checkpoint, RoundTripGivesIdenticalPredictions) {
  ToyModelConfig cfg;
  cfg.hidden_dim = 20;
  ToyFlowModel model(cfg, 9);
  auto data = tiny_dataset(1);
  testutil::TempDir dir("ckpt");
  save_checkpoint(model, dir / "m.fmx");
  auto loaded = load_checkpoint(dir / "m.fmx");
  ASSERT_EQ(loaded->kind(), "toy_flow");
  EXPECT_EQ(loaded->parameter_count(), model.parameter_count());
  auto a = model.predict(data[0].frame1, data[0].frame2);
  auto b = loaded->predict(data[0].frame1, data[0].frame2);
  EXPECT_TRUE(torch::equal(a.final(), b.final()));
}

TEST(Checkpoint, StubRoundTrip) {
  testutil::TempDir dir("ckstub");
  save_checkpoint(OracleStubModel(1.5f, -2.0f), dir / "s.fmx");
  auto loaded = load_checkpoint(dir / "s.fmx");
  auto* stub = dynamic_cast<OracleStubModel*>(loaded.get());
  ASSERT_NE(stub, nullptr);
  EXPECT_EQ(stub->offset_u(), 1.5f);
  EXPECT_EQ(stub->offset_v(), -2.0f);
}

TEST(Checkpoint, LoadErrors) {
  testutil::TempDir dir("ckerr");
  EXPECT_THROW(load_checkpoint(dir / "missing.fmx"), CheckpointError);

  write_bytes(dir / "junk.fmx", {'n', 'o', 'p', 'e', 0, 0, 0, 0, 1, 0, 0, 0});
  EXPECT_THROW(load_checkpoint(dir / "junk.fmx"), CheckpointError);

  ToyFlowModel model;
  save_checkpoint(model, dir / "ok.fmx");
  auto bytes = read_bytes(dir / "ok.fmx");
  auto future = bytes;
  future[8] = 7;  // version field follows the 8-byte magic
  write_bytes(dir / "v7.fmx", future);
  try {
    load_checkpoint(dir / "v7.fmx");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 7"), std::string::npos) << e.what();
  }

  bytes.resize(bytes.size() / 2);
  write_bytes(dir / "cut.fmx", bytes);
  EXPECT_THROW(load_checkpoint(dir / "cut.fmx"), CheckpointError);
}

TEST(ToyFlowModel, OverfitsOneBatch) {
  torch::set_num_threads(1);
  SynthConfig synth;
  auto batch = generate_dataset(synth, 4);
  TrainConfig cfg;
  cfg.mode = TrainMode::kSupervisedBase;
  cfg.steps = 200;
  cfg.batch_size = 4;
  cfg.lr.max_lr = 5e-3;
  TrainData data;
  data.labeled = &batch;
  auto out = train_supervised(cfg, data);
  ASSERT_FALSE(out.report.diverged);
  const double first = out.report.steps.front().loss_base;
  const double last = out.report.steps.back().loss_base;
  EXPECT_LT(last, 0.1 * first) << "first " << first << " last " << last;
}
