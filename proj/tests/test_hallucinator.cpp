#include "nirvis/hallucinator.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace nirvis;
using nirvis::test::random_image;

namespace {

NetSpec tiny_spec(Channel c = Channel::Y) {
  return NetSpec{c, {{1, 6, 3, true}, {6, 1, 3, false}}, c == Channel::Y, SlopeMode::PerChannel};
}

std::vector<TrainingPair> toy_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const Image in = gaussian_filter(random_image(12, 12, rng), 1.0);
    pairs.push_back({in, Image(0.7 * in + 0.1)});
  }
  return pairs;
}

template <typename S>
std::vector<S> flatten(HallucinationNet<S>& net) {
  std::vector<S> out;
  for (auto v : net.parameter_views()) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace

TEST(TrainingPairs, SelectsChannelTarget) {
  std::mt19937_64 rng(1);
  PatchPair p;
  p.nir = random_image(4, 4, rng);
  p.vis = random_image(4, 4, rng);
  EXPECT_EQ(training_pairs({p}, Channel::Y)[0].target.matrix(), p.vis.matrix());
  EXPECT_THROW(training_pairs({p}, Channel::Cb), InvalidInput);
  p.vis_cb = random_image(4, 4, rng);
  p.vis_cr = random_image(4, 4, rng);
  EXPECT_EQ(training_pairs({p}, Channel::Cr)[0].target.matrix(), p.vis_cr.matrix());
  EXPECT_EQ(training_pairs({p}, Channel::Cb)[0].input.matrix(), p.nir.matrix());
}

TEST(Train, ZeroEpochsLeavesNetUnchanged) {
  HallucinationNet<double> net(tiny_spec(), 3);
  const auto before = flatten(net);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(net, toy_pairs(4, 2), cfg);
  EXPECT_TRUE(r.epoch_losses.empty());
  EXPECT_EQ(flatten(net), before);
}

TEST(Train, EmptyDatasetIsError) {
  HallucinationNet<double> net(tiny_spec(), 3);
  EXPECT_THROW(train(net, {}, {}), InvalidInput);
  TrainConfig bad;
  bad.batch = 0;
  EXPECT_THROW(train(net, toy_pairs(2, 1), bad), ContractError);
}

TEST(Train, FixedSeedIsBitReproducible) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 3;
  cfg.seed = 99;
  cfg.adam.learning_rate = 1e-3;
  const auto pairs = toy_pairs(10, 5);
  HallucinationNet<float> a(tiny_spec(), 4), b(tiny_spec(), 4);
  const auto ra = train(a, pairs, cfg);
  const auto rb = train(b, pairs, cfg);
  EXPECT_EQ(ra.epoch_losses, rb.epoch_losses);
  EXPECT_EQ(flatten(a), flatten(b));
  EXPECT_TRUE(a.trained());
  EXPECT_EQ(ra.iterations, 3 * 4);
}

TEST(Train, IterationCapStopsEarly) {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 2;
  cfg.max_iterations = 3;
  HallucinationNet<double> net(tiny_spec(), 4);
  const auto r = train(net, toy_pairs(10, 6), cfg);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_EQ(r.epoch_losses.size(), 1u);
}

TEST(Train, SmallNetOverfits) {
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch = 10;
  cfg.adam.learning_rate = 1e-2;
  HallucinationNet<double> net(tiny_spec(Channel::Cb), 7);
  const auto pairs = toy_pairs(10, 8);
  const auto r = train(net, pairs, cfg);
  EXPECT_LE(r.epoch_losses.back(), 0.1 * r.epoch_losses.front());
}

TEST(Trainer, StepReturnsPreUpdateLoss) {
  HallucinationNet<double> net(tiny_spec(), 9);
  const auto pairs = toy_pairs(2, 10);
  double expected = 0.0;
  for (const auto& p : pairs) expected += euclidean_loss(net.forward(p.input), p.target, 2);
  Trainer<double> t(net, AdamConfig{});
  EXPECT_NEAR(t.step({&pairs[0], &pairs[1]}), expected, 1e-12);
  EXPECT_EQ(t.adam().timestep(), 1);
}

TEST(TrainingLog, Format) {
  nirvis::test::TempDir dir("trainlog");
  write_training_log(dir.file("log.csv"), {0.5, 0.25});
  std::ifstream in(dir.file("log.csv"));
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "epoch,mean_loss\n1,0.5\n2,0.25\n");
}

TEST(Weights, RoundTripPreservesForward) {
  nirvis::test::TempDir dir("weights");
  std::mt19937_64 rng(11);
  HallucinationNet<float> net(hallucination_spec(Channel::Cb, SlopeMode::Shared), 12);
  net.set_trained(true);
  save_net(dir.file("cb.nvhn"), net);
  auto back = load_net<float>(dir.file("cb.nvhn"));
  EXPECT_EQ(back.channel(), Channel::Cb);
  EXPECT_TRUE(back.trained());
  EXPECT_EQ(back.spec().slopes, SlopeMode::Shared);
  EXPECT_EQ(flatten(back), flatten(net));
  const Image in = random_image(10, 10, rng);
  EXPECT_EQ(back.forward(in).matrix(), net.forward(in).matrix());
}

TEST(Weights, RejectsCorruptFiles) {
  nirvis::test::TempDir dir("weights_bad");
  HallucinationNet<float> net(tiny_spec(), 1);
  save_net(dir.file("y.nvhn"), net);
  std::filesystem::resize_file(dir.file("y.nvhn"), std::filesystem::file_size(dir.file("y.nvhn")) - 4);
  EXPECT_THROW(load_net<float>(dir.file("y.nvhn")), FormatError);
  std::ofstream(dir.file("junk.nvhn")) << "NOPE";
  EXPECT_THROW(load_net<float>(dir.file("junk.nvhn")), FormatError);
  EXPECT_THROW(load_net<float>(dir.file("missing.nvhn")), Error);
}

TEST(Hallucinate, ZeroNetsPassLumaThrough) {
  std::mt19937_64 rng(13);
  auto nets = HallucinationNets::fresh(5);
  for (Channel c : {Channel::Y, Channel::Cb, Channel::Cr}) nets[c].set_zero();
  const Image nir = random_image(24, 24, rng);
  const auto out = hallucinate(nets, nir);
  const Image nir_as_float = nir.cast<float>().cast<double>();  // networks run in single precision
  EXPECT_EQ((out.ycc.y - nir_as_float).abs().maxCoeff(), 0.0);
  EXPECT_EQ(out.ycc.cb.abs().maxCoeff(), 0.0);
  EXPECT_EQ(out.ycc.cr.abs().maxCoeff(), 0.0);
  EXPECT_EQ(out.warnings.size(), 3u);
  for (const Image* p : {&out.rgb.r, &out.rgb.g, &out.rgb.b}) {
    EXPECT_TRUE(all_finite(*p));
    EXPECT_GE(p->minCoeff(), 0.0);
    EXPECT_LE(p->maxCoeff(), 1.0);
  }
}

TEST(Hallucinate, PatchInputMatchesNetForward) {
  std::mt19937_64 rng(14);
  auto nets = HallucinationNets::fresh(6);
  for (Channel c : {Channel::Y, Channel::Cb, Channel::Cr}) nets[c].set_trained(true);
  const Image nir = random_image(40, 40, rng);
  const auto out = hallucinate(nets, nir);
  EXPECT_TRUE(out.warnings.empty());
  EXPECT_EQ(out.ycc.cb.matrix(), nets.cb.forward(nir).matrix());
  EXPECT_EQ(out.ycc.y.matrix(), nets.y.forward(nir).matrix());
}
