#include <gtest/gtest.h>

#include <filesystem>

#include "cpose/adam.hpp"
#include "cpose/network.hpp"
#include "cpose/weights_io.hpp"

using namespace cpose;

namespace {

// Empty stem, one inception block, then the usual head. The fc weight is
// sized from the spec while its input comes from the real concatenation, so
// a successful forward pass pins the concatenated channel count.
NetworkSpec single_block_spec(const InceptionSpec& block, std::size_t in_channels, std::size_t hw) {
  NetworkSpec s;
  s.name = "single-block";
  s.input = {in_channels, hw, hw};
  s.inception = {{"inception_x", block, false}};
  s.fc_width = 8;
  return s;
}

Tensor<double> random_images(std::size_t n, const ImageShape& in, std::uint64_t seed) {
  Tensor<double> x(Shape{n, in.channels, in.height, in.width});
  Rng rng(seed);
  for (double& v : x.data()) v = rng.uniform(0.0, 1.0);
  return x;
}

}  // namespace

TEST(Inception, OutputChannelsAreBranchSum) {
  EXPECT_EQ((InceptionSpec{64, 96, 128, 16, 32, 32}.out_channels()), 256u);
  EXPECT_EQ((InceptionSpec{1, 1, 1, 1, 1, 1}.out_channels()), 4u);
  EXPECT_THROW((InceptionSpec{1, 0, 1, 1, 1, 1}.validate()), std::invalid_argument);
}

TEST(Inception, RandomSpecsForwardWithSummedChannels) {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    InceptionSpec b;
    for (std::size_t* c : {&b.c1x1, &b.c3x3_reduce, &b.c3x3, &b.c5x5_reduce, &b.c5x5, &b.pool_proj}) {
      *c = 1 + rng.below(6);
    }
    const std::size_t cin = 1 + rng.below(4), hw = 3 + rng.below(6);
    const NetworkSpec s = single_block_spec(b, cin, hw);
    const FeatureShape f = trace_feature_shape(s);
    EXPECT_EQ(f.channels, b.out_channels());
    EXPECT_EQ(f.height, hw);
    const auto net = PoseNetwork<double>::build(s, trial);
    EXPECT_EQ(net.parameters().at("fc/weight").value.dim(1), b.out_channels());
    EXPECT_EQ(forward_pose(net, random_images(2, s.input, trial)).size(), 2u);
  }
}

TEST(Network, ReferenceHas23CountedLayers) {
  EXPECT_EQ(counted_layers(reference_spec()), 23u);
  EXPECT_EQ(layer_kinds(desk_spec()), layer_kinds(reference_spec()));
}

TEST(Network, ParameterCountsMatchClosedForm) {
  // Independently summed per layer from the channel table.
  EXPECT_EQ(parameter_count(reference_spec()), 8087095u);
  EXPECT_EQ(parameter_count(desk_spec()), 511651u);
  EXPECT_EQ(PoseNetwork<double>::build(desk_spec()).parameters().scalar_count(), 511651u);
}

TEST(Network, ReferenceBuildsAndRegressesSeven) {
  const auto net = PoseNetwork<float>::build(reference_spec());
  EXPECT_EQ(net.parameters().scalar_count(), 8087095u);
  Tensor<float> x(Shape{1, 3, 224, 224});
  Graph<float> g(const_cast<ParameterStore<float>*>(&net.parameters()));
  const Tensor<float>& out = g.value(net.forward(g, g.input(x)));
  EXPECT_EQ(out.shape(), (Shape{1, 7}));
}

TEST(Network, DeskSpecOutputShapeAndShapeError) {
  const auto net = PoseNetwork<double>::build(desk_spec());
  Graph<double> g(const_cast<ParameterStore<double>*>(&net.parameters()));
  EXPECT_EQ(g.value(net.forward(g, g.input(random_images(3, net.spec().input, 1)))).shape(), (Shape{3, 7}));
  EXPECT_THROW(forward_pose(net, Tensor<double>(Shape{1, 3, 32, 32})), ShapeError);
}

TEST(Network, CollapsingSpatialExtentIsAnError) {
  // Padded windows never collapse, so use an unpadded 5x5 conv on a 3x3 input.
  NetworkSpec s = scaled_spec(4, 3);
  s.stem.front().pad = 0;
  s.stem.front().kernel = 5;
  try {
    PoseNetwork<double>::build(s);
    FAIL() << "expected a collapse";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(PoseNetwork<double>::build(scaled_spec(4, 4)));
  NetworkSpec wide = desk_spec();
  wide.input.width = 96;
  EXPECT_THROW(PoseNetwork<double>::build(wide), ShapeError);
  EXPECT_THROW(spec_from_name("scaled:3:64"), std::invalid_argument);
  EXPECT_THROW(spec_from_name("tiny"), std::invalid_argument);
  EXPECT_EQ(spec_from_name("scaled:8:32").name, "scaled:8:32");
}

TEST(Network, ConstantHeadGivesConstantPose) {
  auto net = PoseNetwork<double>::build(scaled_spec(8, 32), 3);
  auto& w = net.parameters().at("regressor/weight").value;
  for (double& v : w.data()) v = 0.0;
  auto& b = net.parameters().at("regressor/bias").value;
  const double bias[7] = {1, 2, 3, 1, 0, 0, 0};
  for (std::size_t i = 0; i < 7; ++i) b[i] = bias[i];
  for (const Pose& p : forward_pose(net, random_images(4, net.spec().input, 2))) {
    EXPECT_EQ(p, (Pose{{1, 2, 3}, {1, 0, 0, 0}}));
  }
}

TEST(Network, QuaternionNormalizationAndSign) {
  const double a[7] = {0, 0, 0, 2, 0, 0, 0}, b[7] = {0, 0, 0, -1, 0, 0, 0};
  EXPECT_EQ(pose_from_raw(a).rotation, (Quat{1, 0, 0, 0}));
  EXPECT_EQ(pose_from_raw(b).rotation, (Quat{1, 0, 0, 0}));
}

TEST(Network, RandomWeightsGiveUnitQuaternions) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto net = PoseNetwork<double>::build(scaled_spec(8, 32), seed);
    for (const Pose& p : forward_pose(net, random_images(5, net.spec().input, seed + 10))) {
      EXPECT_NEAR(norm(p.rotation), 1.0, 1e-9);
      EXPECT_GE(p.rotation[0], 0.0);
    }
  }
}

TEST(Network, InitializationIsSeeded) {
  EXPECT_TRUE(PoseNetwork<double>::build(desk_spec(), 5).parameters() ==
              PoseNetwork<double>::build(desk_spec(), 5).parameters());
  EXPECT_FALSE(PoseNetwork<double>::build(desk_spec(), 5).parameters() ==
               PoseNetwork<double>::build(desk_spec(), 6).parameters());
  const auto net = PoseNetwork<double>::build(desk_spec());
  const auto& bias = net.parameters().at("inception_4a/3x3/bias").value;
  for (double v : bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(Weights, RoundTripIsBitwise) {
  const auto path = std::filesystem::temp_directory_path() / "cpose_posenet_rt.cpsp";
  const auto a = PoseNetwork<double>::build(desk_spec(), 1);
  save_weights(a.parameters(), path);
  auto b = PoseNetwork<double>::build(desk_spec(), 2);
  const LoadReport r = load_weights(b.parameters(), path);
  EXPECT_TRUE(r.not_in_file.empty());
  EXPECT_TRUE(r.unused.empty());
  EXPECT_TRUE(a.parameters() == b.parameters());
  std::filesystem::remove(path);
}

TEST(Weights, PartialLoadReportsHead) {
  const auto path = std::filesystem::temp_directory_path() / "cpose_posenet_stem.cpsp";
  const auto src = PoseNetwork<double>::build(desk_spec(), 1);
  ParameterStore<double> stem;
  for (const auto& p : src.parameters().entries()) {
    if (is_stem_layer(src.spec(), layer_of(p.name))) stem.add(p.name, p.value);
  }
  save_weights(stem, path);
  auto dst = PoseNetwork<double>::build(desk_spec(), 2);
  const auto before = dst.parameters();
  const LoadReport r = load_weights(dst.parameters(), path);
  EXPECT_EQ(r.loaded.size(), 6u);
  EXPECT_TRUE(dst.parameters().at("conv1/weight").value == src.parameters().at("conv1/weight").value);
  EXPECT_TRUE(dst.parameters().at("fc/weight").value == before.at("fc/weight").value);
  EXPECT_NE(std::find(r.not_in_file.begin(), r.not_in_file.end(), "regressor/bias"), r.not_in_file.end());
  std::filesystem::remove(path);
}

TEST(Weights, ShapeMismatchNamesParameter) {
  const auto path = std::filesystem::temp_directory_path() / "cpose_posenet_bad.cpsp";
  ParameterStore<double> bad;
  bad.add("fc/bias", Tensor<double>(Shape{3}));
  save_weights(bad, path);
  auto net = PoseNetwork<double>::build(desk_spec());
  try {
    load_weights(net.parameters(), path);
    FAIL() << "expected a shape mismatch";
  } catch (const ParameterShapeMismatch& e) {
    EXPECT_EQ(e.parameters, std::vector<std::string>{"fc/bias"});
  }
  std::ofstream(path, std::ios::binary) << "XXXX";
  EXPECT_THROW(load_weights(net.parameters(), path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(LrSchedule, GroupsGlobsAndNegativeMultipliers) {
  const NetworkSpec s = apply_lr_multipliers(desk_spec(), {{"@stem", 0.1}, {"inception_4*", 0.5}, {"@head", 2.0}});
  EXPECT_EQ(lr_multiplier_for(s, "conv2_reduce/weight"), 0.1);
  EXPECT_EQ(lr_multiplier_for(s, "inception_4e/5x5/bias"), 0.5);
  EXPECT_EQ(lr_multiplier_for(s, "inception_3a/1x1/weight"), 1.0);
  EXPECT_EQ(lr_multiplier_for(s, "regressor/weight"), 2.0);
  EXPECT_THROW(apply_lr_multipliers(desk_spec(), {{"@stem", -1.0}}), std::invalid_argument);
}

TEST(LrSchedule, StemTenthMovesTenTimesLess) {
  auto net = PoseNetwork<double>::build(desk_spec());
  net.set_lr_schedule({{"@stem", 0.1}, {"@head", 1.0}});
  const auto before = net.parameters();
  GradientMap<double> grads;
  grads.emplace("conv1/bias", Tensor<double>(Shape{16}, std::vector<double>(16, 0.3)));
  grads.emplace("fc/bias", Tensor<double>(Shape{512}, std::vector<double>(512, 0.3)));
  AdamState<double> adam;
  adam_step(adam, net.parameters(), grads);
  const double stem = before.at("conv1/bias").value[0] - net.parameters().at("conv1/bias").value[0];
  const double head = before.at("fc/bias").value[0] - net.parameters().at("fc/bias").value[0];
  EXPECT_NEAR(head / stem, 10.0, 1e-6);
}

TEST(LrSchedule, FrozenStemSurvivesManySteps) {
  auto net = PoseNetwork<double>::build(desk_spec());
  net.set_lr_schedule({{"@stem", 0.0}});
  const auto before = net.parameters();
  GradientMap<double> grads;
  grads.emplace("conv1/weight", Tensor<double>(before.at("conv1/weight").value.shape(),
                                               std::vector<double>(before.at("conv1/weight").value.numel(), -1.0)));
  AdamState<double> adam;
  for (int i = 0; i < 20; ++i) adam_step(adam, net.parameters(), grads);
  EXPECT_TRUE(net.parameters().at("conv1/weight").value == before.at("conv1/weight").value);
  EXPECT_NE(adam.m.at("conv1/weight")[0], 0.0);
}
