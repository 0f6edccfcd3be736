#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "s2s2/diffcore/grad_check.hpp"
#include "s2s2/segnet.hpp"
#include "s2s2/trainer.hpp"

using namespace s2s2;

namespace {

Image random_image(Rng& rng, std::size_t H, std::size_t W) {
  Image img(H, W);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(SegNet, DefaultParameterCount) {
  // in*out*k*k + out per conv, widths 16/32 with a 64-wide bottleneck:
  // enc0 160 + 2320, enc1 4640 + 9248, bottleneck 18496 + 36928,
  // dec1 27680 + 9248, dec0 6928 + 2320, head 68.
  const auto p = init_params<float>(NetConfig{}, 1);
  EXPECT_EQ(p.num_parameters(), 118036u);
  EXPECT_EQ(p.tensors.size(), 22u);
  EXPECT_EQ(p.names.front(), "enc0.conv1.weight");
  EXPECT_EQ(p.names.back(), "head.bias");
}

TEST(SegNet, OutputShapes) {
  Rng rng(1, Stream::verify);
  const auto p = init_params<float>(NetConfig{}, 1);
  const auto out = forward(p, image_tensor<float>(random_image(rng, 64, 64)));
  EXPECT_EQ(out.enc_feat.shape(), (Shape{64, 16, 16}));
  EXPECT_EQ(out.dec_feat.shape(), (Shape{16, 64, 64}));
  EXPECT_EQ(out.logits.shape(), (Shape{4, 64, 64}));
}

TEST(SegNet, OtherDepthsAndWidths) {
  Rng rng(2, Stream::verify);
  for (const int depth : {1, 3}) {
    const NetConfig cfg{1, 4, depth, 3};
    const auto p = init_params<double>(cfg, 2);
    const auto out = forward(p, image_tensor<double>(random_image(rng, 16, 24)));
    const std::size_t f = std::size_t{1} << depth;
    EXPECT_EQ(out.enc_feat.shape(), (Shape{static_cast<std::size_t>(4 << depth), 16 / f, 24 / f}));
    EXPECT_EQ(out.logits.shape(), (Shape{3, 16, 24}));
  }
}

TEST(SegNet, InitIsDeterministicHeUniformWithZeroBias) {
  const auto a = init_params<float>(NetConfig{}, 7), b = init_params<float>(NetConfig{}, 7),
             c = init_params<float>(NetConfig{}, 8);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_TRUE(std::equal(a.tensors[i].data().begin(), a.tensors[i].data().end(), b.tensors[i].data().begin()));
  }
  EXPECT_NE(a.tensors[0][0], c.tensors[0][0]);
  const auto& w = a.get("enc1.conv1.weight");  // fan_in = 16 * 9
  const double bound = std::sqrt(6.0 / 144.0);
  double max_abs = 0;
  for (const float v : w.data()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.9 * bound);
  for (const float v : a.get("bottleneck.conv2.bias").data()) EXPECT_EQ(v, 0.0f);
}

TEST(SegNet, ConfigValidation) {
  EXPECT_THROW(init_params<float>(NetConfig{1, 16, 0, 4}, 1), std::invalid_argument);
  EXPECT_THROW(init_params<float>(NetConfig{1, 0, 2, 4}, 1), std::invalid_argument);
  EXPECT_THROW(init_params<float>(NetConfig{1, 16, 2, 1}, 1), std::invalid_argument);
  const auto p = init_params<float>(NetConfig{}, 1);
  EXPECT_THROW(forward(p, image_tensor<float>(Image(30, 32))), std::invalid_argument);
  EXPECT_THROW(forward(p, Tensor<float>::zeros({2, 32, 32})), std::invalid_argument);
  EXPECT_THROW(p.get("nope"), std::out_of_range);
}

TEST(SegNet, FloatAndDoubleAgree) {
  Rng rng(3, Stream::verify);
  const auto pf = init_params<float>(NetConfig{1, 8, 2, 4}, 3);
  const auto pd = pf.cast<double>();
  const Image img = random_image(rng, 16, 16);
  const auto of = forward(pf, image_tensor<float>(img));
  const auto od = forward(pd, image_tensor<double>(img));
  for (std::size_t i = 0; i < od.logits.numel(); ++i) EXPECT_NEAR(of.logits[i], od.logits[i], 1e-4);
}

TEST(SegNet, ArgmaxTiesGoToLowestClass) {
  const auto logits = Tensor<double>(Shape{3, 1, 2}, {1.0, 0.0, 1.0, 2.0, 0.5, 2.0});
  const SegmentationMask m = argmax_mask(logits);
  EXPECT_EQ(m.labels[0], 0);
  EXPECT_EQ(m.labels[1], 1);
  EXPECT_EQ(m.num_classes, 3);
}

TEST(SegNet, PredictLeavesParametersUntouched) {
  Rng rng(4, Stream::verify);
  const auto p = init_params<float>(NetConfig{1, 4, 2, 4}, 4);
  const SegmentationMask m = predict(p, random_image(rng, 16, 16));
  EXPECT_EQ(m.height, 16u);
  for (const auto& t : p.tensors) EXPECT_FALSE(t.has_grad());
}

TEST(SegNet, CloneIsDeep) {
  auto p = init_params<float>(NetConfig{1, 4, 1, 2}, 5);
  auto q = p.clone();
  q.tensors[0].mutable_data()[0] += 1.0f;
  EXPECT_NE(p.tensors[0][0], q.tensors[0][0]);
}

TEST(GradCheck, FullLossThroughDepthTwoNet) {
  // Segmentation on both images plus both consistency terms, 16x16, 64-bit.
  Rng rng(5, Stream::verify);
  auto params = init_params<double>(NetConfig{1, 4, 2, 4}, 5);
  for (auto& t : params.tensors)
    for (auto& v : t.mutable_data()) v += rng.normal(0.0, 0.05);  // nonzero biases
  SegmentationMask mask(16, 16, 4);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.labels[i] = static_cast<std::uint8_t>((i / 16 / 4 + i % 16 / 5) % 4);
  const auto x0 = image_tensor<double>(random_image(rng, 16, 16));
  const auto x1 = image_tensor<double>(random_image(rng, 16, 16));
  auto f = [&] {
    return total_loss(forward(params, x0), forward(params, x1), mask, 0.4, 0.3).first;
  };
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 40;
  opts.sample_seed = 5;
  const auto r = grad_check_report(f, std::span<Tensor<double>>(params.tensors), opts);
  EXPECT_LT(r.max_rel_error, 1e-4) << params.names[r.worst_tensor] << "[" << r.worst_index << "] analytic "
                                   << r.analytic << " numeric " << r.numeric;
  EXPECT_GT(r.coords_checked, 400u);
}
