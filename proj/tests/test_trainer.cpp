#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "s2s2/checkpoint.hpp"
#include "s2s2/trainer.hpp"

using namespace s2s2;

namespace {

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    DatasetConfig c;
    c.mask.height = c.mask.width = 32;
    c.num_train = 6;
    c.num_test_source = 2;
    c.num_test_target = 2;
    c.stack_size = 4;
    return gen_dataset(c);
  }();
  return ds;
}

TrainConfig tiny_train(Mode mode) {
  TrainConfig t;
  t.mode = mode;
  t.epochs = 2;
  t.batch_size = 4;
  t.net = NetConfig{1, 4, 2, 4};
  t.alpha_enc = 0.4;
  t.alpha_dec = mode == Mode::synth_enc_dec || mode == Mode::aug_only ? 0.3 : 0.0;
  return t;
}

std::span<const ImageStack> train_split() { return std::span<const ImageStack>(tiny_dataset().train); }

}  // namespace

class EveryMode : public ::testing::TestWithParam<Mode> {};

TEST_P(EveryMode, LossRecordIdentityAndForwardCount) {
  const TrainConfig cfg = tiny_train(GetParam());
  const auto r = train<double>(cfg, train_split());
  ASSERT_EQ(r.history.size(), 4u);  // 2 epochs x ceil(6 / 4)
  const double ae = cfg.effective_alpha_enc(), ad = cfg.effective_alpha_dec();
  for (const auto& rec : r.history) {
    EXPECT_NEAR(rec.total, rec.seg + ae * rec.sc_enc + ad * rec.sc_dec, 1e-9) << "step " << rec.step;
    EXPECT_GE(rec.sc_enc, 0.0);
    EXPECT_LE(rec.sc_enc, 2.0);
    EXPECT_GE(rec.sc_dec, 0.0);
    EXPECT_LE(rec.sc_dec, 2.0);
  }
  EXPECT_EQ(r.history.front().step, 1u);
  EXPECT_EQ(r.history.back().epoch, 1u);
  EXPECT_EQ(r.forward_calls, (cfg.paired() ? 2u : 1u) * 6u * 2u);
}

INSTANTIATE_TEST_SUITE_P(Trainer, EveryMode, ::testing::ValuesIn(kAllModes),
                         [](const auto& info) { return std::string(mode_name(info.param)); });

TEST(Trainer, BaselineRecordsNoConsistency) {
  const auto r = train<double>(tiny_train(Mode::baseline), train_split());
  for (const auto& rec : r.history) {
    EXPECT_EQ(rec.sc_enc, 0.0);
    EXPECT_EQ(rec.sc_dec, 0.0);
    EXPECT_EQ(rec.total, rec.seg);
  }
}

TEST(Trainer, StackMembersDisagreeAtInitialization) {
  const auto r = train<double>(tiny_train(Mode::synth_enc), train_split());
  EXPECT_GT(r.history.front().sc_enc, 0.0);
}

TEST(Trainer, ZeroEpochsReturnsInitialization) {
  TrainConfig cfg = tiny_train(Mode::synth_enc);
  cfg.epochs = 0;
  const auto r = train<float>(cfg, train_split());
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(encode_checkpoint(r.params), encode_checkpoint(init_params<float>(cfg.net, cfg.seed)));
}

TEST(Trainer, SameSeedGivesByteIdenticalCheckpoints) {
  const TrainConfig cfg = tiny_train(Mode::synth_enc);
  const auto a = train<float>(cfg, train_split()), b = train<float>(cfg, train_split());
  EXPECT_EQ(encode_checkpoint(a.params), encode_checkpoint(b.params));
  TrainConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(encode_checkpoint(a.params), encode_checkpoint(train<float>(other, train_split()).params));
}

TEST(Trainer, BaselineMatchesStackFreeReferenceLoop) {
  // Plain supervised loop over single images; no stacks, no pairing.
  const TrainConfig cfg = tiny_train(Mode::baseline);
  std::vector<Image> images;
  std::vector<SegmentationMask> masks;
  for (const auto& s : tiny_dataset().train) {
    images.push_back(s.images[0]);
    masks.push_back(s.mask);
  }
  NetParams<float> params = init_params<float>(cfg.net, cfg.seed);
  Adam<float> opt(AdamConfig{cfg.learning_rate});
  Rng shuffle(cfg.seed, Stream::shuffle);
  std::vector<double> ref_losses;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = epoch_order(images.size(), shuffle);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      params.zero_grad();
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto loss = seg_loss(forward(params, image_tensor<float>(images[order[i]])).logits, masks[order[i]]);
        backward(loss, 1.0f / static_cast<float>(end - start));
        batch_loss += loss.item();
      }
      ref_losses.push_back(batch_loss / static_cast<double>(end - start));
      opt.step(params.tensors);
    }
  }
  const auto r = train<float>(cfg, train_split());
  ASSERT_EQ(r.history.size(), ref_losses.size());
  for (std::size_t i = 0; i < ref_losses.size(); ++i) EXPECT_EQ(r.history[i].total, ref_losses[i]);
  EXPECT_EQ(encode_checkpoint(r.params), encode_checkpoint(params));
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c = tiny_train(Mode::synth_enc);
  c.alpha_enc = 0;
  EXPECT_THROW(train<float>(c, train_split()), ConfigError);
  c = tiny_train(Mode::synth_enc_dec);
  c.alpha_dec = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_train(Mode::baseline);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_train(Mode::baseline);
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_train(Mode::baseline);
  c.net.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(train<float>(tiny_train(Mode::baseline), std::span<const ImageStack>{}), std::invalid_argument);
}

TEST(Trainer, ModeNamesRoundTrip) {
  for (const Mode m : kAllModes) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_FALSE(parse_mode("synth"));
}

TEST(Trainer, NonFiniteInputIsARunFailure) {
  std::vector<ImageStack> stacks(tiny_dataset().train.begin(), tiny_dataset().train.begin() + 2);
  stacks[1].images[0].pixels[7] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train<float>(tiny_train(Mode::baseline), std::span<const ImageStack>(stacks)), RunFailure);
}

TEST(Trainer, SynthModesRejectSingletonStacks) {
  std::vector<ImageStack> stacks(tiny_dataset().train.begin(), tiny_dataset().train.begin() + 1);
  stacks[0].images.resize(1);
  EXPECT_THROW(train<float>(tiny_train(Mode::synth_only), std::span<const ImageStack>(stacks)),
               std::invalid_argument);
  EXPECT_NO_THROW(train<float>(tiny_train(Mode::baseline), std::span<const ImageStack>(stacks)));
}

TEST(Trainer, TrainingReducesSegmentationLoss) {
  TrainConfig cfg = tiny_train(Mode::baseline);
  cfg.epochs = 15;
  cfg.learning_rate = 5e-3;
  const auto r = train<float>(cfg, train_split());
  EXPECT_LT(r.history.back().seg, 0.8 * r.history.front().seg);
}

TEST(Augment, StaysInRangeAndIsSeeded) {
  const Image& img = tiny_dataset().train[0].images[0];
  Rng a(1, Stream::sampling), b(1, Stream::sampling);
  const Image x = photometric_augment(img, a), y = photometric_augment(img, b);
  EXPECT_EQ(x, y);
  EXPECT_NE(x, img);
  for (const float v : x.pixels) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}
