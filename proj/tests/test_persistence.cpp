#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "mgn/mgn.hpp"
#include "oracles.hpp"

using namespace mgn;

namespace {

Image gradient_image(std::size_t h, std::size_t w) {
  std::vector<float> v(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        v[(c * h + y) * w + x] = static_cast<float>(((x * 7 + y * 13 + c * 50) % 256) / 255.0);
  return Tensor::from({3, h, w}, v);
}

RunConfig small_run() {
  RunConfig c;
  c.model = oracle::small_model();
  return c;
}

}  // namespace

TEST(Ppm, WhitePixel) {
  const auto img = decode_ppm(std::string("P6\n1 1\n255\n\xff\xff\xff", 14));
  EXPECT_EQ(img.shape(), (Shape{3, 1, 1}));
  EXPECT_EQ(img.vec(), (std::vector<float>{1, 1, 1}));
}

TEST(Ppm, MidValueIsExactRational) {
  const auto img = decode_ppm(std::string("P6\n1 1\n255\n\x80\x80\x80", 14));
  EXPECT_FLOAT_EQ(img[0], 128.0f / 255.0f);
  EXPECT_NEAR(img[0], 0.50196, 1e-5);
}

TEST(Ppm, RoundTripIsByteIdentical) {
  const auto bytes = encode_ppm(gradient_image(9, 13));
  EXPECT_EQ(encode_ppm(decode_ppm(bytes)), bytes);
}

TEST(Ppm, HeaderCommentsAndWhitespace) {
  const auto img = decode_ppm(std::string("P6 # c\n2\t1 # x\n255\n\x00\x00\x00\xff\xff\xff", 25));
  EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(img[1], 1.0f);
}

TEST(Ppm, Rejections) {
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n1 2 3"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\n\x01\x02"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n0 1\n255\n"), FormatError);
  EXPECT_THROW(decode_ppm(""), FormatError);
  EXPECT_THROW(read_ppm("/nonexistent/file.ppm"), FormatError);
}

TEST(Ppm, QuantizeRoundsAndClamps) {
  EXPECT_EQ(quantize_255(0.5f), 128);
  EXPECT_EQ(quantize_255(-0.2f), 0);
  EXPECT_EQ(quantize_255(1.7f), 255);
}

TEST(Checkpoint, SaveLoadForwardIsBitwise) {
  oracle::TempDir dir("ckpt");
  const auto cfg = small_run();
  const auto m = build_model(cfg.model, Rng(5));
  const auto x = oracle::random({3, 16, 16}, 1, 0, 1);
  const auto before = forward(m, x).y.vec();
  save_checkpoint(dir.str("m.ckpt"), m, cfg);
  const auto ck = load_checkpoint(dir.str("m.ckpt"));
  EXPECT_EQ(forward(ck.model, x).y.vec(), before);
  EXPECT_EQ(config_to_json(ck.config), config_to_json(cfg));
}

TEST(Checkpoint, EnumeratesBuildModelParameters) {
  const auto cfg = small_run();
  const auto m = build_model(cfg.model, Rng(5));
  const auto ck = decode_checkpoint(encode_checkpoint(m, cfg));
  EXPECT_EQ(ck.model.params.names(), m.params.names());
  const auto fresh = build_model(cfg.model, Rng(99));
  EXPECT_EQ(std::set<std::string>(ck.model.params.names().begin(), ck.model.params.names().end()),
            std::set<std::string>(fresh.params.names().begin(), fresh.params.names().end()));
}

TEST(Checkpoint, CorruptMagicRejected) {
  const auto cfg = small_run();
  auto bytes = encode_checkpoint(build_model(cfg.model, Rng(0)), cfg);
  bytes[0] ^= 0x20;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  const auto cfg = small_run();
  const auto bytes = encode_checkpoint(build_model(cfg.model, Rng(0)), cfg);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
}

TEST(Checkpoint, MismatchedArchitectureRejected) {
  // Tensors of a C=4 model under a config that claims C=5.
  const auto cfg = small_run();
  const auto m = build_model(cfg.model, Rng(0));
  auto wider = cfg.model;
  wider.base_channels = 5;
  const auto lying = Model<float>::from_tensors(wider, m.params.names(), m.params.tensors());
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(lying, cfg)), FormatError);
}

TEST(Config, EmptyObjectGivesDefaults) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.model.partitions, 8);
  EXPECT_EQ(c.model.stages, 5);
  EXPECT_EQ(c.model.fusion_mode, FusionMode::mutual);
  EXPECT_EQ(c.model.residual_mode, ResidualMode::c2f);
  EXPECT_EQ(c.loss.alpha_g, 0.01);
  EXPECT_EQ(c.loss.alpha_l, 0.05);
  EXPECT_EQ(c.train.lr0, 5e-4);
  EXPECT_FALSE(c.expected_params.has_value());
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config(R"({"partitions": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"partition": 4})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"fusion_mode": "sideways"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"base_channels": "13"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"block_mask": [true, false]})"), ConfigError);
  EXPECT_THROW(parse_config("{"), ConfigError);
  EXPECT_THROW(parse_config("[]"), ConfigError);
}

TEST(Config, ConcatModeSelected) {
  const auto c = parse_config(R"({"fusion_mode": "concat"})");
  EXPECT_EQ(c.model.fusion_mode, FusionMode::concat);
  EXPECT_EQ(c.model.partitions, 8);
}

TEST(Config, JsonRoundTrip) {
  auto c = parse_config(R"({"base_channels": 7, "block_mask": [true, false, true, false, true], "alpha_g": 0.5,
                            "total_steps": 17, "seed": 3, "expected_params": 12})");
  const auto again = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
  EXPECT_EQ(again.model.block_mask[1], false);
  EXPECT_EQ(again.expected_params, std::optional<std::size_t>(12));
}

TEST(Config, ShippedConfigsLoadAndMatchPins) {
  for (const char* f : {"default.json", "tiny.json", "long_schedule.json"}) {
    const auto c = load_config(std::string(MGN_TEST_CONFIG_DIR) + "/" + f);
    if (c.expected_params) EXPECT_EQ(*c.expected_params, oracle::param_count(c.model)) << f;
  }
}

TEST(PairedFolder, MatchesByNameAndListsStrays) {
  oracle::TempDir dir("pairs");
  std::filesystem::create_directories(dir.path() / "x");
  std::filesystem::create_directories(dir.path() / "gt");
  const auto img = gradient_image(8, 8);
  for (const char* n : {"a.ppm", "b.ppm", "only_x.ppm"}) write_ppm((dir.path() / "x" / n).string(), img);
  for (const char* n : {"a.ppm", "b.ppm", "only_gt.ppm"}) write_ppm((dir.path() / "gt" / n).string(), img);
  const auto f = load_paired_folder(dir.str());
  ASSERT_EQ(f.pairs.size(), 2u);
  EXPECT_EQ(f.pairs[0].name, "a.ppm");
  EXPECT_EQ(f.unmatched.size(), 2u);
}

TEST(Enhance, PadCropAndZeroResidualIdentity) {
  auto m = build_model(oracle::small_model(), Rng(0));
  for (const char* n : {"head.residual.weight", "head.residual.bias"})
    for (auto& v : m.params.get(n).mutable_data()) v = 0.0f;
  const auto img = decode_ppm(encode_ppm(gradient_image(65, 65)));
  const auto y = enhance(m, img);
  EXPECT_EQ(y.shape(), img.shape());
  EXPECT_EQ(encode_ppm(y), encode_ppm(img));
  EXPECT_THROW(enhance(m, Tensor::ones({3, 7, 9})), DimensionError);
}

TEST(ReflectPad, MirrorsWithoutRepeatingEdge) {
  const auto img = Tensor::from({1, 1, 3}, {1, 2, 3});
  EXPECT_EQ(reflect_pad(img, 0, 2).vec(), (std::vector<float>{1, 2, 3, 2, 1}));
}
