#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "brace/checkpoint.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

brace::Model<float> full_model() {
  brace::Rng rng(31);
  auto m = testing_util::tiny_model<float>(31);
  m.attach_brace({.rank = 4});
  m.attach_steering();
  m.freeze_backbone();
  testing_util::randomize(m, brace::ParamGroup::steer_weight, rng, 0.2);
  m.attribute_sets().push_back({"positive", {"great", "fine day"}});
  return m;
}

fs::path tmp_path(const std::string& name) {
  return fs::temp_directory_path() / ("brace_ckpt_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdenticalAndPreservesStructure) {
  auto m = full_model();
  const auto bytes = brace::serialize_checkpoint(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "BRACE1");
  auto back = brace::deserialize_checkpoint<float>(bytes);
  EXPECT_EQ(brace::serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_TRUE(back.has_brace());
  EXPECT_TRUE(back.has_steering());
  ASSERT_EQ(back.attribute_sets().size(), 1u);
  EXPECT_EQ(back.attribute_sets()[0].tokens[1], "fine day");
  EXPECT_FALSE(back.params().at("tok_emb").trainable());
  EXPECT_TRUE(back.params().at("layers.0.brace.gate").trainable());
  auto ids = m.frame("round trip");
  EXPECT_EQ(back.forward(ids).logits.value(), m.forward(ids).logits.value());
}

TEST(Checkpoint, FileSaveAndLoad) {
  auto m = full_model();
  const auto p = tmp_path("file");
  brace::save_checkpoint(m, p);
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  auto back = brace::load_checkpoint<float>(p);
  EXPECT_EQ(back.backbone_checksum(), m.backbone_checksum());
  fs::remove(p);
  EXPECT_THROW(brace::load_checkpoint<float>(p), brace::Error);
}

TEST(Checkpoint, TruncationIsAChecksumError) {
  auto bytes = brace::serialize_checkpoint(full_model());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{12}}) {
    std::vector<unsigned char> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    try {
      brace::deserialize_checkpoint<float>(t);
      FAIL() << cut;
    } catch (const brace::FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
    }
  }
}

TEST(Checkpoint, FlippedByteIsDetected) {
  auto bytes = brace::serialize_checkpoint(full_model());
  bytes[bytes.size() / 3] ^= 0x40;
  EXPECT_THROW(brace::deserialize_checkpoint<float>(bytes), brace::FormatError);
}

TEST(Checkpoint, BadMagicAndVersionMismatch) {
  auto bytes = brace::serialize_checkpoint(full_model());
  auto bad = bytes;
  bad[0] = 'X';
  try {
    brace::deserialize_checkpoint<float>(bad);
    FAIL();
  } catch (const brace::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  // Bump the version and re-seal the checksum so only the version is wrong.
  auto v2 = bytes;
  v2[6] = 2;
  brace::Fnv1a64 h;
  h.update(v2.data(), v2.size() - 8);
  const auto digest = h.digest();
  for (int i = 0; i < 8; ++i) v2[v2.size() - 8 + i] = static_cast<unsigned char>(digest >> (8 * i));
  try {
    brace::deserialize_checkpoint<float>(v2);
    FAIL();
  } catch (const brace::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, DigestChangesWithWeights) {
  auto m = full_model();
  const auto d0 = brace::checkpoint_digest(brace::serialize_checkpoint(m));
  m.brace_layers()[0].gate->mutable_value()[0] = 1.0f;
  EXPECT_NE(brace::checkpoint_digest(brace::serialize_checkpoint(m)), d0);
}

TEST(Checkpoint, AttributeSetOrderSurvives) {
  auto m = full_model();
  m.attribute_sets().push_back({"alpha", {"a"}});
  m.attribute_sets().push_back({"middle", {"m", "n"}});
  auto back = brace::deserialize_checkpoint<float>(brace::serialize_checkpoint(m));
  EXPECT_EQ(back.attribute_sets(), m.attribute_sets());
}
