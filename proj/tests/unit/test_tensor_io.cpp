#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "noisyood/bundle_io.hpp"
#include "noisyood/error.hpp"
#include "test_support.hpp"

using namespace noisyood;
using testsupport::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TensorBundle random_bundle(std::mt19937& gen, int64_t n, int64_t d, int64_t c, int layers) {
  std::normal_distribution<float> normal(0.0f, 3.0f);
  std::uniform_int_distribution<int32_t> cls(0, static_cast<int32_t>(c - 1));
  auto dense = [&](int64_t cols) {
    std::vector<float> v(static_cast<std::size_t>(n * cols));
    for (auto& x : v) x = normal(gen);
    return Tensor::float32({n, cols}, std::move(v));
  };
  TensorBundle b;
  b.name = "random";
  b.tensors["feat"] = dense(d);
  b.tensors["logit"] = dense(c);
  std::vector<int32_t> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = cls(gen);
  b.tensors["label"] = Tensor::int32({n}, labels);
  for (int l = 0; l < layers; ++l) b.tensors[layer_key(l)] = dense(d + l);
  b.metadata["note"] = "x";
  return b;
}

}  // namespace

TEST(Crc32, StandardCheckValue) {
  const std::string s = "123456789";
  std::vector<unsigned char> bytes(s.begin(), s.end());
  EXPECT_EQ(crc32(bytes), 0xCBF43926u);
}

TEST(WriteBundle, ZeroFeaturePayload) {
  TempDir dir("zero");
  TensorBundle b;
  b.name = "zeros";
  b.tensors["feat"] = Tensor::float32({2, 3}, std::vector<float>(6, 0.0f));
  write_bundle(b, dir.path());

  const auto bytes = slurp(dir / "feat.bin");
  ASSERT_EQ(bytes.size(), 24u);
  for (unsigned char c : bytes) EXPECT_EQ(c, 0);

  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["name"], "zeros");
  ASSERT_EQ(manifest["tensors"].size(), 1u);
  EXPECT_EQ(manifest["tensors"][0]["shape"], nlohmann::json({2, 3}));
  EXPECT_EQ(manifest["tensors"][0]["dtype"], "float32");
  EXPECT_EQ(manifest["tensors"][0]["file"], "feat.bin");
}

TEST(WriteBundle, LittleEndianBytes) {
  TempDir dir("le");
  TensorBundle b;
  b.tensors["feat"] = Tensor::float32({1, 1}, {1.0f});
  b.tensors["label"] = Tensor::int32({1}, {258});
  write_bundle(b, dir.path());
  EXPECT_EQ(slurp(dir / "feat.bin"), (std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3F}));
  EXPECT_EQ(slurp(dir / "label.bin"), (std::vector<unsigned char>{0x02, 0x01, 0x00, 0x00}));
}

TEST(ReadBundle, GoldenFixture) {
  const auto b = read_bundle(std::filesystem::path(NOISYOOD_FIXTURE_DIR) / "golden_bundle");
  EXPECT_EQ(b.name, "golden");
  const auto feat = b.at("feat").f32();
  ASSERT_EQ(feat.size(), 4u);
  EXPECT_EQ(feat[0], 1.0f);
  EXPECT_EQ(feat[1], -2.0f);
  EXPECT_EQ(feat[2], 0.5f);
  EXPECT_EQ(feat[3], 3.0f);
  EXPECT_EQ(b.at("logit").f32()[0], 10.0f);
  EXPECT_EQ(b.at("logit").f32()[3], -1.0f);
  EXPECT_EQ(b.at("label").to_labels(), (Labels{1, 0}));
}

TEST(ReadBundle, RoundTripIsBitExactOnRandomBundles) {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir("rt");
    const int64_t n = 1 + trial * 3;
    auto b = random_bundle(gen, n, 1 + trial % 5, 2 + trial % 4, trial % 3);
    write_bundle(b, dir.path());
    const auto back = read_bundle(dir.path());
    EXPECT_EQ(back.name, b.name);
    EXPECT_EQ(back.metadata, b.metadata);
    ASSERT_EQ(back.tensors.size(), b.tensors.size());
    for (const auto& [key, t] : b.tensors) EXPECT_TRUE(back.at(key) == t) << key;
  }
}

TEST(ReadBundle, RoundTripPreservesSpecialFloatBitsInStores) {
  TempDir dir("store");
  TensorBundle s;
  s.tensors["w"] = Tensor::float32({3}, {-0.0f, std::numeric_limits<float>::denorm_min(), 1e-38f});
  s.tensors["scalarish"] = Tensor::int32({2, 2}, {-1, 0, 1, 2147483647});
  write_tensor_store(s, dir.path());
  const auto back = read_tensor_store(dir.path());
  EXPECT_TRUE(back.at("w") == s.at("w"));
  EXPECT_TRUE(std::signbit(back.at("w").f32()[0]));
  EXPECT_TRUE(back.at("scalarish") == s.at("scalarish"));
}

TEST(ReadBundle, SingleByteCorruptionIsDetected) {
  TempDir dir("crc");
  std::mt19937 gen(3);
  write_bundle(random_bundle(gen, 10, 4, 3, 0), dir.path());
  const auto path = dir / "feat.bin";
  auto bytes = slurp(path);
  bytes[5] ^= 0x01;
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));
  try {
    read_bundle(dir.path());
    FAIL() << "corruption not detected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC32"), std::string::npos);
  }
}

TEST(ReadBundle, MissingPayloadIsIoError) {
  TempDir dir("missing");
  std::mt19937 gen(4);
  write_bundle(random_bundle(gen, 4, 2, 2, 0), dir.path());
  std::filesystem::remove(dir / "logit.bin");
  EXPECT_THROW(read_bundle(dir.path()), IoError);
  EXPECT_THROW(read_bundle(dir / "nope"), IoError);
}

TEST(ReadBundle, TruncatedPayloadIsRejected) {
  TempDir dir("trunc");
  std::mt19937 gen(5);
  write_bundle(random_bundle(gen, 4, 2, 2, 0), dir.path());
  std::filesystem::resize_file(dir / "feat.bin", 12);
  EXPECT_THROW(read_bundle(dir.path()), ValidationError);
}

TEST(ReadBundle, OodBundleWithoutLabelsIsAccepted) {
  TempDir dir("ood");
  TensorBundle b;
  b.name = "ood";
  b.tensors["feat"] = Tensor::float32({2, 2}, {1, 2, 3, 4});
  b.tensors["logit"] = Tensor::float32({2, 3}, {0, 1, 2, 3, 4, 5});
  write_bundle(b, dir.path());
  const auto back = read_bundle(dir.path());
  EXPECT_FALSE(back.has("label"));
  EXPECT_EQ(back.num_rows(), 2);
}

TEST(ReadBundle, NanLogitIsRejected) {
  TempDir dir("nan");
  TensorBundle b;
  b.tensors["feat"] = Tensor::float32({1, 1}, {1.0f});
  b.tensors["logit"] = Tensor::float32({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  EXPECT_THROW(write_bundle(b, dir.path()), ValidationError);

  // Patch a NaN into a valid bundle, with a matching checksum.
  b.tensors["logit"] = Tensor::float32({1, 2}, {0.0f, 0.0f});
  write_bundle(b, dir.path());
  const std::vector<unsigned char> nan_bytes{0x00, 0x00, 0xC0, 0x7F, 0x00, 0x00, 0x00, 0x00};
  std::ofstream(dir / "logit.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(nan_bytes.data()), static_cast<std::streamsize>(nan_bytes.size()));
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  for (auto& entry : manifest["tensors"])
    if (entry["key"] == "logit") entry["crc32"] = crc32(nan_bytes);
  std::ofstream(dir / "manifest.json") << manifest.dump();
  try {
    read_bundle(dir.path());
    FAIL() << "NaN accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("NaN"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("logit"), std::string::npos);
  }
}

TEST(ReadBundle, SharedLeadingDimensionIsEnforced) {
  TempDir dir("n");
  TensorBundle b;
  b.tensors["feat"] = Tensor::float32({3, 1}, {1, 2, 3});
  b.tensors["logit"] = Tensor::float32({2, 2}, {1, 2, 3, 4});
  EXPECT_THROW(write_bundle(b, dir.path()), ValidationError);
  write_tensor_store(b, dir.path());
  try {
    read_bundle(dir.path());
    FAIL() << "shared-N violation accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("logit"), std::string::npos);
  }
}

TEST(ReadBundle, LabelOutsideClassRangeIsRejected) {
  TensorBundle b;
  b.tensors["logit"] = Tensor::float32({2, 2}, {1, 2, 3, 4});
  b.tensors["label"] = Tensor::int32({2}, {0, 2});
  EXPECT_THROW(b.validate(), ValidationError);
  b.tensors["label"] = Tensor::int32({2}, {0, 1});
  EXPECT_NO_THROW(b.validate());
}

TEST(ReadBundle, ActivationKeysMustBeContiguous) {
  TensorBundle b;
  b.tensors["feat"] = Tensor::float32({1, 1}, {1});
  b.tensors["act.1"] = Tensor::float32({1, 1}, {1});
  EXPECT_THROW(b.validate(), ValidationError);
  b.tensors["act.0"] = Tensor::float32({1, 2}, {1, 2});
  EXPECT_NO_THROW(b.validate());
  EXPECT_EQ(layer_count(b), 2);
}

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor::float32({2, 2}, {1, 2, 3}), ValidationError);
  EXPECT_THROW(Tensor::int32({-1}, {}), ValidationError);
  EXPECT_THROW(dtype_from_string("float64"), ValidationError);
  EXPECT_EQ(dtype_from_string(to_string(DType::kInt32)), DType::kInt32);
}

TEST(SplitSet, RoundTripAndWidthChecks) {
  TempDir dir("split");
  std::mt19937 gen(11);
  SplitSet s;
  s.train = random_bundle(gen, 12, 3, 4, 1);
  s.train.name = "train";
  s.val = random_bundle(gen, 6, 3, 4, 1);
  s.val.name = "val";
  s.test = random_bundle(gen, 7, 3, 4, 1);
  s.test.name = "test";
  TensorBundle ood;
  ood.name = "far";
  ood.tensors["feat"] = Tensor::float32({2, 3}, {1, 2, 3, 4, 5, 6});
  s.ood_sets.push_back(ood);
  write_split_set(s, dir.path());
  const auto back = read_split_set(dir.path());
  ASSERT_EQ(back.ood_sets.size(), 1u);
  EXPECT_EQ(back.ood_sets[0].name, "far");
  EXPECT_FALSE(back.ood_val.has_value());
  EXPECT_TRUE(back.test.at("logit") == s.test.at("logit"));

  s.ood_sets[0].tensors["feat"] = Tensor::float32({1, 2}, {1, 2});
  EXPECT_THROW(s.validate(), ValidationError);
}
