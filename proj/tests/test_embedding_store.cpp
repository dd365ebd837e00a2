#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <limits>

#include "caps_ood/embedding_store.hpp"
#include "test_support.hpp"

using namespace caps_ood;
using caps_ood::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected caps_ood::Error");
  return ErrorCode::InvalidArgument;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("emb1: reads the documented layout") {
  TempDir dir;
  EmbeddingDataset ds;
  ds.data = Matrix<float>(2, 3, {1, 2, 3, 4, 5, 6});
  write_embeddings(ds, dir / "x.emb1");
  const auto back = read_embeddings(dir / "x.emb1");
  CHECK(back.name == "x");
  CHECK(back.data == ds.data);
  CHECK_FALSE(back.true_labels);
  CHECK_FALSE(back.pred_labels);
}

TEST_CASE("emb1: byte layout of a 1x1 dataset") {
  EmbeddingDataset ds;
  ds.data = Matrix<float>(1, 1, 0.0f);
  const auto bytes = encode_emb1(ds);
  // 18-byte header then one f32.
  REQUIRE(bytes.size() == kEmb1HeaderBytes + 4);
  CHECK(bytes.size() == 22);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EMB1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // n = 1, little-endian u64
  for (int i = 7; i < 14; ++i) CHECK(bytes[i] == 0);
  CHECK(bytes[14] == 1);  // d = 1, little-endian u32
  for (int i = 18; i < 22; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("emb1: flag byte encodes label presence") {
  EmbeddingDataset ds;
  ds.data = Matrix<float>(2, 1, {1.5f, -2.0f});
  ds.true_labels = Labels{0, 1};
  CHECK(encode_emb1(ds)[5] == 1);
  ds.pred_labels = Labels{1, 1};
  const auto bytes = encode_emb1(ds);
  CHECK(bytes[5] == 3);
  CHECK(bytes.size() == 18 + 2 * 4 + 2 * 4 + 2 * 4);
  ds.true_labels.reset();
  CHECK(encode_emb1(ds)[5] == 2);
}

TEST_CASE("emb1: rejects malformed input") {
  TempDir dir;
  write_bytes(dir / "short.emb1", {'E', 'M', 'B', '1', 1, 0, 0});
  CHECK(code_of([&] { read_embeddings(dir / "short.emb1"); }) == ErrorCode::TruncatedFile);

  write_bytes(dir / "magic.emb1", {'N', 'P', 'Y', '1', 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
  CHECK(code_of([&] { read_embeddings(dir / "magic.emb1"); }) == ErrorCode::BadMagic);

  EmbeddingDataset ds;
  ds.data = Matrix<float>(2, 2, {1, 2, 3, 4});
  ds.true_labels = Labels{0, 1};
  auto bytes = encode_emb1(ds);
  bytes.pop_back();
  CHECK(code_of([&] { decode_emb1(bytes); }) == ErrorCode::TruncatedFile);

  auto nan_bytes = encode_emb1(ds);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_bytes.data() + 18, &nan, 4);
  CHECK(code_of([&] { decode_emb1(nan_bytes); }) == ErrorCode::NonFinite);

  CHECK(code_of([&] { read_embeddings(dir / "missing.emb1"); }) == ErrorCode::IoError);
}

TEST_CASE("emb1: invariants enforced before writing") {
  TempDir dir;
  EmbeddingDataset ds;
  ds.data = Matrix<float>(1, 2, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK(code_of([&] { write_embeddings(ds, dir / "nan.emb1"); }) == ErrorCode::NonFinite);
  CHECK_FALSE(std::filesystem::exists(dir / "nan.emb1"));

  ds.data = Matrix<float>(2, 2, 1.0f);
  ds.true_labels = Labels{0};
  CHECK(code_of([&] { encode_emb1(ds); }) == ErrorCode::ShapeMismatch);
  ds.true_labels = Labels{0, -1};
  CHECK(code_of([&] { encode_emb1(ds); }) == ErrorCode::InvalidLabel);
  ds.true_labels.reset();
  ds.data = Matrix<float>(0, 2);
  CHECK(code_of([&] { encode_emb1(ds); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("emb1: random datasets survive the roundtrip bit-exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.below(64), d = 1 + rng.below(32);
    const auto flags = rng.below(4);
    auto ds = caps_ood::testing::random_dataset(rng, n, d, flags & 1, flags & 2);
    const auto bytes = encode_emb1(ds);
    CHECK(bytes.size() == 18 + 4 * (n * d + n * ((flags & 1) + ((flags >> 1) & 1))));
    const auto back = decode_emb1(bytes, ds.name);
    CHECK(back == ds);
    CHECK(encode_emb1(back) == bytes);
  }
}

TEST_CASE("manifest: parsing and role validation") {
  const std::string ok = R"({"entries":[
      {"name":"train","path":"a.emb1","role":"id_train"},
      {"name":"o1","path":"/abs/b.emb1","role":"ood","notes":"far"},
      {"name":"o2","path":"c.emb1","role":"ood"}]})";
  const auto m = parse_manifest(ok, "/data");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.id_train().path == std::filesystem::path("/data/a.emb1"));
  CHECK(m.entries[1].path == std::filesystem::path("/abs/b.emb1"));
  CHECK(m.entries[1].notes == "far");
  CHECK(m.ood().size() == 2);
  CHECK(code_of([&] { m.id_test(); }) == ErrorCode::MissingSplit);

  CHECK(code_of([] {
          parse_manifest(R"({"entries":[{"name":"t","path":"a","role":"id_train"},
                                       {"name":"n","path":"b","role":"near_ood"}]})");
        }) == ErrorCode::UnknownRole);
  CHECK(code_of([] { parse_manifest(R"({"entries":[{"name":"o","path":"b","role":"ood"}]})"); }) ==
        ErrorCode::MissingIdTrain);
  CHECK(code_of([] { parse_manifest("{not json"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_manifest(R"({"entries":[{"name":"t","role":"id_train"}]})"); }) == ErrorCode::ParseError);
}

TEST_CASE("manifest: json writer roundtrips") {
  DatasetManifest m;
  m.entries.push_back({"train", "train.emb1", Role::IdTrain, ""});
  m.entries.push_back({"test", "test.emb1", Role::IdTest, "held out"});
  m.entries.push_back({"ood", "ood.emb1", Role::Ood, ""});
  const auto back = parse_manifest(manifest_to_json(m));
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].name == m.entries[i].name);
    CHECK(back.entries[i].path == m.entries[i].path);
    CHECK(back.entries[i].role == m.entries[i].role);
    CHECK(back.entries[i].notes == m.entries[i].notes);
  }
}
