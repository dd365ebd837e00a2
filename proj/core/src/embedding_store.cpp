#include "caps_ood/embedding_store.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace caps_ood {

namespace {

constexpr std::uint8_t kEmb1Version = 1;
constexpr std::uint8_t kFlagTrue = 1u << 0;
constexpr std::uint8_t kFlagPred = 1u << 1;

void validate_labels(const std::optional<Labels>& labels, std::size_t n, const char* which) {
  if (!labels) return;
  if (labels->size() != n) {
    throw Error(ErrorCode::ShapeMismatch, std::string(which) + " label count differs from row count");
  }
  for (auto id : *labels) {
    if (id < 0) throw Error(ErrorCode::InvalidLabel, std::string(which) + " label is negative");
  }
}

}  // namespace

void validate(const EmbeddingDataset& ds) {
  if (ds.size() == 0 || ds.dim() == 0) {
    throw Error(ErrorCode::EmptyDataset, "dataset '" + ds.name + "' has no rows or no columns");
  }
  for (float v : ds.data.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "dataset '" + ds.name + "' contains NaN/Inf");
  }
  validate_labels(ds.true_labels, ds.size(), "true");
  validate_labels(ds.pred_labels, ds.size(), "pred");
}

std::vector<std::uint8_t> encode_emb1(const EmbeddingDataset& ds) {
  validate(ds);
  detail::ByteWriter w;
  w.bytes("EMB1");
  w.u8(kEmb1Version);
  w.u8(static_cast<std::uint8_t>((ds.true_labels ? kFlagTrue : 0) | (ds.pred_labels ? kFlagPred : 0)));
  w.u64(ds.size());
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  for (float v : ds.data.values()) w.f32(v);
  if (ds.true_labels) {
    for (auto id : *ds.true_labels) w.i32(id);
  }
  if (ds.pred_labels) {
    for (auto id : *ds.pred_labels) w.i32(id);
  }
  return w.buffer();
}

EmbeddingDataset decode_emb1(const std::vector<std::uint8_t>& bytes, std::string name) {
  detail::ByteReader r(bytes, "EMB1 '" + name + "'");
  r.expect_magic("EMB1");
  const auto version = r.u8();
  if (version != kEmb1Version) {
    throw Error(ErrorCode::InvalidHeader, "unsupported EMB1 version " + std::to_string(version));
  }
  const auto flags = r.u8();
  if (flags & ~(kFlagTrue | kFlagPred)) throw Error(ErrorCode::InvalidHeader, "unknown EMB1 flag bits");
  const auto n = r.u64();
  const auto d = r.u32();
  if (n == 0 || d == 0) throw Error(ErrorCode::InvalidHeader, "EMB1 header declares an empty matrix");

  const std::uint64_t label_sets = ((flags & kFlagTrue) ? 1 : 0) + ((flags & kFlagPred) ? 1 : 0);
  // Guard against overflow before multiplying out the payload size.
  if (n > (std::uint64_t{1} << 40) / d) throw Error(ErrorCode::TruncatedFile, "EMB1 header declares an absurd size");
  r.need(4 * (n * d + label_sets * n));

  EmbeddingDataset ds;
  ds.name = std::move(name);
  ds.data = Matrix<float>(static_cast<std::size_t>(n), d);
  for (auto& v : ds.data.values()) v = r.f32();
  auto read_labels = [&] {
    Labels labels(static_cast<std::size_t>(n));
    for (auto& id : labels) id = r.i32();
    return labels;
  };
  if (flags & kFlagTrue) ds.true_labels = read_labels();
  if (flags & kFlagPred) ds.pred_labels = read_labels();
  validate(ds);
  return ds;
}

EmbeddingDataset read_embeddings(const std::filesystem::path& path) {
  return decode_emb1(detail::read_file(path), path.stem().string());
}

void write_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, encode_emb1(ds));
}

// ---------------------------------------------------------------------------

std::string to_string(Role role) {
  switch (role) {
    case Role::IdTrain: return "id_train";
    case Role::IdTest: return "id_test";
    case Role::Ood: return "ood";
  }
  return "ood";
}

Role parse_role(const std::string& s) {
  if (s == "id_train") return Role::IdTrain;
  if (s == "id_test") return Role::IdTest;
  if (s == "ood") return Role::Ood;
  throw Error(ErrorCode::UnknownRole, "unknown manifest role '" + s + "'");
}

const ManifestEntry& DatasetManifest::id_train() const {
  for (const auto& e : entries) {
    if (e.role == Role::IdTrain) return e;
  }
  throw Error(ErrorCode::MissingIdTrain, "manifest has no id_train entry");
}

const ManifestEntry& DatasetManifest::id_test() const {
  for (const auto& e : entries) {
    if (e.role == Role::IdTest) return e;
  }
  throw Error(ErrorCode::MissingSplit, "manifest has no id_test entry");
}

std::vector<const ManifestEntry*> DatasetManifest::ood() const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.role == Role::Ood) out.push_back(&e);
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
  DatasetManifest manifest;
  std::size_t n_train = 0;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    for (const auto& item : doc.at("entries")) {
      ManifestEntry e;
      e.name = item.at("name").get<std::string>();
      std::filesystem::path p = item.at("path").get<std::string>();
      e.path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
      e.role = parse_role(item.at("role").get<std::string>());
      if (item.contains("notes") && !item.at("notes").is_null()) e.notes = item.at("notes").get<std::string>();
      if (e.role == Role::IdTrain) ++n_train;
      manifest.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + ex.what());
  }
  if (n_train == 0) throw Error(ErrorCode::MissingIdTrain, "manifest has no id_train entry");
  if (n_train > 1) throw Error(ErrorCode::ParseError, "manifest has more than one id_train entry");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::json item = {{"name", e.name}, {"path", e.path.generic_string()}, {"role", to_string(e.role)}};
    if (!e.notes.empty()) item["notes"] = e.notes;
    entries.push_back(std::move(item));
  }
  return nlohmann::json{{"entries", entries}}.dump(2) + "\n";
}

}  // namespace caps_ood
