#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "caps_ood/linalg.hpp"

namespace caps_ood {

using Labels = std::vector<std::int32_t>;

// n x D_in backbone embeddings plus optional class labels.
struct EmbeddingDataset {
  std::string name;
  Matrix<float> data;
  std::optional<Labels> true_labels;
  std::optional<Labels> pred_labels;

  std::size_t size() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }

  bool operator==(const EmbeddingDataset&) const = default;
};

// Checks n >= 1, d >= 1, finite data, label lengths and non-negative ids.
void validate(const EmbeddingDataset& ds);

// EMB1 layout, little-endian:
//   "EMB1" | u8 version=1 | u8 flags (bit0 true labels, bit1 pred labels)
//   | u64 n | u32 d | n*d f32 row-major | [n i32 true] | [n i32 pred]
inline constexpr std::size_t kEmb1HeaderBytes = 18;

std::vector<std::uint8_t> encode_emb1(const EmbeddingDataset& ds);
EmbeddingDataset decode_emb1(const std::vector<std::uint8_t>& bytes, std::string name = {});

// The dataset name is taken from the file stem.
EmbeddingDataset read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

enum class Role { IdTrain, IdTest, Ood };

std::string to_string(Role role);
Role parse_role(const std::string& s);

struct ManifestEntry {
  std::string name;
  std::filesystem::path path;
  Role role = Role::Ood;
  std::string notes;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry& id_train() const;
  // Throws MissingSplit when there is no id_test entry.
  const ManifestEntry& id_test() const;
  std::vector<const ManifestEntry*> ood() const;
};

// Relative paths are resolved against base_dir.
DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
// Paths are written as given; callers store them relative to the manifest.
std::string manifest_to_json(const DatasetManifest& manifest);

}  // namespace caps_ood
