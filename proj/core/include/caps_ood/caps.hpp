#pragma once

// Class Activation Profiles: per-class mean sparse activation vectors built
// from the ID training split, their core latent sets, and the structural
// analyses run on them (core-set Jaccard, CAP cosine, affinity statistics,
// sorted profile exports).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "caps_ood/embedding_store.hpp"
#include "caps_ood/sae.hpp"

namespace caps_ood {

struct CapTable {
  Matrix<float> caps;  // C x D_latent, row c is the CAP of class c
  std::vector<std::uint32_t> counts;
  std::vector<std::vector<std::uint32_t>> core_sets;  // ascending
  float q = 0.05f;

  std::size_t num_classes() const noexcept { return caps.rows(); }
  std::size_t d_latent() const noexcept { return caps.cols(); }

  bool operator==(const CapTable&) const = default;
};

// max(1, ceil(fraction * d)). Products within 1e-6 (relative) of an integer
// snap to it, so 0.05f * 640 gives 32.
std::size_t head_size(double fraction, std::size_t d);

// The `count` largest entries, largest first, ties toward the lower index.
std::vector<std::uint32_t> top_indices_desc(std::span<const float> values, std::size_t count);

// Recomputes core sets from the CAP matrix. Validates q, counts and entries.
CapTable make_cap_table(Matrix<float> caps, std::vector<std::uint32_t> counts, float q);

// Mean of densified codes over the selected rows, accumulated in row order.
std::vector<float> mean_activation(std::span<const SparseCode> codes, std::span<const std::size_t> rows,
                                   std::size_t d_latent);

// labels must be dense in [0, C).
CapTable build_caps_from_codes(std::span<const SparseCode> codes, std::span<const std::int32_t> labels,
                               std::size_t d_latent, double q);
CapTable build_caps(const SaeModel& model, const InputNormalizer& normalizer, const EmbeddingDataset& train,
                    double q);

Matrix<double> jaccard_matrix(const CapTable& table);
Matrix<double> cap_cosine_matrix(const CapTable& table);

// Class whose core set carries the most activation mass; ties to the lower id.
std::int32_t predict_class(const CapTable& table, const SparseCode& code);

// pred_labels when present (validated against C), else predict_class.
std::vector<std::int32_t> route_samples(const CapTable& table, const EmbeddingDataset& ds,
                                        std::span<const SparseCode> codes);

struct AffinityStat {
  std::int32_t pred_class = 0;
  double matched_core_mean = 0.0;
  double other_core_mean = 0.0;
};

std::vector<AffinityStat> affinity_stats(const CapTable& table, std::span<const SparseCode> codes,
                                         std::span<const std::int32_t> routes);
std::vector<AffinityStat> affinity_stats(const CapTable& table, const SaeModel& model,
                                         const InputNormalizer& normalizer, const EmbeddingDataset& ds);

struct ProfileRow {
  std::size_t rank = 0;  // 1-based
  std::uint32_t latent = 0;
  double id_mean = 0.0;
  double sample_mean = 0.0;
};

std::vector<ProfileRow> profile_export(const CapTable& table, std::span<const SparseCode> codes,
                                       std::span<const std::int32_t> routes, std::int32_t class_id, double p);
std::vector<ProfileRow> profile_export(const CapTable& table, const SaeModel& model,
                                       const InputNormalizer& normalizer, const EmbeddingDataset& ds,
                                       std::int32_t class_id, double p);

std::string matrix_csv(const Matrix<double>& m);
std::string affinity_csv(std::span<const AffinityStat> stats);
std::string profile_csv(std::span<const ProfileRow> rows);

// CAP1, little-endian:
//   "CAP1" | u8 version=1 | u32 C | u32 D_latent | f32 q | C*D_latent f32 | C u32 counts
// Core sets are recomputed on load.
std::vector<std::uint8_t> encode_cap1(const CapTable& table);
CapTable decode_cap1(const std::vector<std::uint8_t>& bytes);
void save_caps(const CapTable& table, const std::filesystem::path& path);
CapTable load_caps(const std::filesystem::path& path);

}  // namespace caps_ood
