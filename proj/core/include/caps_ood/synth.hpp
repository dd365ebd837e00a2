#pragma once

// Synthetic embeddings with class-specific sparse supports. Each class owns a
// disjoint block of s unit-norm dictionary atoms; an ID sample is a positive
// combination of its class's atoms plus Gaussian noise. OOD samples weaken
// the class signal and leak energy onto foreign atoms (diffuse), blend two
// classes (mix), or are isotropic with ID-like norms (random).

#include <cstdint>
#include <filesystem>
#include <string>

#include "caps_ood/embedding_store.hpp"

namespace caps_ood {

enum class OodMode { Diffuse, Mix, Random };

std::string to_string(OodMode mode);

enum class Coefficients {
  Gamma,  // Gamma(shape 2, scale 1) per atom
  Unit,   // every coefficient is exactly 1
};

struct SynthConfig {
  std::size_t num_classes = 20;
  std::size_t d_in = 64;
  std::size_t support_size = 3;
  std::size_t n_train_per_class = 200;
  std::size_t n_test_per_class = 50;
  std::size_t n_ood = 1000;
  double noise_sigma = 0.05;
  double ood_intensity = 0.5;
  // Mean coefficient on each of the 2s leaked atoms in diffuse mode.
  double ood_leakage = 1.0;
  Coefficients coefficients = Coefficients::Gamma;
  std::uint64_t seed = 42;
};

// Throws InvalidArgument on bad counts or ranges, DimTooSmall when d_in < 4.
void validate(const SynthConfig& cfg);

SynthConfig parse_synth_config(const std::string& json_text);
std::string synth_config_to_json(const SynthConfig& cfg);

// d_in x (C s) matrix; columns [c s, (c + 1) s) belong to class c.
Matrix<double> gen_dictionary(const SynthConfig& cfg);

enum class IdSplit { Train, Test };

// Class-major rows; true and predicted labels both set to the class.
EmbeddingDataset gen_id(const SynthConfig& cfg, IdSplit split);

// Predicted labels come from the block with the largest projected energy.
EmbeddingDataset gen_ood(const SynthConfig& cfg, OodMode mode);

// Class whose atoms capture the most energy of x (sum of squared projections).
std::int32_t nearest_block(const Matrix<double>& dictionary, std::size_t support_size, std::span<const double> x);

// Writes id_train, id_test, ood_diffuse, ood_mix, ood_random (.emb1) and
// manifest.json into out_dir.
DatasetManifest write_synth_bundle(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace caps_ood
