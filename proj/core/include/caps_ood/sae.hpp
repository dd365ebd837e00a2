#pragma once

// Top-k sparse autoencoder over normalized embeddings.
//
//   z    = W_enc x + b_enc
//   h    = top-k of ReLU(z), ties to the lower latent index
//   x_hat = W_dec h + b_dec
//
// Training minimizes recon + alpha * aux, where aux asks the k_aux strongest
// dead latents to reconstruct the residual x - x_hat. The top-k selection is
// treated as a fixed mask when differentiating.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "caps_ood/embedding_store.hpp"
#include "caps_ood/linalg.hpp"

namespace caps_ood {

template <typename T>
struct BasicSaeModel {
  Matrix<T> w_enc;  // D_latent x D_in
  std::vector<T> b_enc;
  Matrix<T> w_dec;  // D_in x D_latent
  std::vector<T> b_dec;
  std::size_t k = 1;

  static BasicSaeModel zeros(std::size_t d_in, std::size_t d_latent, std::size_t k) {
    return {Matrix<T>(d_latent, d_in), std::vector<T>(d_latent), Matrix<T>(d_in, d_latent),
            std::vector<T>(d_in), k};
  }

  std::size_t d_in() const noexcept { return w_enc.cols(); }
  std::size_t d_latent() const noexcept { return w_enc.rows(); }

  bool operator==(const BasicSaeModel&) const = default;
};

using SaeModel = BasicSaeModel<float>;

// Throws InvalidHeader on inconsistent shapes or k outside [1, D_latent].
template <typename T>
void validate(const BasicSaeModel<T>& model);

struct InputNormalizer {
  std::vector<float> mean;
  float scale = 1.0f;

  std::vector<double> apply(std::span<const float> raw) const;
  bool operator==(const InputNormalizer&) const = default;
};

// mean = column mean; scale = mean L2 norm of centered rows, clamped to 1e-12.
InputNormalizer fit_normalizer(const EmbeddingDataset& train);

// n x D_in matrix of normalized rows.
Matrix<double> normalize_rows(const InputNormalizer& normalizer, const EmbeddingDataset& ds);

struct SparseCode {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;          // > 0, aligned with indices
  std::size_t d_latent = 0;

  std::size_t size() const noexcept { return indices.size(); }
  std::vector<double> dense() const;
  // Value at latent j, or 0 when inactive.
  double at(std::uint32_t j) const;
};

// Indices of the k largest strictly positive entries, ascending.
std::vector<std::uint32_t> top_k_positive(std::span<const double> z, std::size_t k);
// Same, restricted to latents where mask[j] is true.
std::vector<std::uint32_t> top_k_positive_masked(std::span<const double> z, std::span<const std::uint8_t> mask,
                                                 std::size_t k);

template <typename T>
std::vector<double> pre_activations(const BasicSaeModel<T>& model, std::span<const double> x);

template <typename T>
SparseCode encode(const BasicSaeModel<T>& model, std::span<const double> x);

template <typename T>
std::vector<double> decode(const BasicSaeModel<T>& model, const SparseCode& code);

// Normalizes and encodes every row; order matches ds.
std::vector<SparseCode> encode_dataset(const SaeModel& model, const InputNormalizer& normalizer,
                                       const EmbeddingDataset& ds);

// ---------------------------------------------------------------------------
// Objective

struct LossParts {
  double total = 0.0;
  double recon = 0.0;
  double aux = 0.0;
};

// Latents selected for one sample: the top-k set and, when any latent is
// dead, the AuxK set drawn from dead latents.
struct ActiveSet {
  std::vector<std::uint32_t> topk;
  std::vector<std::uint32_t> aux;
  bool aux_enabled = false;
};

struct SaeGradients {
  Matrix<double> w_enc;
  std::vector<double> b_enc;
  Matrix<double> w_dec;
  std::vector<double> b_dec;

  static SaeGradients zeros(std::size_t d_in, std::size_t d_latent);
};

// dead_mask[j] != 0 marks latent j dead. Empty mask means no dead latents.
template <typename T>
std::vector<ActiveSet> select_active_sets(const BasicSaeModel<T>& model, const Matrix<double>& inputs,
                                          std::span<const std::size_t> rows,
                                          std::span<const std::uint8_t> dead_mask, std::size_t k_aux);

// Loss with the selection held fixed. On the mask, activations are the raw
// pre-activations. Fills grads when non-null (gradient of total).
template <typename T>
LossParts loss_with_active_sets(const BasicSaeModel<T>& model, const Matrix<double>& inputs,
                                std::span<const std::size_t> rows, std::span<const ActiveSet> active,
                                double alpha, SaeGradients* grads = nullptr);

// Convenience: selection plus loss over every row of batch.
template <typename T>
LossParts loss(const BasicSaeModel<T>& model, const Matrix<double>& batch, std::span<const std::uint8_t> dead_mask,
               double alpha, std::size_t k_aux);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t d_latent = 0;     // 0: 10 x D_in
  std::size_t k = 0;            // 0: 8 when D_in <= 64, else 128
  std::size_t epochs = 100;
  std::size_t batch_size = 0;   // 0: 256 when D_in <= 64, else 4096
  double lr = 1e-3;
  double alpha = 1.0 / 32.0;
  std::size_t k_aux = 0;        // 0: 2k
  std::size_t dead_window = 0;  // 0: max(10 x batch, n)
  std::uint64_t seed = 42;
};

// Fills every zero default from the data shape. Throws InvalidArgument on
// invalid values.
TrainConfig resolve(TrainConfig cfg, std::size_t d_in, std::size_t n);

struct EpochStats {
  double recon = 0.0;
  double aux = 0.0;
  double total = 0.0;
  std::size_t dead = 0;
};

struct TrainResult {
  SaeModel model;
  InputNormalizer normalizer;
  TrainConfig config;  // resolved
  double initial_recon = 0.0;
  std::vector<EpochStats> history;
};

// Decoder columns drawn as random unit vectors; encoder is their transpose.
SaeModel init_model(std::size_t d_in, std::size_t d_latent, std::size_t k, std::uint64_t seed);

// Rescales every W_dec column to unit L2 norm.
template <typename T>
void normalize_decoder_columns(BasicSaeModel<T>& model);

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

TrainResult train(const EmbeddingDataset& train_ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// SAE1 checkpoint, little-endian:
//   "SAE1" | u8 version=1 | u32 D_in | u32 D_latent | u32 k
//   | f32 W_enc (D_latent x D_in) | b_enc | W_dec (D_in x D_latent) | b_dec
//   | normalizer mean (D_in) | normalizer scale

struct SaeCheckpoint {
  SaeModel model;
  InputNormalizer normalizer;
  bool operator==(const SaeCheckpoint&) const = default;
};

std::vector<std::uint8_t> encode_sae1(const SaeCheckpoint& ckpt);
SaeCheckpoint decode_sae1(const std::vector<std::uint8_t>& bytes);
void save_model(const SaeCheckpoint& ckpt, const std::filesystem::path& path);
SaeCheckpoint load_model(const std::filesystem::path& path);

}  // namespace caps_ood
