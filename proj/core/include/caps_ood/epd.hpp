#pragma once

// Energy Profile Divergence scoring. For a sample routed to class c, the L
// latents with the largest CAP values form the head M. The sample's and the
// CAP's activations on M are L1-normalized (with epsilon smoothing) into
// profiles P and Q, and the score is KL(P || Q). Euclidean and cosine
// scorers on the raw head vectors are provided for comparison.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "caps_ood/caps.hpp"

namespace caps_ood {

enum class Metric { Epd, Euclidean, Cosine };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& s);

struct ScoreConfig {
  double p = 0.15;
  double epsilon = 1e-10;
  Metric metric = Metric::Epd;
};

void validate(const ScoreConfig& cfg);

struct CoreVectors {
  std::vector<std::uint32_t> indices;  // descending CAP order
  std::vector<double> cap;             // C
  std::vector<double> sample;          // S
};

CoreVectors core_vectors(std::span<const float> cap, const SparseCode& code, double p);

struct EnergyProfile {
  std::vector<double> probs;
};

// probs_i = (v_i + eps) / (sum(v) + L eps). A zero denominator (only possible
// with eps = 0) yields the uniform profile.
EnergyProfile normalize_profile(std::span<const double> v, double epsilon);

// KL(p || q) in nats, using 0 log 0 = 0.
double epd(const EnergyProfile& p, const EnergyProfile& q);

double euclidean_distance(std::span<const double> s, std::span<const double> c);
// 1 - cos(s, c); 1 when either vector is all zeros.
double cosine_distance(std::span<const double> s, std::span<const double> c);

// Higher always means more OOD.
double score_core(const CoreVectors& core, const ScoreConfig& cfg);

// Per-class heads and reference profiles computed once for a CAP table.
class Scorer {
 public:
  Scorer(const CapTable& table, ScoreConfig cfg);

  double score(const SparseCode& code, std::int32_t pred_class) const;
  CoreVectors core(const SparseCode& code, std::int32_t pred_class) const;

  const ScoreConfig& config() const noexcept { return cfg_; }
  std::size_t head_length() const noexcept { return head_len_; }

 private:
  struct ClassHead {
    std::vector<std::uint32_t> indices;
    std::vector<double> cap;
    EnergyProfile reference;
  };

  const ClassHead& head(std::int32_t pred_class) const;

  ScoreConfig cfg_;
  std::size_t head_len_ = 0;
  std::vector<ClassHead> heads_;
};

double score_sample(const CapTable& table, const SaeModel& model, const InputNormalizer& normalizer,
                    std::span<const float> x, std::int32_t pred_class, const ScoreConfig& cfg);

struct DatasetScores {
  std::vector<std::int32_t> pred_class;
  std::vector<double> scores;
};

// Routes each row (pred_labels, else predict_class) and scores it. Output
// order matches the dataset rows.
DatasetScores score_dataset(const CapTable& table, const SaeModel& model, const InputNormalizer& normalizer,
                            const EmbeddingDataset& ds, const ScoreConfig& cfg);

// Header: index,pred_class,score
std::string scores_csv(const DatasetScores& scores);

}  // namespace caps_ood
