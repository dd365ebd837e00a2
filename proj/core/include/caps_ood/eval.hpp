#pragma once

#include <span>
#include <string>
#include <vector>

#include "caps_ood/epd.hpp"

namespace caps_ood {

// Scores are oriented so that higher means more OOD; ID is the accepted class.

// P(ood > id) over all ID x OOD pairs, ties counted as 1/2. Computed from
// mid-ranks in O(n log n).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Fraction of OOD scores <= tau, where tau is the ceil(0.95 n_id)-th smallest
// ID score (no interpolation).
double fpr95(std::span<const double> id_scores, std::span<const double> ood_scores);

struct DatasetResult {
  std::string name;
  std::string notes;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  double auroc = 0.0;
  double fpr95 = 0.0;
};

struct EvalReport {
  Metric metric = Metric::Epd;
  double p = 0.15;
  std::vector<DatasetResult> datasets;
  double average_auroc = 0.0;
  double average_fpr95 = 0.0;
};

struct NamedScores {
  std::string name;
  std::vector<double> scores;
  std::string notes;
};

EvalReport evaluate_scores(std::span<const double> id_scores, std::span<const NamedScores> ood,
                           const ScoreConfig& cfg);

// Scores id_test once and every ood entry of the manifest against it.
// Throws MissingSplit without an id_test entry or without ood entries.
EvalReport evaluate(const DatasetManifest& manifest, const SaeCheckpoint& ckpt, const CapTable& caps,
                    const ScoreConfig& cfg);

std::string report_json(const EvalReport& report);
// Header: name,n_id,n_ood,auroc,fpr95; last row is "average".
std::string report_csv(const EvalReport& report);

}  // namespace caps_ood
