#include "caps_ood/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <numeric>
#include <spdlog/spdlog.h>

namespace caps_ood {

namespace {

void check_scores(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw Error(ErrorCode::EmptyInput, "ID and OOD score arrays must be nonempty");
  for (double s : id_scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFinite, "ID score is not finite");
  }
  for (double s : ood_scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFinite, "OOD score is not finite");
  }
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  check_scores(id_scores, ood_scores);
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, false});
  for (double s : ood_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of 1-based mid-ranks of the OOD scores, doubled to stay integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const std::uint64_t twice_mid = (i + 1) + j;  // 2 * average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].ood) twice_rank_sum += twice_mid;
    }
    i = j;
  }
  const std::uint64_t n_ood = ood_scores.size();
  const std::uint64_t twice_u = twice_rank_sum - n_ood * (n_ood + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(id_scores.size()) * static_cast<double>(n_ood));
}

double fpr95(std::span<const double> id_scores, std::span<const double> ood_scores) {
  check_scores(id_scores, ood_scores);
  if (id_scores.size() < 20) {
    spdlog::warn("fpr95 with only {} ID scores; the 95% threshold is coarse", id_scores.size());
  }
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  // ceil(0.95 n) in integer arithmetic.
  const std::size_t rank = (95 * sorted.size() + 99) / 100;
  const double tau = sorted[std::max<std::size_t>(rank, 1) - 1];
  const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s <= tau; });
  return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

EvalReport evaluate_scores(std::span<const double> id_scores, std::span<const NamedScores> ood,
                           const ScoreConfig& cfg) {
  if (ood.empty()) throw Error(ErrorCode::MissingSplit, "evaluation needs at least one OOD dataset");
  EvalReport report;
  report.metric = cfg.metric;
  report.p = cfg.p;
  for (const auto& set : ood) {
    DatasetResult r;
    r.name = set.name;
    r.notes = set.notes;
    r.n_id = id_scores.size();
    r.n_ood = set.scores.size();
    r.auroc = auroc(id_scores, set.scores);
    r.fpr95 = fpr95(id_scores, set.scores);
    report.average_auroc += r.auroc;
    report.average_fpr95 += r.fpr95;
    report.datasets.push_back(std::move(r));
  }
  report.average_auroc /= static_cast<double>(report.datasets.size());
  report.average_fpr95 /= static_cast<double>(report.datasets.size());
  return report;
}

EvalReport evaluate(const DatasetManifest& manifest, const SaeCheckpoint& ckpt, const CapTable& caps,
                    const ScoreConfig& cfg) {
  const auto& id_entry = manifest.id_test();
  const auto ood_entries = manifest.ood();
  if (ood_entries.empty()) throw Error(ErrorCode::MissingSplit, "manifest has no ood entries");

  const auto id_ds = read_embeddings(id_entry.path);
  const auto id_scores = score_dataset(caps, ckpt.model, ckpt.normalizer, id_ds, cfg).scores;
  std::vector<NamedScores> ood;
  for (const auto* entry : ood_entries) {
    const auto ds = read_embeddings(entry->path);
    ood.push_back({entry->name, score_dataset(caps, ckpt.model, ckpt.normalizer, ds, cfg).scores, entry->notes});
  }
  return evaluate_scores(id_scores, ood, cfg);
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json datasets = nlohmann::ordered_json::array();
  for (const auto& r : report.datasets) {
    datasets.push_back(nlohmann::ordered_json{
        {"name", r.name}, {"auroc", r.auroc}, {"fpr95", r.fpr95}, {"n_id", r.n_id}, {"n_ood", r.n_ood}});
  }
  nlohmann::ordered_json doc{
      {"metric", to_string(report.metric)},
      {"p", report.p},
      {"datasets", datasets},
      {"average", nlohmann::ordered_json{{"auroc", report.average_auroc}, {"fpr95", report.average_fpr95}}},
  };
  return doc.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::string out = "name,n_id,n_ood,auroc,fpr95\n";
  for (const auto& r : report.datasets) out += fmt::format("{},{},{},{},{}\n", r.name, r.n_id, r.n_ood, r.auroc, r.fpr95);
  out += fmt::format("average,,,{},{}\n", report.average_auroc, report.average_fpr95);
  return out;
}

}  // namespace caps_ood
