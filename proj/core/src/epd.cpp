#include "caps_ood/epd.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace caps_ood {

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::Epd: return "epd";
    case Metric::Euclidean: return "euclidean";
    case Metric::Cosine: return "cosine";
  }
  return "epd";
}

Metric parse_metric(const std::string& s) {
  if (s == "epd") return Metric::Epd;
  if (s == "euclidean") return Metric::Euclidean;
  if (s == "cosine") return Metric::Cosine;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + s + "' (expected epd, euclidean or cosine)");
}

void validate(const ScoreConfig& cfg) {
  if (!(cfg.p > 0.0 && cfg.p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "head fraction p must lie in (0, 1]");
  if (!(cfg.epsilon > 0.0) || !std::isfinite(cfg.epsilon)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  }
}

CoreVectors core_vectors(std::span<const float> cap, const SparseCode& code, double p) {
  if (code.d_latent != cap.size()) throw Error(ErrorCode::ShapeMismatch, "code width differs from CAP width");
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "head fraction p must lie in (0, 1]");
  CoreVectors out;
  out.indices = top_indices_desc(cap, head_size(p, cap.size()));
  out.cap.reserve(out.indices.size());
  out.sample.reserve(out.indices.size());
  for (auto j : out.indices) {
    out.cap.push_back(cap[j]);
    out.sample.push_back(code.at(j));
  }
  return out;
}

EnergyProfile normalize_profile(std::span<const double> v, double epsilon) {
  if (v.empty()) throw Error(ErrorCode::LengthMismatch, "cannot normalize an empty profile");
  double total = 0.0;
  for (double x : v) {
    if (x < 0.0 || !std::isfinite(x)) throw Error(ErrorCode::NegativeEntry, "profile entries must be finite and >= 0");
    total += x;
  }
  const double len = static_cast<double>(v.size());
  const double denom = total + len * epsilon;
  EnergyProfile out;
  out.probs.resize(v.size());
  if (denom == 0.0) {
    std::fill(out.probs.begin(), out.probs.end(), 1.0 / len);
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out.probs[i] = (v[i] + epsilon) / denom;
  return out;
}

double epd(const EnergyProfile& p, const EnergyProfile& q) {
  if (p.probs.size() != q.probs.size()) throw Error(ErrorCode::LengthMismatch, "profiles differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    const double pi = p.probs[i];
    if (pi == 0.0) continue;
    kl += pi * std::log(pi / q.probs[i]);
  }
  return std::max(kl, 0.0);
}

double euclidean_distance(std::span<const double> s, std::span<const double> c) {
  if (s.size() != c.size()) throw Error(ErrorCode::LengthMismatch, "vectors differ in length");
  double sq = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) sq += (s[i] - c[i]) * (s[i] - c[i]);
  return std::sqrt(sq);
}

double cosine_distance(std::span<const double> s, std::span<const double> c) {
  if (s.size() != c.size()) throw Error(ErrorCode::LengthMismatch, "vectors differ in length");
  double ss = 0.0, cc = 0.0, sc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ss += s[i] * s[i];
    cc += c[i] * c[i];
    sc += s[i] * c[i];
  }
  if (ss == 0.0 || cc == 0.0) return 1.0;
  return 1.0 - std::clamp(sc / (std::sqrt(ss) * std::sqrt(cc)), -1.0, 1.0);
}

double score_core(const CoreVectors& core, const ScoreConfig& cfg) {
  switch (cfg.metric) {
    case Metric::Epd:
      return epd(normalize_profile(core.sample, cfg.epsilon), normalize_profile(core.cap, cfg.epsilon));
    case Metric::Euclidean: return euclidean_distance(core.sample, core.cap);
    case Metric::Cosine: return cosine_distance(core.sample, core.cap);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

Scorer::Scorer(const CapTable& table, ScoreConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  head_len_ = head_size(cfg_.p, table.d_latent());
  heads_.reserve(table.num_classes());
  for (std::size_t c = 0; c < table.num_classes(); ++c) {
    ClassHead h;
    const auto row = table.caps.row(c);
    h.indices = top_indices_desc(row, head_len_);
    for (auto j : h.indices) h.cap.push_back(row[j]);
    h.reference = normalize_profile(h.cap, cfg_.epsilon);
    heads_.push_back(std::move(h));
  }
}

const Scorer::ClassHead& Scorer::head(std::int32_t pred_class) const {
  if (pred_class < 0 || static_cast<std::size_t>(pred_class) >= heads_.size()) {
    throw Error(ErrorCode::UnknownClass, "class " + std::to_string(pred_class) + " has no CAP");
  }
  return heads_[static_cast<std::size_t>(pred_class)];
}

CoreVectors Scorer::core(const SparseCode& code, std::int32_t pred_class) const {
  const auto& h = head(pred_class);
  CoreVectors out{h.indices, h.cap, {}};
  out.sample.reserve(h.indices.size());
  for (auto j : h.indices) out.sample.push_back(code.at(j));
  return out;
}

double Scorer::score(const SparseCode& code, std::int32_t pred_class) const {
  const auto& h = head(pred_class);
  std::vector<double> sample;
  sample.reserve(h.indices.size());
  for (auto j : h.indices) sample.push_back(code.at(j));
  switch (cfg_.metric) {
    case Metric::Epd: return epd(normalize_profile(sample, cfg_.epsilon), h.reference);
    case Metric::Euclidean: return euclidean_distance(sample, h.cap);
    case Metric::Cosine: return cosine_distance(sample, h.cap);
  }
  return 0.0;
}

double score_sample(const CapTable& table, const SaeModel& model, const InputNormalizer& normalizer,
                    std::span<const float> x, std::int32_t pred_class, const ScoreConfig& cfg) {
  const Scorer scorer(table, cfg);
  return scorer.score(encode(model, normalizer.apply(x)), pred_class);
}

DatasetScores score_dataset(const CapTable& table, const SaeModel& model, const InputNormalizer& normalizer,
                            const EmbeddingDataset& ds, const ScoreConfig& cfg) {
  if (model.d_latent() != table.d_latent()) throw Error(ErrorCode::ShapeMismatch, "CAP width differs from SAE D_latent");
  const Scorer scorer(table, cfg);
  const auto codes = encode_dataset(model, normalizer, ds);
  DatasetScores out;
  out.pred_class = route_samples(table, ds, codes);
  out.scores.resize(ds.size());
  constexpr std::size_t kChunk = 256;
  parallel_for((ds.size() + kChunk - 1) / kChunk, [&](std::size_t c) {
    const auto end = std::min(ds.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) out.scores[i] = scorer.score(codes[i], out.pred_class[i]);
  });
  return out;
}

std::string scores_csv(const DatasetScores& scores) {
  std::string out = "index,pred_class,score\n";
  for (std::size_t i = 0; i < scores.scores.size(); ++i) {
    out += fmt::format("{},{},{}\n", i, scores.pred_class[i], scores.scores[i]);
  }
  return out;
}

}  // namespace caps_ood
