#include "caps_ood/caps.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "binary_io.hpp"

namespace caps_ood {

std::size_t head_size(double fraction, std::size_t d) {
  const double raw = fraction * static_cast<double>(d);
  const double nearest = std::round(raw);
  // Fractions may arrive through f32 storage (CAP1 q), so snap within float precision.
  const double ceiled = std::abs(raw - nearest) <= 1e-6 * std::max(1.0, raw) ? nearest : std::ceil(raw);
  return std::max<std::size_t>(1, static_cast<std::size_t>(ceiled));
}

std::vector<std::uint32_t> top_indices_desc(std::span<const float> values, std::size_t count) {
  std::vector<std::uint32_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::uint32_t{0});
  count = std::min(count, idx.size());
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), before);
  idx.resize(count);
  return idx;
}

CapTable make_cap_table(Matrix<float> caps, std::vector<std::uint32_t> counts, float q) {
  if (!(q > 0.0f && q <= 1.0f)) throw Error(ErrorCode::InvalidArgument, "core-set fraction q must lie in (0, 1]");
  if (caps.rows() == 0 || caps.cols() == 0) throw Error(ErrorCode::EmptyClass, "CAP table has no classes");
  if (counts.size() != caps.rows()) throw Error(ErrorCode::ShapeMismatch, "one count per class required");
  for (float v : caps.values()) {
    if (!std::isfinite(v) || v < 0.0f) throw Error(ErrorCode::NonFinite, "CAP entries must be finite and >= 0");
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no samples");
  }
  CapTable t{std::move(caps), std::move(counts), {}, q};
  const auto core = head_size(q, t.d_latent());
  for (std::size_t c = 0; c < t.num_classes(); ++c) {
    auto set = top_indices_desc(t.caps.row(c), core);
    std::sort(set.begin(), set.end());
    t.core_sets.push_back(std::move(set));
  }
  return t;
}

std::vector<float> mean_activation(std::span<const SparseCode> codes, std::span<const std::size_t> rows,
                                   std::size_t d_latent) {
  std::vector<double> sum(d_latent, 0.0);
  for (auto r : rows) {
    const auto& code = codes[r];
    for (std::size_t a = 0; a < code.indices.size(); ++a) sum[code.indices[a]] += code.values[a];
  }
  std::vector<float> out(d_latent, 0.0f);
  if (rows.empty()) return out;
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < d_latent; ++j) out[j] = static_cast<float>(sum[j] / n);
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> rows_by_class(std::span<const std::int32_t> labels, std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> out(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

double mass_on(const SparseCode& code, std::span<const std::uint32_t> set) {
  double s = 0.0;
  for (auto j : set) s += code.at(j);
  return s;
}

}  // namespace

CapTable build_caps_from_codes(std::span<const SparseCode> codes, std::span<const std::int32_t> labels,
                               std::size_t d_latent, double q) {
  if (labels.size() != codes.size()) throw Error(ErrorCode::ShapeMismatch, "one label per code required");
  if (codes.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to build CAPs from");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "core-set fraction q must lie in (0, 1]");
  std::int32_t max_label = -1;
  for (auto l : labels) {
    if (l < 0) throw Error(ErrorCode::InvalidLabel, "negative class id");
    max_label = std::max(max_label, l);
  }
  const auto n_classes = static_cast<std::size_t>(max_label) + 1;
  const auto groups = rows_by_class(labels, n_classes);

  Matrix<float> caps(n_classes, d_latent);
  std::vector<std::uint32_t> counts(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (groups[c].empty()) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no training samples");
    counts[c] = static_cast<std::uint32_t>(groups[c].size());
    const auto mean = mean_activation(codes, groups[c], d_latent);
    std::copy(mean.begin(), mean.end(), caps.row(c).begin());
  }
  return make_cap_table(std::move(caps), std::move(counts), static_cast<float>(q));
}

CapTable build_caps(const SaeModel& model, const InputNormalizer& normalizer, const EmbeddingDataset& train,
                    double q) {
  if (!train.true_labels) throw Error(ErrorCode::MissingLabels, "CAP construction needs true labels on the training split");
  const auto codes = encode_dataset(model, normalizer, train);
  return build_caps_from_codes(codes, *train.true_labels, model.d_latent(), q);
}

Matrix<double> jaccard_matrix(const CapTable& table) {
  const auto n = table.num_classes();
  Matrix<double> out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = table.core_sets[i];
      const auto& b = table.core_sets[j];
      std::vector<std::uint32_t> inter;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
      const auto uni = a.size() + b.size() - inter.size();
      const double v = uni == 0 ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
      out(i, j) = out(j, i) = v;
    }
  }
  return out;
}

Matrix<double> cap_cosine_matrix(const CapTable& table) {
  const auto n = table.num_classes();
  std::vector<double> norms(n);
  for (std::size_t c = 0; c < n; ++c) {
    double sq = 0.0;
    for (float v : table.caps.row(c)) sq += static_cast<double>(v) * v;
    if (sq == 0.0) throw Error(ErrorCode::ZeroNormCap, "CAP of class " + std::to_string(c) + " is all zeros");
    norms[c] = std::sqrt(sq);
  }
  Matrix<double> out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto a = table.caps.row(i);
      const auto b = table.caps.row(j);
      double s = 0.0;
      for (std::size_t d = 0; d < a.size(); ++d) s += static_cast<double>(a[d]) * b[d];
      out(i, j) = out(j, i) = std::clamp(s / (norms[i] * norms[j]), -1.0, 1.0);
    }
  }
  return out;
}

std::int32_t predict_class(const CapTable& table, const SparseCode& code) {
  std::int32_t best = 0;
  double best_mass = -1.0;
  for (std::size_t c = 0; c < table.num_classes(); ++c) {
    const double m = mass_on(code, table.core_sets[c]);
    if (m > best_mass) {
      best_mass = m;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

std::vector<std::int32_t> route_samples(const CapTable& table, const EmbeddingDataset& ds,
                                        std::span<const SparseCode> codes) {
  if (codes.size() != ds.size()) throw Error(ErrorCode::ShapeMismatch, "one code per dataset row required");
  std::vector<std::int32_t> out(ds.size());
  if (ds.pred_labels) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto c = (*ds.pred_labels)[i];
      if (c < 0 || static_cast<std::size_t>(c) >= table.num_classes()) {
        throw Error(ErrorCode::UnknownClass, "predicted class " + std::to_string(c) + " has no CAP");
      }
      out[i] = c;
    }
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict_class(table, codes[i]);
  return out;
}

std::vector<AffinityStat> affinity_stats(const CapTable& table, std::span<const SparseCode> codes,
                                         std::span<const std::int32_t> routes) {
  if (routes.size() != codes.size()) throw Error(ErrorCode::MissingLabels, "one route per code required");
  const auto n_classes = table.num_classes();
  // Union of every other class's core set, per class.
  std::vector<std::vector<std::uint32_t>> others(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::uint8_t> in(table.d_latent(), 0);
    for (std::size_t o = 0; o < n_classes; ++o) {
      if (o == c) continue;
      for (auto j : table.core_sets[o]) in[j] = 1;
    }
    for (std::uint32_t j = 0; j < in.size(); ++j) {
      if (in[j]) others[c].push_back(j);
    }
  }
  std::vector<AffinityStat> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto c = routes[i];
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) throw Error(ErrorCode::UnknownClass, "route outside [0, C)");
    const auto& core = table.core_sets[static_cast<std::size_t>(c)];
    const auto& other = others[static_cast<std::size_t>(c)];
    out[i].pred_class = c;
    out[i].matched_core_mean = mass_on(codes[i], core) / static_cast<double>(core.size());
    out[i].other_core_mean = other.empty() ? 0.0 : mass_on(codes[i], other) / static_cast<double>(other.size());
  }
  return out;
}

std::vector<AffinityStat> affinity_stats(const CapTable& table, const SaeModel& model,
                                         const InputNormalizer& normalizer, const EmbeddingDataset& ds) {
  const auto codes = encode_dataset(model, normalizer, ds);
  return affinity_stats(table, codes, route_samples(table, ds, codes));
}

std::vector<ProfileRow> profile_export(const CapTable& table, std::span<const SparseCode> codes,
                                       std::span<const std::int32_t> routes, std::int32_t class_id, double p) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= table.num_classes()) {
    throw Error(ErrorCode::UnknownClass, "class " + std::to_string(class_id) + " has no CAP");
  }
  if (routes.size() != codes.size()) throw Error(ErrorCode::MissingLabels, "one route per code required");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < routes.size(); ++i) {
    if (routes[i] == class_id) members.push_back(i);
  }
  if (members.empty()) {
    throw Error(ErrorCode::EmptyClass, "no samples routed to class " + std::to_string(class_id));
  }
  const auto sample_mean = mean_activation(codes, members, table.d_latent());
  const auto cap = table.caps.row(static_cast<std::size_t>(class_id));
  const auto order = top_indices_desc(cap, head_size(p, table.d_latent()));
  std::vector<ProfileRow> rows;
  rows.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    rows.push_back({r + 1, order[r], cap[order[r]], sample_mean[order[r]]});
  }
  return rows;
}

std::vector<ProfileRow> profile_export(const CapTable& table, const SaeModel& model,
                                       const InputNormalizer& normalizer, const EmbeddingDataset& ds,
                                       std::int32_t class_id, double p) {
  const auto codes = encode_dataset(model, normalizer, ds);
  return profile_export(table, codes, route_samples(table, ds, codes), class_id, p);
}

// ---------------------------------------------------------------------------

std::string matrix_csv(const Matrix<double>& m) {
  std::string out = "class";
  for (std::size_t j = 0; j < m.cols(); ++j) out += fmt::format(",{}", j);
  out += '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out += fmt::format("{}", i);
    for (std::size_t j = 0; j < m.cols(); ++j) out += fmt::format(",{}", m(i, j));
    out += '\n';
  }
  return out;
}

std::string affinity_csv(std::span<const AffinityStat> stats) {
  std::string out = "index,pred_class,matched_core_mean,other_core_mean\n";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    out += fmt::format("{},{},{},{}\n", i, stats[i].pred_class, stats[i].matched_core_mean, stats[i].other_core_mean);
  }
  return out;
}

std::string profile_csv(std::span<const ProfileRow> rows) {
  std::string out = "rank,id_mean,sample_mean\n";
  for (const auto& r : rows) out += fmt::format("{},{},{}\n", r.rank, r.id_mean, r.sample_mean);
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint8_t kCap1Version = 1;
}  // namespace

std::vector<std::uint8_t> encode_cap1(const CapTable& table) {
  detail::ByteWriter w;
  w.bytes("CAP1");
  w.u8(kCap1Version);
  w.u32(static_cast<std::uint32_t>(table.num_classes()));
  w.u32(static_cast<std::uint32_t>(table.d_latent()));
  w.f32(table.q);
  for (float v : table.caps.values()) w.f32(v);
  for (auto c : table.counts) w.u32(c);
  return w.buffer();
}

CapTable decode_cap1(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "CAP1");
  r.expect_magic("CAP1");
  const auto version = r.u8();
  if (version != kCap1Version) throw Error(ErrorCode::InvalidHeader, "unsupported CAP1 version " + std::to_string(version));
  const std::uint64_t n_classes = r.u32();
  const std::uint64_t d_lat = r.u32();
  const float q = r.f32();
  if (n_classes == 0 || d_lat == 0) throw Error(ErrorCode::InvalidHeader, "CAP1 header declares an empty table");
  if (!(q > 0.0f && q <= 1.0f)) throw Error(ErrorCode::InvalidHeader, "CAP1 q outside (0, 1]");
  r.need(4 * (n_classes * d_lat + n_classes));
  Matrix<float> caps(n_classes, d_lat);
  for (auto& v : caps.values()) v = r.f32();
  std::vector<std::uint32_t> counts(n_classes);
  for (auto& c : counts) c = r.u32();
  return make_cap_table(std::move(caps), std::move(counts), q);
}

void save_caps(const CapTable& table, const std::filesystem::path& path) {
  detail::write_file(path, encode_cap1(table));
}

CapTable load_caps(const std::filesystem::path& path) { return decode_cap1(detail::read_file(path)); }

}  // namespace caps_ood
