#include "caps_ood/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "binary_io.hpp"

namespace caps_ood {

namespace {

// Row partition used for every batched pass. Fixed so that reductions over
// chunk results do not depend on the thread count.
constexpr std::size_t kChunkRows = 64;

std::size_t chunk_count(std::size_t n) { return (n + kChunkRows - 1) / kChunkRows; }

template <typename T>
double row_dot(std::span<const T> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(w[i]) * x[i];
  return s;
}

}  // namespace

template <typename T>
void validate(const BasicSaeModel<T>& m) {
  const auto d_in = m.d_in();
  const auto d_lat = m.d_latent();
  if (d_in == 0 || d_lat == 0) throw Error(ErrorCode::InvalidHeader, "SAE has an empty dimension");
  if (m.k < 1 || m.k > d_lat) {
    throw Error(ErrorCode::InvalidHeader, "k=" + std::to_string(m.k) + " outside [1, D_latent]");
  }
  if (m.b_enc.size() != d_lat || m.w_dec.rows() != d_in || m.w_dec.cols() != d_lat || m.b_dec.size() != d_in) {
    throw Error(ErrorCode::InvalidHeader, "SAE parameter shapes are inconsistent");
  }
}

template void validate(const BasicSaeModel<float>&);
template void validate(const BasicSaeModel<double>&);

// ---------------------------------------------------------------------------

std::vector<double> InputNormalizer::apply(std::span<const float> raw) const {
  if (raw.size() != mean.size()) throw Error(ErrorCode::ShapeMismatch, "input dimension differs from normalizer");
  std::vector<double> x(raw.size());
  const double s = scale;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    x[i] = (static_cast<double>(raw[i]) - static_cast<double>(mean[i])) / s;
  }
  return x;
}

InputNormalizer fit_normalizer(const EmbeddingDataset& train) {
  const auto n = train.size();
  const auto d = train.dim();
  if (n == 0 || d == 0) throw Error(ErrorCode::EmptyDataset, "cannot fit normalizer on an empty dataset");
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = train.data.row(r);
    for (std::size_t i = 0; i < d; ++i) mean[i] += row[i];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  InputNormalizer out;
  out.mean.assign(mean.begin(), mean.end());
  // Center against the stored float mean so apply() sees the same offsets.
  double norm_sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = train.data.row(r);
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = static_cast<double>(row[i]) - static_cast<double>(out.mean[i]);
      sq += c * c;
    }
    norm_sum += std::sqrt(sq);
  }
  out.scale = static_cast<float>(std::max(norm_sum / static_cast<double>(n), 1e-12));
  return out;
}

Matrix<double> normalize_rows(const InputNormalizer& normalizer, const EmbeddingDataset& ds) {
  Matrix<double> out(ds.size(), ds.dim());
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto x = normalizer.apply(ds.data.row(r));
    std::copy(x.begin(), x.end(), out.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> SparseCode::dense() const {
  std::vector<double> out(d_latent, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) out[indices[i]] = values[i];
  return out;
}

double SparseCode::at(std::uint32_t j) const {
  const auto it = std::lower_bound(indices.begin(), indices.end(), j);
  if (it == indices.end() || *it != j) return 0.0;
  return values[static_cast<std::size_t>(it - indices.begin())];
}

namespace {

std::vector<std::uint32_t> top_k_of_candidates(std::span<const double> z, std::vector<std::uint32_t> cand,
                                               std::size_t k) {
  if (cand.size() > k) {
    auto before = [&](std::uint32_t a, std::uint32_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); };
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), before);
    cand.resize(k);
  }
  std::sort(cand.begin(), cand.end());
  return cand;
}

}  // namespace

std::vector<std::uint32_t> top_k_positive(std::span<const double> z, std::size_t k) {
  std::vector<std::uint32_t> cand;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (z[j] > 0.0) cand.push_back(static_cast<std::uint32_t>(j));
  }
  return top_k_of_candidates(z, std::move(cand), k);
}

std::vector<std::uint32_t> top_k_positive_masked(std::span<const double> z, std::span<const std::uint8_t> mask,
                                                 std::size_t k) {
  if (mask.size() != z.size()) throw Error(ErrorCode::ShapeMismatch, "mask length differs from D_latent");
  std::vector<std::uint32_t> cand;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (mask[j] && z[j] > 0.0) cand.push_back(static_cast<std::uint32_t>(j));
  }
  return top_k_of_candidates(z, std::move(cand), k);
}

template <typename T>
std::vector<double> pre_activations(const BasicSaeModel<T>& model, std::span<const double> x) {
  if (x.size() != model.d_in()) throw Error(ErrorCode::ShapeMismatch, "encode: input length differs from D_in");
  std::vector<double> z(model.d_latent());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = row_dot<T>(model.w_enc.row(j), x) + static_cast<double>(model.b_enc[j]);
  }
  return z;
}

template <typename T>
SparseCode encode(const BasicSaeModel<T>& model, std::span<const double> x) {
  const auto z = pre_activations(model, x);
  SparseCode code;
  code.d_latent = model.d_latent();
  code.indices = top_k_positive(z, model.k);
  code.values.reserve(code.indices.size());
  for (auto j : code.indices) code.values.push_back(z[j]);
  return code;
}

template <typename T>
std::vector<double> decode(const BasicSaeModel<T>& model, const SparseCode& code) {
  if (code.d_latent != model.d_latent() || code.indices.size() != code.values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "decode: code does not match model");
  }
  std::vector<double> out(model.b_dec.begin(), model.b_dec.end());
  for (std::size_t a = 0; a < code.indices.size(); ++a) {
    const auto j = code.indices[a];
    if (j >= model.d_latent()) throw Error(ErrorCode::ShapeMismatch, "decode: latent index out of range");
    const double v = code.values[a];
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += v * static_cast<double>(model.w_dec(d, j));
  }
  return out;
}

template std::vector<double> pre_activations(const BasicSaeModel<float>&, std::span<const double>);
template std::vector<double> pre_activations(const BasicSaeModel<double>&, std::span<const double>);
template SparseCode encode(const BasicSaeModel<float>&, std::span<const double>);
template SparseCode encode(const BasicSaeModel<double>&, std::span<const double>);
template std::vector<double> decode(const BasicSaeModel<float>&, const SparseCode&);
template std::vector<double> decode(const BasicSaeModel<double>&, const SparseCode&);

std::vector<SparseCode> encode_dataset(const SaeModel& model, const InputNormalizer& normalizer,
                                       const EmbeddingDataset& ds) {
  if (ds.dim() != model.d_in()) throw Error(ErrorCode::ShapeMismatch, "dataset dimension differs from SAE D_in");
  std::vector<SparseCode> codes(ds.size());
  parallel_for(chunk_count(ds.size()), [&](std::size_t c) {
    const auto end = std::min(ds.size(), (c + 1) * kChunkRows);
    for (std::size_t r = c * kChunkRows; r < end; ++r) codes[r] = encode(model, normalizer.apply(ds.data.row(r)));
  });
  return codes;
}

// ---------------------------------------------------------------------------

SaeGradients SaeGradients::zeros(std::size_t d_in, std::size_t d_latent) {
  return {Matrix<double>(d_latent, d_in), std::vector<double>(d_latent), Matrix<double>(d_in, d_latent),
          std::vector<double>(d_in)};
}

template <typename T>
std::vector<ActiveSet> select_active_sets(const BasicSaeModel<T>& model, const Matrix<double>& inputs,
                                          std::span<const std::size_t> rows,
                                          std::span<const std::uint8_t> dead_mask, std::size_t k_aux) {
  std::size_t n_dead = 0;
  if (!dead_mask.empty()) {
    if (dead_mask.size() != model.d_latent()) throw Error(ErrorCode::ShapeMismatch, "dead mask length differs from D_latent");
    n_dead = static_cast<std::size_t>(std::count_if(dead_mask.begin(), dead_mask.end(), [](auto v) { return v != 0; }));
  }
  const std::size_t k_aux_eff = std::min(k_aux, n_dead);
  std::vector<ActiveSet> out(rows.size());
  parallel_for(chunk_count(rows.size()), [&](std::size_t c) {
    const auto end = std::min(rows.size(), (c + 1) * kChunkRows);
    for (std::size_t i = c * kChunkRows; i < end; ++i) {
      const auto z = pre_activations(model, inputs.row(rows[i]));
      out[i].topk = top_k_positive(z, model.k);
      if (n_dead > 0) {
        out[i].aux_enabled = true;
        if (k_aux_eff > 0) out[i].aux = top_k_positive_masked(z, dead_mask, k_aux_eff);
      }
    }
  });
  return out;
}

namespace {

// Per-chunk gradient scratch. Encoder rows and decoder columns are stored
// latent-major and only touched latents are merged and cleared.
struct ChunkScratch {
  ChunkScratch(std::size_t d_in, std::size_t d_latent)
      : enc(d_latent * d_in), dec(d_latent * d_in), b_enc(d_latent), b_dec(d_in), seen(d_latent) {}

  void touch(std::uint32_t j) {
    if (!seen[j]) {
      seen[j] = 1;
      touched.push_back(j);
    }
  }

  std::vector<double> enc, dec, b_enc, b_dec;
  std::vector<std::uint8_t> seen;
  std::vector<std::uint32_t> touched;
  double recon = 0.0;
  double aux = 0.0;
};

}  // namespace

template <typename T>
LossParts loss_with_active_sets(const BasicSaeModel<T>& model, const Matrix<double>& inputs,
                                std::span<const std::size_t> rows, std::span<const ActiveSet> active,
                                double alpha, SaeGradients* grads) {
  const std::size_t d_in = model.d_in();
  const std::size_t d_lat = model.d_latent();
  if (inputs.cols() != d_in) throw Error(ErrorCode::ShapeMismatch, "loss: input width differs from D_in");
  if (active.size() != rows.size()) throw Error(ErrorCode::ShapeMismatch, "loss: one active set per row required");
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "loss: empty batch");
  if (grads) {
    if (grads->w_enc.rows() != d_lat || grads->w_enc.cols() != d_in || grads->w_dec.rows() != d_in ||
        grads->w_dec.cols() != d_lat || grads->b_enc.size() != d_lat || grads->b_dec.size() != d_in) {
      throw Error(ErrorCode::ShapeMismatch, "loss: gradient buffers do not match model");
    }
  }

  const double batch = static_cast<double>(rows.size());
  const double c = 2.0 / (batch * static_cast<double>(d_in));
  const std::size_t n_chunks = chunk_count(rows.size());
  const std::size_t wave = std::max<std::size_t>(1, num_threads());

  std::vector<ChunkScratch> scratch;
  scratch.reserve(std::min(wave, n_chunks));
  for (std::size_t w = 0; w < std::min(wave, n_chunks); ++w) {
    scratch.emplace_back(grads ? d_in : 0, grads ? d_lat : 0);
  }

  auto run_chunk = [&](std::size_t chunk, ChunkScratch& s) {
    std::vector<double> xhat(d_in), e(d_in), r(d_in), g_xhat(d_in), g_ehat(d_in);
    std::vector<double> h_top, h_aux;
    const auto end = std::min(rows.size(), (chunk + 1) * kChunkRows);
    for (std::size_t i = chunk * kChunkRows; i < end; ++i) {
      const auto x = inputs.row(rows[i]);
      const auto& set = active[i];

      for (std::size_t d = 0; d < d_in; ++d) xhat[d] = static_cast<double>(model.b_dec[d]);
      h_top.resize(set.topk.size());
      for (std::size_t a = 0; a < set.topk.size(); ++a) {
        const auto j = set.topk[a];
        h_top[a] = row_dot<T>(model.w_enc.row(j), x) + static_cast<double>(model.b_enc[j]);
        for (std::size_t d = 0; d < d_in; ++d) xhat[d] += h_top[a] * static_cast<double>(model.w_dec(d, j));
      }
      double sq = 0.0;
      for (std::size_t d = 0; d < d_in; ++d) {
        e[d] = x[d] - xhat[d];
        sq += e[d] * e[d];
      }
      s.recon += sq / static_cast<double>(d_in);

      if (set.aux_enabled) {
        r = e;
        h_aux.resize(set.aux.size());
        for (std::size_t a = 0; a < set.aux.size(); ++a) {
          const auto j = set.aux[a];
          h_aux[a] = row_dot<T>(model.w_enc.row(j), x) + static_cast<double>(model.b_enc[j]);
          for (std::size_t d = 0; d < d_in; ++d) r[d] -= h_aux[a] * static_cast<double>(model.w_dec(d, j));
        }
        double sq_aux = 0.0;
        for (std::size_t d = 0; d < d_in; ++d) sq_aux += r[d] * r[d];
        s.aux += sq_aux / static_cast<double>(d_in);
      }

      if (!grads) continue;

      for (std::size_t d = 0; d < d_in; ++d) {
        g_xhat[d] = -c * (e[d] + (set.aux_enabled ? alpha * r[d] : 0.0));
        g_ehat[d] = set.aux_enabled ? -c * alpha * r[d] : 0.0;
        s.b_dec[d] += g_xhat[d];
      }
      auto backprop = [&](std::uint32_t j, double h, const std::vector<double>& g) {
        double dz = 0.0;
        double* dec = s.dec.data() + static_cast<std::size_t>(j) * d_in;
        for (std::size_t d = 0; d < d_in; ++d) {
          dec[d] += h * g[d];
          dz += static_cast<double>(model.w_dec(d, j)) * g[d];
        }
        double* enc = s.enc.data() + static_cast<std::size_t>(j) * d_in;
        for (std::size_t d = 0; d < d_in; ++d) enc[d] += dz * x[d];
        s.b_enc[j] += dz;
        s.touch(j);
      };
      for (std::size_t a = 0; a < set.topk.size(); ++a) backprop(set.topk[a], h_top[a], g_xhat);
      if (set.aux_enabled) {
        for (std::size_t a = 0; a < set.aux.size(); ++a) backprop(set.aux[a], h_aux[a], g_ehat);
      }
    }
  };

  double recon_sum = 0.0;
  double aux_sum = 0.0;
  for (std::size_t first = 0; first < n_chunks; first += wave) {
    const std::size_t count = std::min(wave, n_chunks - first);
    parallel_for(count, [&](std::size_t w) { run_chunk(first + w, scratch[w]); });
    // Merge in chunk order.
    for (std::size_t w = 0; w < count; ++w) {
      auto& s = scratch[w];
      recon_sum += s.recon;
      aux_sum += s.aux;
      s.recon = s.aux = 0.0;
      if (!grads) continue;
      for (std::size_t d = 0; d < d_in; ++d) {
        grads->b_dec[d] += s.b_dec[d];
        s.b_dec[d] = 0.0;
      }
      for (auto j : s.touched) {
        double* enc = s.enc.data() + static_cast<std::size_t>(j) * d_in;
        double* dec = s.dec.data() + static_cast<std::size_t>(j) * d_in;
        auto grow = grads->w_enc.row(j);
        for (std::size_t d = 0; d < d_in; ++d) {
          grow[d] += enc[d];
          grads->w_dec(d, j) += dec[d];
          enc[d] = dec[d] = 0.0;
        }
        grads->b_enc[j] += s.b_enc[j];
        s.b_enc[j] = 0.0;
        s.seen[j] = 0;
      }
      s.touched.clear();
    }
  }

  LossParts parts;
  parts.recon = recon_sum / batch;
  parts.aux = aux_sum / batch;
  parts.total = parts.recon + alpha * parts.aux;
  return parts;
}

template <typename T>
LossParts loss(const BasicSaeModel<T>& model, const Matrix<double>& batch, std::span<const std::uint8_t> dead_mask,
               double alpha, std::size_t k_aux) {
  std::vector<std::size_t> rows(batch.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto active = select_active_sets(model, batch, rows, dead_mask, k_aux);
  return loss_with_active_sets(model, batch, rows, active, alpha);
}

template std::vector<ActiveSet> select_active_sets(const BasicSaeModel<float>&, const Matrix<double>&,
                                                   std::span<const std::size_t>, std::span<const std::uint8_t>,
                                                   std::size_t);
template std::vector<ActiveSet> select_active_sets(const BasicSaeModel<double>&, const Matrix<double>&,
                                                   std::span<const std::size_t>, std::span<const std::uint8_t>,
                                                   std::size_t);
template LossParts loss_with_active_sets(const BasicSaeModel<float>&, const Matrix<double>&,
                                         std::span<const std::size_t>, std::span<const ActiveSet>, double,
                                         SaeGradients*);
template LossParts loss_with_active_sets(const BasicSaeModel<double>&, const Matrix<double>&,
                                         std::span<const std::size_t>, std::span<const ActiveSet>, double,
                                         SaeGradients*);
template LossParts loss(const BasicSaeModel<float>&, const Matrix<double>&, std::span<const std::uint8_t>, double,
                        std::size_t);
template LossParts loss(const BasicSaeModel<double>&, const Matrix<double>&, std::span<const std::uint8_t>, double,
                        std::size_t);

// ---------------------------------------------------------------------------

TrainConfig resolve(TrainConfig cfg, std::size_t d_in, std::size_t n) {
  const bool desk = d_in <= 64;
  if (cfg.d_latent == 0) cfg.d_latent = 10 * d_in;
  if (cfg.k == 0) cfg.k = std::min<std::size_t>(desk ? 8 : 128, cfg.d_latent);
  if (cfg.batch_size == 0) cfg.batch_size = desk ? 256 : 4096;
  if (cfg.k_aux == 0) cfg.k_aux = 2 * cfg.k;
  if (cfg.dead_window == 0) cfg.dead_window = std::max(10 * cfg.batch_size, n);

  if (cfg.k > cfg.d_latent) throw Error(ErrorCode::InvalidArgument, "k must not exceed D_latent");
  if (cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw Error(ErrorCode::InvalidArgument, "lr must be > 0");
  return cfg;
}

SaeModel init_model(std::size_t d_in, std::size_t d_latent, std::size_t k, std::uint64_t seed) {
  auto model = SaeModel::zeros(d_in, d_latent, k);
  Rng rng(seed);
  for (std::size_t j = 0; j < d_latent; ++j) {
    std::vector<double> col(d_in);
    double norm = 0.0;
    do {
      for (auto& v : col) v = rng.normal();
      norm = l2_norm(col);
    } while (norm == 0.0);
    for (std::size_t d = 0; d < d_in; ++d) {
      const auto v = static_cast<float>(col[d] / norm);
      model.w_dec(d, j) = v;
      model.w_enc(j, d) = v;
    }
  }
  validate(model);
  return model;
}

template <typename T>
void normalize_decoder_columns(BasicSaeModel<T>& model) {
  for (std::size_t j = 0; j < model.d_latent(); ++j) {
    double sq = 0.0;
    for (std::size_t d = 0; d < model.d_in(); ++d) {
      const double v = model.w_dec(d, j);
      sq += v * v;
    }
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t d = 0; d < model.d_in(); ++d) {
      model.w_dec(d, j) = static_cast<T>(static_cast<double>(model.w_dec(d, j)) * inv);
    }
  }
}

template void normalize_decoder_columns(BasicSaeModel<float>&);
template void normalize_decoder_columns(BasicSaeModel<double>&);

TrainResult train(const EmbeddingDataset& train_ds, const TrainConfig& cfg_in, const EpochCallback& on_epoch) {
  if (train_ds.size() == 0 || train_ds.dim() == 0) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  validate(train_ds);
  const std::size_t n = train_ds.size();
  const std::size_t d_in = train_ds.dim();

  TrainResult result;
  result.config = resolve(cfg_in, d_in, n);
  const auto& cfg = result.config;
  result.normalizer = fit_normalizer(train_ds);
  const auto inputs = normalize_rows(result.normalizer, train_ds);

  // Distinct streams for initialization and shuffling.
  result.model = init_model(d_in, cfg.d_latent, cfg.k, Rng::substream(cfg.seed, 1, 0).next_u64());
  Rng shuffle_rng = Rng::substream(cfg.seed, 2, 0);
  auto& model = result.model;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  result.initial_recon = loss_with_active_sets(model, inputs, order, select_active_sets(model, inputs, order, {}, 0),
                                               0.0).recon;

  const AdamHyper hyper{cfg.lr, 0.9, 0.999, 1e-8};
  AdamState st_w_enc(cfg.d_latent, d_in, hyper), st_b_enc(1, cfg.d_latent, hyper);
  AdamState st_w_dec(d_in, cfg.d_latent, hyper), st_b_dec(1, d_in, hyper);

  std::vector<std::size_t> since_fired(cfg.d_latent, 0);
  std::vector<std::uint8_t> dead(cfg.d_latent, 0);
  std::vector<std::uint8_t> fired(cfg.d_latent, 0);
  auto grads = SaeGradients::zeros(d_in, cfg.d_latent);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochStats stats;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, n - start));
      for (std::size_t j = 0; j < cfg.d_latent; ++j) dead[j] = since_fired[j] >= cfg.dead_window ? 1 : 0;

      const auto active = select_active_sets(model, inputs, rows, dead, cfg.k_aux);
      grads.w_enc = Matrix<double>(cfg.d_latent, d_in);
      grads.w_dec = Matrix<double>(d_in, cfg.d_latent);
      std::fill(grads.b_enc.begin(), grads.b_enc.end(), 0.0);
      std::fill(grads.b_dec.begin(), grads.b_dec.end(), 0.0);
      const auto parts = loss_with_active_sets(model, inputs, rows, active, cfg.alpha, &grads);
      if (!std::isfinite(parts.total)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                                  ": recon=" + std::to_string(parts.recon) +
                                                  " aux=" + std::to_string(parts.aux));
      }

      adam_update<float>(model.w_enc.values(), grads.w_enc.values(), st_w_enc);
      adam_update<float>(model.b_enc, grads.b_enc, st_b_enc);
      adam_update<float>(model.w_dec.values(), grads.w_dec.values(), st_w_dec);
      adam_update<float>(model.b_dec, grads.b_dec, st_b_dec);
      normalize_decoder_columns(model);

      std::fill(fired.begin(), fired.end(), 0);
      for (const auto& set : active) {
        for (auto j : set.topk) fired[j] = 1;
      }
      for (std::size_t j = 0; j < cfg.d_latent; ++j) since_fired[j] = fired[j] ? 0 : since_fired[j] + rows.size();

      const double w = static_cast<double>(rows.size()) / static_cast<double>(n);
      stats.recon += w * parts.recon;
      stats.aux += w * parts.aux;
      stats.total += w * parts.total;
      ++step;
    }
    stats.dead = static_cast<std::size_t>(
        std::count_if(since_fired.begin(), since_fired.end(), [&](auto s) { return s >= cfg.dead_window; }));
    result.history.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint8_t kSae1Version = 1;
}  // namespace

std::vector<std::uint8_t> encode_sae1(const SaeCheckpoint& ckpt) {
  const auto& m = ckpt.model;
  validate(m);
  if (ckpt.normalizer.mean.size() != m.d_in()) {
    throw Error(ErrorCode::ShapeMismatch, "normalizer dimension differs from SAE D_in");
  }
  detail::ByteWriter w;
  w.bytes("SAE1");
  w.u8(kSae1Version);
  w.u32(static_cast<std::uint32_t>(m.d_in()));
  w.u32(static_cast<std::uint32_t>(m.d_latent()));
  w.u32(static_cast<std::uint32_t>(m.k));
  for (float v : m.w_enc.values()) w.f32(v);
  for (float v : m.b_enc) w.f32(v);
  for (float v : m.w_dec.values()) w.f32(v);
  for (float v : m.b_dec) w.f32(v);
  for (float v : ckpt.normalizer.mean) w.f32(v);
  w.f32(ckpt.normalizer.scale);
  return w.buffer();
}

SaeCheckpoint decode_sae1(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "SAE1");
  r.expect_magic("SAE1");
  const auto version = r.u8();
  if (version != kSae1Version) throw Error(ErrorCode::InvalidHeader, "unsupported SAE1 version " + std::to_string(version));
  const std::uint64_t d_in = r.u32();
  const std::uint64_t d_lat = r.u32();
  const std::uint64_t k = r.u32();
  if (d_in == 0 || d_lat == 0) throw Error(ErrorCode::InvalidHeader, "SAE1 header declares an empty dimension");
  if (k < 1 || k > d_lat) throw Error(ErrorCode::InvalidHeader, "SAE1 header k outside [1, D_latent]");
  r.need(4 * (2 * d_in * d_lat + d_lat + 2 * d_in + 1));

  SaeCheckpoint ckpt;
  auto& m = ckpt.model;
  m = SaeModel::zeros(d_in, d_lat, k);
  for (auto& v : m.w_enc.values()) v = r.f32();
  for (auto& v : m.b_enc) v = r.f32();
  for (auto& v : m.w_dec.values()) v = r.f32();
  for (auto& v : m.b_dec) v = r.f32();
  ckpt.normalizer.mean.resize(d_in);
  for (auto& v : ckpt.normalizer.mean) v = r.f32();
  ckpt.normalizer.scale = r.f32();
  if (!(ckpt.normalizer.scale > 0.0f)) throw Error(ErrorCode::InvalidHeader, "SAE1 normalizer scale must be > 0");
  return ckpt;
}

void save_model(const SaeCheckpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path, encode_sae1(ckpt));
}

SaeCheckpoint load_model(const std::filesystem::path& path) { return decode_sae1(detail::read_file(path)); }

}  // namespace caps_ood
