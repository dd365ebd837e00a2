#include "caps_ood/synth.hpp"

#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace caps_ood {

namespace {

// RNG stream tags.
constexpr std::uint64_t kStreamDictionary = 1;
constexpr std::uint64_t kStreamTrain = 2;
constexpr std::uint64_t kStreamTest = 3;
constexpr std::uint64_t kStreamOod = 16;

double draw_coefficient(const SynthConfig& cfg, Rng& rng) {
  return cfg.coefficients == Coefficients::Unit ? 1.0 : rng.gamma2();
}

void add_atom(std::vector<double>& x, const Matrix<double>& dict, std::size_t atom, double coef) {
  for (std::size_t d = 0; d < x.size(); ++d) x[d] += coef * dict(d, atom);
}

void add_noise(std::vector<double>& x, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (auto& v : x) v += sigma * rng.normal();
}

// Clean class sample: positive combination of the class's atoms.
std::vector<double> class_signal(const SynthConfig& cfg, const Matrix<double>& dict, std::size_t c, double scale,
                                 Rng& rng) {
  std::vector<double> x(cfg.d_in, 0.0);
  for (std::size_t a = 0; a < cfg.support_size; ++a) {
    add_atom(x, dict, c * cfg.support_size + a, scale * draw_coefficient(cfg, rng));
  }
  return x;
}

void store_row(EmbeddingDataset& ds, std::size_t r, const std::vector<double>& x) {
  auto row = ds.data.row(r);
  for (std::size_t d = 0; d < x.size(); ++d) row[d] = static_cast<float>(x[d]);
}

}  // namespace

std::string to_string(OodMode mode) {
  switch (mode) {
    case OodMode::Diffuse: return "diffuse";
    case OodMode::Mix: return "mix";
    case OodMode::Random: return "random";
  }
  return "diffuse";
}

void validate(const SynthConfig& cfg) {
  if (cfg.d_in < 4) throw Error(ErrorCode::DimTooSmall, "synthetic d_in must be >= 4");
  if (cfg.num_classes < 1 || cfg.support_size < 1 || cfg.n_train_per_class < 1 || cfg.n_test_per_class < 1 ||
      cfg.n_ood < 1) {
    throw Error(ErrorCode::InvalidArgument, "synthetic counts must all be >= 1");
  }
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma)) {
    throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  }
  if (!(cfg.ood_intensity > 0.0 && cfg.ood_intensity <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "ood_intensity must lie in (0, 1]");
  }
  if (!(cfg.ood_leakage >= 0.0) || !std::isfinite(cfg.ood_leakage)) {
    throw Error(ErrorCode::InvalidArgument, "ood_leakage must be >= 0");
  }
}

SynthConfig parse_synth_config(const std::string& json_text) {
  SynthConfig cfg;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    if (!doc.is_object()) throw Error(ErrorCode::ParseError, "synthetic config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "num_classes") cfg.num_classes = value.get<std::size_t>();
      else if (key == "d_in") cfg.d_in = value.get<std::size_t>();
      else if (key == "support_size") cfg.support_size = value.get<std::size_t>();
      else if (key == "n_train_per_class") cfg.n_train_per_class = value.get<std::size_t>();
      else if (key == "n_test_per_class") cfg.n_test_per_class = value.get<std::size_t>();
      else if (key == "n_ood") cfg.n_ood = value.get<std::size_t>();
      else if (key == "noise_sigma") cfg.noise_sigma = value.get<double>();
      else if (key == "ood_intensity") cfg.ood_intensity = value.get<double>();
      else if (key == "ood_leakage") cfg.ood_leakage = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "coefficients") {
        const auto s = value.get<std::string>();
        if (s == "gamma") cfg.coefficients = Coefficients::Gamma;
        else if (s == "unit") cfg.coefficients = Coefficients::Unit;
        else throw Error(ErrorCode::ParseError, "coefficients must be \"gamma\" or \"unit\"");
      } else {
        throw Error(ErrorCode::ParseError, "unknown synthetic config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("synthetic config: ") + ex.what());
  }
  validate(cfg);
  return cfg;
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  nlohmann::ordered_json doc{
      {"num_classes", cfg.num_classes},
      {"d_in", cfg.d_in},
      {"support_size", cfg.support_size},
      {"n_train_per_class", cfg.n_train_per_class},
      {"n_test_per_class", cfg.n_test_per_class},
      {"n_ood", cfg.n_ood},
      {"noise_sigma", cfg.noise_sigma},
      {"ood_intensity", cfg.ood_intensity},
      {"ood_leakage", cfg.ood_leakage},
      {"coefficients", cfg.coefficients == Coefficients::Unit ? "unit" : "gamma"},
      {"seed", cfg.seed},
  };
  return doc.dump(2) + "\n";
}

Matrix<double> gen_dictionary(const SynthConfig& cfg) {
  validate(cfg);
  const auto atoms = cfg.num_classes * cfg.support_size;
  Matrix<double> dict(cfg.d_in, atoms);
  for (std::size_t a = 0; a < atoms; ++a) {
    Rng rng = Rng::substream(cfg.seed, kStreamDictionary, a);
    std::vector<double> col(cfg.d_in);
    double norm = 0.0;
    do {
      for (auto& v : col) v = rng.normal();
      norm = l2_norm(col);
    } while (norm == 0.0);
    for (std::size_t d = 0; d < cfg.d_in; ++d) dict(d, a) = col[d] / norm;
  }
  return dict;
}

std::int32_t nearest_block(const Matrix<double>& dictionary, std::size_t support_size, std::span<const double> x) {
  const auto n_classes = dictionary.cols() / support_size;
  std::int32_t best = 0;
  double best_energy = -1.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    double energy = 0.0;
    for (std::size_t a = c * support_size; a < (c + 1) * support_size; ++a) {
      double proj = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) proj += dictionary(d, a) * x[d];
      energy += proj * proj;
    }
    if (energy > best_energy) {
      best_energy = energy;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

EmbeddingDataset gen_id(const SynthConfig& cfg, IdSplit split) {
  const auto dict = gen_dictionary(cfg);
  const bool train = split == IdSplit::Train;
  const auto per_class = train ? cfg.n_train_per_class : cfg.n_test_per_class;
  const auto stream = train ? kStreamTrain : kStreamTest;
  const auto n = cfg.num_classes * per_class;

  EmbeddingDataset ds;
  ds.name = train ? "id_train" : "id_test";
  ds.data = Matrix<float>(n, cfg.d_in);
  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i / per_class;
    Rng rng = Rng::substream(cfg.seed, stream, i);
    auto x = class_signal(cfg, dict, c, 1.0, rng);
    add_noise(x, cfg.noise_sigma, rng);
    store_row(ds, i, x);
    labels[i] = static_cast<std::int32_t>(c);
  }
  ds.true_labels = labels;
  ds.pred_labels = std::move(labels);
  return ds;
}

EmbeddingDataset gen_ood(const SynthConfig& cfg, OodMode mode) {
  const auto dict = gen_dictionary(cfg);
  const auto n_classes = cfg.num_classes;
  const auto s = cfg.support_size;
  const auto atoms = n_classes * s;
  // Distinct streams per mode and per (intensity, leakage) setting.
  const std::uint64_t stream = kStreamOod + static_cast<std::uint64_t>(mode) +
                               31 * (std::bit_cast<std::uint64_t>(cfg.ood_intensity) ^
                                     std::rotl(std::bit_cast<std::uint64_t>(cfg.ood_leakage), 17));

  EmbeddingDataset ds;
  ds.name = "ood_" + to_string(mode);
  ds.data = Matrix<float>(cfg.n_ood, cfg.d_in);
  Labels pred(cfg.n_ood);
  for (std::size_t i = 0; i < cfg.n_ood; ++i) {
    Rng rng = Rng::substream(cfg.seed, stream, i);
    std::vector<double> x;
    switch (mode) {
      case OodMode::Diffuse: {
        const auto c = static_cast<std::size_t>(rng.below(n_classes));
        x = class_signal(cfg, dict, c, cfg.ood_intensity, rng);
        // 2s distinct atoms outside the class block, fewer if there are not enough.
        const auto foreign = atoms - s;
        const auto n_leak = std::min<std::size_t>(2 * s, foreign);
        std::vector<std::size_t> pool(foreign);
        for (std::size_t a = 0, k = 0; a < atoms; ++a) {
          if (a / s != c) pool[k++] = a;
        }
        for (std::size_t l = 0; l < n_leak; ++l) {
          const auto pick = l + static_cast<std::size_t>(rng.below(foreign - l));
          std::swap(pool[l], pool[pick]);
          add_atom(x, dict, pool[l], 2.0 * cfg.ood_leakage * rng.uniform());
        }
        add_noise(x, cfg.noise_sigma, rng);
        break;
      }
      case OodMode::Mix: {
        const auto c1 = static_cast<std::size_t>(rng.below(n_classes));
        auto c2 = c1;
        if (n_classes > 1) {
          c2 = static_cast<std::size_t>(rng.below(n_classes - 1));
          if (c2 >= c1) ++c2;
        }
        const double w = 0.3 + 0.4 * rng.uniform();
        x = class_signal(cfg, dict, c1, w, rng);
        const auto other = class_signal(cfg, dict, c2, 1.0 - w, rng);
        for (std::size_t d = 0; d < x.size(); ++d) x[d] += other[d];
        add_noise(x, cfg.noise_sigma, rng);
        break;
      }
      case OodMode::Random: {
        // Direction is isotropic; the norm is borrowed from a fresh ID draw.
        const auto c = static_cast<std::size_t>(rng.below(n_classes));
        auto ref = class_signal(cfg, dict, c, 1.0, rng);
        add_noise(ref, cfg.noise_sigma, rng);
        const double target = l2_norm(ref);
        x.assign(cfg.d_in, 0.0);
        double norm = 0.0;
        do {
          for (auto& v : x) v = rng.normal();
          norm = l2_norm(x);
        } while (norm == 0.0);
        for (auto& v : x) v *= target / norm;
        break;
      }
    }
    store_row(ds, i, x);
    pred[i] = nearest_block(dict, s, x);
  }
  ds.pred_labels = std::move(pred);
  return ds;
}

DatasetManifest write_synth_bundle(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  DatasetManifest relative;
  auto emit = [&](const EmbeddingDataset& ds, Role role, std::string notes) {
    const auto file = ds.name + ".emb1";
    write_embeddings(ds, out_dir / file);
    relative.entries.push_back({ds.name, file, role, std::move(notes)});
  };
  emit(gen_id(cfg, IdSplit::Train), Role::IdTrain, "synthetic ID train");
  emit(gen_id(cfg, IdSplit::Test), Role::IdTest, "synthetic ID test");
  emit(gen_ood(cfg, OodMode::Diffuse), Role::Ood, "diffuse: weakened class signal plus foreign leakage");
  emit(gen_ood(cfg, OodMode::Mix), Role::Ood, "mix: convex blend of two classes");
  emit(gen_ood(cfg, OodMode::Random), Role::Ood, "random: isotropic with ID-matched norms");
  const auto text = manifest_to_json(relative);
  detail::write_file(out_dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));

  DatasetManifest resolved = relative;
  for (auto& e : resolved.entries) e.path = out_dir / e.path;
  return resolved;
}

}  // namespace caps_ood
