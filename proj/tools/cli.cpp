#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "caps_ood/caps_ood.hpp"

namespace caps_ood::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void setup_logging(const std::string& level) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("caps-ood");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string log_level = "info";
};

struct GenSynthOptions {
  std::string config;
  std::string out_dir;
};

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::string history;
  std::size_t d_latent = 0;
  std::size_t k = 0;
  std::size_t epochs = 100;
  std::size_t batch = 0;
  double alpha = 1.0 / 32.0;
  double lr = 1e-3;
  std::size_t k_aux = 0;
  std::size_t dead_window = 0;
  std::optional<std::uint64_t> seed;
};

struct CapsOptions {
  std::string model;
  std::string manifest;
  double q = 0.05;
  std::string out;
};

struct ScoreOptions {
  std::string model;
  std::string caps;
  std::string data;
  std::string manifest;
  std::string metric = "epd";
  double p = 0.15;
  double epsilon = 1e-10;
  std::string out;
  std::string csv;
};

struct AnalyzeOptions {
  std::string caps;
  std::string kind;
  std::string model;
  std::string data;
  std::int32_t class_id = 0;
  double p = 0.15;
  std::string out;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& local, const GlobalOptions& global) {
  if (local) return *local;
  if (global.seed) return *global.seed;
  return 42;
}

ScoreConfig score_config(const ScoreOptions& o) {
  ScoreConfig cfg;
  cfg.metric = parse_metric(o.metric);
  cfg.p = o.p;
  cfg.epsilon = o.epsilon;
  validate(cfg);
  return cfg;
}

void cmd_gen_synth(const GenSynthOptions& o, const GlobalOptions& g) {
  SynthConfig cfg = o.config.empty() ? SynthConfig{} : parse_synth_config(read_text(o.config));
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);
  spdlog::info("synthetic config:\n{}", synth_config_to_json(cfg));
  const auto manifest = write_synth_bundle(cfg, o.out_dir);
  for (const auto& e : manifest.entries) spdlog::info("wrote {} ({})", e.path.string(), to_string(e.role));
}

void cmd_train(const TrainOptions& o, const GlobalOptions& g) {
  const auto manifest = load_manifest(o.manifest);
  const auto train_ds = read_embeddings(manifest.id_train().path);
  TrainConfig cfg;
  cfg.d_latent = o.d_latent;
  cfg.k = o.k;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.alpha = o.alpha;
  cfg.lr = o.lr;
  cfg.k_aux = o.k_aux;
  cfg.dead_window = o.dead_window;
  cfg.seed = resolve_seed(o.seed, g);
  const auto r = resolve(cfg, train_ds.dim(), train_ds.size());
  spdlog::info(
      "train: n={} D_in={} D_latent={} k={} epochs={} batch={} lr={} alpha={} k_aux={} dead_window={} seed={}",
      train_ds.size(), train_ds.dim(), r.d_latent, r.k, r.epochs, r.batch_size, r.lr, r.alpha, r.k_aux,
      r.dead_window, r.seed);

  const auto result = train(train_ds, cfg, [&](std::size_t epoch, const EpochStats& s) {
    const bool milestone = epoch == 0 || (epoch + 1) % 10 == 0 || epoch + 1 == r.epochs;
    spdlog::log(milestone ? spdlog::level::info : spdlog::level::debug,
                "epoch {:>4}  recon {:.6f}  aux {:.6f}  dead {}", epoch + 1, s.recon, s.aux, s.dead);
  });
  spdlog::info("recon loss {:.6f} -> {:.6f}", result.initial_recon, result.history.back().recon);

  ensure_parent(o.out);
  save_model({result.model, result.normalizer}, o.out);
  spdlog::info("wrote {}", o.out);
  if (!o.history.empty()) {
    std::string csv = "epoch,recon,aux,total,dead\n";
    for (std::size_t e = 0; e < result.history.size(); ++e) {
      const auto& s = result.history[e];
      csv += fmt::format("{},{},{},{},{}\n", e + 1, s.recon, s.aux, s.total, s.dead);
    }
    write_text(o.history, csv);
  }
}

void cmd_caps(const CapsOptions& o) {
  const auto ckpt = load_model(o.model);
  const auto manifest = load_manifest(o.manifest);
  const auto train_ds = read_embeddings(manifest.id_train().path);
  const auto table = build_caps(ckpt.model, ckpt.normalizer, train_ds, o.q);
  spdlog::info("built {} CAPs over {} latents, core-set size {}", table.num_classes(), table.d_latent(),
               table.core_sets.front().size());
  ensure_parent(o.out);
  save_caps(table, o.out);
  spdlog::info("wrote {}", o.out);
}

void cmd_score(const ScoreOptions& o) {
  const auto cfg = score_config(o);
  const auto ckpt = load_model(o.model);
  const auto table = load_caps(o.caps);
  const auto ds = read_embeddings(o.data);
  const auto scores = score_dataset(table, ckpt.model, ckpt.normalizer, ds, cfg);
  write_text(o.out, scores_csv(scores));
  spdlog::info("scored {} samples with {} (p={}) -> {}", ds.size(), to_string(cfg.metric), cfg.p, o.out);
}

void cmd_eval(const ScoreOptions& o) {
  const auto cfg = score_config(o);
  const auto ckpt = load_model(o.model);
  const auto table = load_caps(o.caps);
  const auto manifest = load_manifest(o.manifest);
  const auto report = evaluate(manifest, ckpt, table, cfg);
  for (const auto& r : report.datasets) {
    spdlog::info("{:<16} AUROC {:.4f}  FPR95 {:.4f}  (n_id={}, n_ood={})", r.name, r.auroc, r.fpr95, r.n_id, r.n_ood);
  }
  spdlog::info("{:<16} AUROC {:.4f}  FPR95 {:.4f}", "average", report.average_auroc, report.average_fpr95);
  write_text(o.out, report_json(report));
  fs::path csv = o.csv.empty() ? fs::path(o.out).replace_extension(".csv") : fs::path(o.csv);
  write_text(csv, report_csv(report));
  spdlog::info("wrote {} and {}", o.out, csv.string());
}

void cmd_analyze(const AnalyzeOptions& o) {
  const auto table = load_caps(o.caps);
  std::string csv;
  if (o.kind == "jaccard") {
    csv = matrix_csv(jaccard_matrix(table));
  } else if (o.kind == "cosine") {
    csv = matrix_csv(cap_cosine_matrix(table));
  } else {
    if (o.model.empty() || o.data.empty()) {
      throw Error(ErrorCode::InvalidArgument, "analyze " + o.kind + " needs --model and --data");
    }
    const auto ckpt = load_model(o.model);
    const auto ds = read_embeddings(o.data);
    if (o.kind == "affinity") {
      csv = affinity_csv(affinity_stats(table, ckpt.model, ckpt.normalizer, ds));
    } else {
      if (!(o.p > 0.0 && o.p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "--p must lie in (0, 1]");
      csv = profile_csv(profile_export(table, ckpt.model, ckpt.normalizer, ds, o.class_id, o.p));
    }
  }
  write_text(o.out, csv);
  spdlog::info("wrote {} analysis to {}", o.kind, o.out);
}

const auto kUnitInterval = CLI::Range(0.0, 1.0);

void add_score_flags(CLI::App* sub, ScoreOptions& o) {
  sub->add_option("--model", o.model, "SAE1 checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--caps", o.caps, "CAP1 table")->required()->check(CLI::ExistingFile);
  sub->add_option("--metric", o.metric, "Scoring metric")
      ->capture_default_str()
      ->check(CLI::IsMember({"epd", "euclidean", "cosine"}));
  sub->add_option("--p", o.p, "Activation head fraction, L = ceil(p * D_latent)")
      ->capture_default_str()
      ->check(kUnitInterval);
  sub->add_option("--epsilon", o.epsilon, "Profile smoothing constant")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"caps-ood: Top-k SAE class activation profiles and EPD out-of-distribution scoring", "caps-ood"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Global RNG seed (default 42)");
  app.add_option("--threads", global.threads, "Worker threads; results do not depend on it")
      ->capture_default_str()
      ->check(CLI::Range(1u, 1024u));
  app.add_option("--log-level", global.log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  GenSynthOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write the synthetic benchmark splits and manifest");
  gen_cmd->add_option("--config", gen.config, "Synthetic config JSON (defaults when omitted)")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the Top-k SAE on the manifest's id_train split");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Output SAE1 checkpoint")->required();
  train_cmd->add_option("--d-latent", tr.d_latent, "Latent width (0: 10 x D_in)")->capture_default_str();
  train_cmd->add_option("--k", tr.k, "Active latents per sample (0: 8 if D_in <= 64, else 128)")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tr.batch, "Batch size (0: 256 if D_in <= 64, else 4096)")->capture_default_str();
  train_cmd->add_option("--alpha", tr.alpha, "AuxK loss weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--k-aux", tr.k_aux, "Dead latents used by AuxK (0: 2k)")->capture_default_str();
  train_cmd->add_option("--dead-window", tr.dead_window, "Samples without firing before a latent is dead (0: max(10 x batch, n))")
      ->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "RNG seed (overrides the global seed)");
  train_cmd->add_option("--history", tr.history, "Optional per-epoch loss CSV");

  CapsOptions cp;
  auto* caps_cmd = app.add_subcommand("caps", "Build class activation profiles from id_train");
  caps_cmd->add_option("--model", cp.model, "SAE1 checkpoint")->required()->check(CLI::ExistingFile);
  caps_cmd->add_option("--manifest", cp.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  caps_cmd->add_option("--q", cp.q, "Core-set fraction")->capture_default_str()->check(kUnitInterval);
  caps_cmd->add_option("--out", cp.out, "Output CAP1 file")->required();

  ScoreOptions sc;
  auto* score_cmd = app.add_subcommand("score", "Score one EMB1 dataset");
  add_score_flags(score_cmd, sc);
  score_cmd->add_option("--data", sc.data, "EMB1 dataset")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", sc.out, "Output CSV (index,pred_class,score)")->required();

  ScoreOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "AUROC/FPR95 of id_test against every ood entry");
  add_score_flags(eval_cmd, ev);
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Output report JSON")->required();
  eval_cmd->add_option("--csv", ev.csv, "Flat CSV report (default: --out with .csv extension)");

  AnalyzeOptions an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Export structural statistics of a CAP table as CSV");
  analyze_cmd->add_option("--caps", an.caps, "CAP1 table")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("kind", an.kind, "jaccard | cosine | affinity | profile")
      ->required()
      ->check(CLI::IsMember({"jaccard", "cosine", "affinity", "profile"}));
  analyze_cmd->add_option("--model", an.model, "SAE1 checkpoint (affinity, profile)")->check(CLI::ExistingFile);
  analyze_cmd->add_option("--data", an.data, "EMB1 dataset (affinity, profile)")->check(CLI::ExistingFile);
  analyze_cmd->add_option("--class", an.class_id, "Class id (profile)")->capture_default_str();
  analyze_cmd->add_option("--p", an.p, "Head fraction exported (profile)")->capture_default_str()->check(kUnitInterval);
  analyze_cmd->add_option("--out", an.out, "Output CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "caps-ood: " << e.what() << "\n" << "Run with --help for usage.\n";
    return kUsageError;
  }

  try {
    setup_logging(global.log_level);
    set_num_threads(global.threads);
    const auto* sub = app.get_subcommands().front();
    spdlog::info("caps-ood {} (seed={}, threads={}, log-level={}) with resolved flags:\n{}", sub->get_name(),
                 global.seed ? std::to_string(*global.seed) : "default", global.threads, global.log_level,
                 sub->config_to_str(true, false));

    if (sub == gen_cmd) cmd_gen_synth(gen, global);
    else if (sub == train_cmd) cmd_train(tr, global);
    else if (sub == caps_cmd) cmd_caps(cp);
    else if (sub == score_cmd) cmd_score(sc);
    else if (sub == eval_cmd) cmd_eval(ev);
    else if (sub == analyze_cmd) cmd_analyze(an);
    return kOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    switch (e.kind()) {
      case ErrorKind::Usage: return kUsageError;
      case ErrorKind::Numerical: return kNumericalError;
      case ErrorKind::Data: return kDataError;
    }
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
}

}  // namespace caps_ood::cli
