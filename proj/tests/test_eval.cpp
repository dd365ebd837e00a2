#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "caps_ood/eval.hpp"
#include "caps_ood/synth.hpp"
#include "test_support.hpp"

using namespace caps_ood;
using caps_ood::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected caps_ood::Error");
  return ErrorCode::InvalidArgument;
}

double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double acc = 0.0;
  for (double o : ood) {
    for (double i : id) acc += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  }
  return acc / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

std::vector<double> tied_scores(Rng& rng, std::size_t n, double shift) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::floor(rng.normal() * 3.0 + shift);
  return v;
}

}  // namespace

TEST_CASE("auroc: worked values") {
  CHECK(auroc(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{2, 2, 2}, std::vector<double>{2, 2}) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.4}, std::vector<double>{0.3, 0.9}) == 0.75);
  CHECK(auroc(std::vector<double>{1, 1}, std::vector<double>{0, 0}) == 0.0);
  CHECK(code_of([] { auroc(std::vector<double>{}, std::vector<double>{1}); }) == ErrorCode::EmptyInput);
  CHECK(code_of([] { auroc(std::vector<double>{1}, std::vector<double>{}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("auroc: rank form equals brute force, complement symmetry") {
  Rng rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    const auto id = tied_scores(rng, 1 + rng.below(200), 0.0);
    const auto ood = tied_scores(rng, 1 + rng.below(200), rng.uniform() * 4.0);
    const double a = auroc(id, ood);
    CHECK(std::abs(a - brute_auroc(id, ood)) < 1e-12);
    CHECK(std::abs(a + auroc(ood, id) - 1.0) < 1e-12);
  }
}

TEST_CASE("fpr95: worked values") {
  std::vector<double> id(100);
  for (std::size_t i = 0; i < 100; ++i) id[i] = static_cast<double>(i + 1);
  CHECK(fpr95(id, std::vector<double>{50, 96}) == 0.5);
  CHECK(fpr95(id, std::vector<double>{101, 500}) == 0.0);
  CHECK(fpr95(id, std::vector<double>{1, -3, 0}) == 1.0);
  CHECK(fpr95(id, std::vector<double>{95, 95.5}) == 0.5);
  CHECK(code_of([] { fpr95(std::vector<double>{}, std::vector<double>{1}); }) == ErrorCode::EmptyInput);
  // Small ID sets still work (with a warning).
  CHECK(fpr95(std::vector<double>{1, 2, 3}, std::vector<double>{2.5, 3.5}) == 0.5);
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto id = tied_scores(rng, 1 + rng.below(150), 0.0);
    const auto ood = tied_scores(rng, 1 + rng.below(150), 2.0);
    auto f = [](double x) { return x * x * x + 3.0 * x + 7.0; };
    std::vector<double> fid(id.size()), food(ood.size());
    std::transform(id.begin(), id.end(), fid.begin(), f);
    std::transform(ood.begin(), ood.end(), food.begin(), f);
    CHECK(auroc(fid, food) == auroc(id, ood));
    CHECK(fpr95(fid, food) == fpr95(id, ood));
  }
}

TEST_CASE("fpr95 does not increase when OOD scores shift up") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto id = tied_scores(rng, 20 + rng.below(100), 0.0);
    auto ood = tied_scores(rng, 1 + rng.below(100), 1.0);
    const double before = fpr95(id, ood);
    const double delta = 0.01 + rng.uniform() * 3.0;
    for (auto& v : ood) v += delta;
    CHECK(fpr95(id, ood) <= before);
  }
}

TEST_CASE("evaluate_scores and report formats") {
  const std::vector<double> id{0.1, 0.4};
  const std::vector<NamedScores> ood{{"a", {0.3, 0.9}, "near"}, {"b", {1.0, 2.0}, ""}};
  ScoreConfig cfg;
  const auto rep = evaluate_scores(id, ood, cfg);
  REQUIRE(rep.datasets.size() == 2);
  CHECK(rep.datasets[0].auroc == 0.75);
  CHECK(rep.datasets[1].auroc == 1.0);
  CHECK(rep.average_auroc == 0.875);
  CHECK(rep.datasets[0].n_id == 2);
  CHECK(rep.datasets[0].notes == "near");

  const auto j = nlohmann::json::parse(report_json(rep));
  CHECK(j["metric"] == "epd");
  CHECK(j["p"] == 0.15);
  CHECK(j["datasets"].size() == 2);
  CHECK(j["datasets"][0]["name"] == "a");
  CHECK(j["datasets"][0]["n_ood"] == 2);
  CHECK(j["average"]["auroc"] == 0.875);

  const auto csv = report_csv(rep);
  CHECK(csv.rfind("name,n_id,n_ood,auroc,fpr95\n", 0) == 0);
  CHECK(csv.find("\naverage,") != std::string::npos);

  CHECK(code_of([&] { evaluate_scores(id, std::vector<NamedScores>{}, cfg); }) == ErrorCode::MissingSplit);
}

TEST_CASE("evaluate: report shape, duplicate entries and missing splits") {
  TempDir dir;
  SynthConfig sc;
  sc.num_classes = 3;
  sc.d_in = 8;
  sc.support_size = 2;
  sc.n_train_per_class = 20;
  sc.n_test_per_class = 10;
  sc.n_ood = 30;
  const auto manifest = write_synth_bundle(sc, dir.path());
  Rng rng(2);
  const auto model = caps_ood::testing::random_model<float>(rng, 8, 40, 4);
  const auto train = read_embeddings(manifest.id_train().path);
  SaeCheckpoint ckpt{model, fit_normalizer(train)};
  const auto caps = build_caps(ckpt.model, ckpt.normalizer, train, 0.05);

  DatasetManifest two;
  for (const auto& e : manifest.entries) {
    if (e.role != Role::Ood || e.name == "ood_diffuse") two.entries.push_back(e);
  }
  auto dup = two.entries.back();
  dup.name = "ood_diffuse_copy";
  two.entries.push_back(dup);
  const auto rep = evaluate(two, ckpt, caps, {});
  REQUIRE(rep.datasets.size() == 2);
  CHECK(rep.datasets[0].name == "ood_diffuse");
  CHECK(rep.datasets[1].name == "ood_diffuse_copy");
  CHECK(rep.datasets[0].auroc == rep.datasets[1].auroc);
  CHECK(rep.datasets[0].fpr95 == rep.datasets[1].fpr95);
  CHECK(rep.datasets[0].n_id == 30);
  CHECK(rep.datasets[0].n_ood == 30);
  CHECK(rep.average_auroc == rep.datasets[0].auroc);

  const auto full = evaluate(manifest, ckpt, caps, {});
  CHECK(full.datasets.size() == 3);
  const auto j = nlohmann::json::parse(report_json(full));
  CHECK(j["datasets"].size() == 3);

  DatasetManifest no_test;
  for (const auto& e : manifest.entries) {
    if (e.role != Role::IdTest) no_test.entries.push_back(e);
  }
  CHECK(code_of([&] { evaluate(no_test, ckpt, caps, {}); }) == ErrorCode::MissingSplit);
  DatasetManifest no_ood;
  for (const auto& e : manifest.entries) {
    if (e.role != Role::Ood) no_ood.entries.push_back(e);
  }
  CHECK(code_of([&] { evaluate(no_ood, ckpt, caps, {}); }) == ErrorCode::MissingSplit);
}
