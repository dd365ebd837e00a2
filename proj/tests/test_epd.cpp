#include <doctest.h>

#include <cmath>

#include "caps_ood/epd.hpp"
#include "test_support.hpp"

using namespace caps_ood;

namespace {

SparseCode dense_code(const std::vector<double>& dense) {
  SparseCode c;
  c.d_latent = dense.size();
  for (std::size_t j = 0; j < dense.size(); ++j) {
    if (dense[j] != 0.0) {
      c.indices.push_back(static_cast<std::uint32_t>(j));
      c.values.push_back(dense[j]);
    }
  }
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected caps_ood::Error");
  return ErrorCode::InvalidArgument;
}

EnergyProfile profile(std::vector<double> p) { return EnergyProfile{std::move(p)}; }

CapTable one_class(const std::vector<float>& cap) {
  Matrix<float> m(1, cap.size());
  std::copy(cap.begin(), cap.end(), m.row(0).begin());
  return make_cap_table(std::move(m), {1}, 0.05f);
}

}  // namespace

TEST_CASE("core_vectors") {
  const std::vector<float> cap{4, 2, 0, 0};
  auto cv = core_vectors(cap, dense_code({2, 2, 0, 0}), 0.5);
  CHECK(cv.indices == std::vector<std::uint32_t>{0, 1});
  CHECK(cv.cap == std::vector<double>{4, 2});
  CHECK(cv.sample == std::vector<double>{2, 2});

  const std::vector<float> cap2{1, 3, 2, 0.5f};
  cv = core_vectors(cap2, dense_code({0, 0, 0, 0}), 1.0);
  CHECK(cv.indices == std::vector<std::uint32_t>{1, 2, 0, 3});

  cv = core_vectors(cap, dense_code({0, 0, 7, 1}), 0.5);
  CHECK(cv.sample == std::vector<double>{0, 0});

  cv = core_vectors(std::vector<float>(40, 1.0f), dense_code(std::vector<double>(40, 0.0)), 0.01);
  CHECK(cv.indices.size() == 1);
}

TEST_CASE("normalize_profile") {
  auto p = normalize_profile(std::vector<double>{2, 2}, 1e-10);
  CHECK(p.probs[0] == doctest::Approx(0.5));
  CHECK(p.probs[1] == doctest::Approx(0.5));

  for (double eps : {0.0, 1e-10, 0.5}) {
    p = normalize_profile(std::vector<double>{0, 0, 0, 0}, eps);
    for (double v : p.probs) CHECK(v == 0.25);
  }

  p = normalize_profile(std::vector<double>{3, 1}, 0.0);
  CHECK(p.probs == std::vector<double>{0.75, 0.25});

  CHECK(code_of([] { normalize_profile(std::vector<double>{1, -1e-9}, 1e-10); }) == ErrorCode::NegativeEntry);

  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + rng.below(64));
    for (auto& x : v) x = rng.uniform() < 0.3 ? 0.0 : std::abs(rng.normal()) * std::pow(10.0, rng.uniform() * 6 - 3);
    p = normalize_profile(v, 1e-10);
    double sum = 0.0;
    for (double x : p.probs) {
      CHECK(x > 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("epd: worked values") {
  const auto p = profile({0.5, 0.5});
  const auto q = profile({0.75, 0.25});
  CHECK(epd(p, p) == 0.0);
  CHECK(std::abs(epd(p, q) - 0.1438410) < 1e-6);
  CHECK(std::abs(epd(p, q) - (0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0))) < 1e-15);

  const auto edge = normalize_profile(std::vector<double>{1, 0}, 1e-10);
  CHECK(std::abs(epd(edge, p) - std::log(2.0)) < 1e-5);

  // Not symmetric: the sample profile is the first argument.
  CHECK(epd(q, p) != doctest::Approx(epd(p, q)));
  CHECK(epd(q, p) == doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)));

  CHECK(code_of([&] { epd(p, profile({1.0})); }) == ErrorCode::LengthMismatch);
  CHECK(epd(profile({0.0, 1.0}), profile({0.5, 0.5})) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("epd is nonnegative") {
  Rng rng(66);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.uniform();
    CHECK(epd(normalize_profile(a, 1e-10), normalize_profile(b, 1e-10)) >= 0.0);
  }
}

TEST_CASE("euclidean and cosine distances") {
  CHECK(euclidean_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == 5.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(cosine_distance(std::vector<double>{0, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(cosine_distance(std::vector<double>{2, 0}, std::vector<double>{5, 0}) == doctest::Approx(0.0));
  CHECK(code_of([] { euclidean_distance(std::vector<double>{1}, std::vector<double>{1, 2}); }) ==
        ErrorCode::LengthMismatch);
}

TEST_CASE("score_core by metric") {
  CoreVectors cv{{0, 1}, {3, 4}, {0, 0}};
  ScoreConfig cfg;
  cfg.metric = Metric::Euclidean;
  CHECK(score_core(cv, cfg) == 5.0);
  cfg.metric = Metric::Cosine;
  CHECK(score_core(cv, cfg) == 1.0);

  // S proportional to C gives a near-zero EPD.
  cv.sample = {0.75, 1.0};
  cfg.metric = Metric::Epd;
  CHECK(score_core(cv, cfg) < 1e-6);

  CHECK(parse_metric("euclidean") == Metric::Euclidean);
  CHECK(to_string(Metric::Cosine) == "cosine");
  CHECK(code_of([] { parse_metric("mahalanobis"); }) == ErrorCode::InvalidArgument);
  cfg.p = 0.0;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("EPD is invariant to sample scale, Euclidean is not") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> cap(40);
    for (auto& v : cap) v = static_cast<float>(std::abs(rng.normal()));
    const auto table = one_class(cap);
    const auto base = caps_ood::testing::random_code(rng, 40, 12);
    ScoreConfig epd_cfg;
    epd_cfg.p = 0.25;
    ScoreConfig euc_cfg = epd_cfg;
    euc_cfg.metric = Metric::Euclidean;
    const Scorer se(table, epd_cfg), su(table, euc_cfg);
    const double s0 = se.score(base, 0), u0 = su.score(base, 0);
    for (double lambda : {0.1, 0.5, 2.0, 10.0}) {
      auto scaled = base;
      for (auto& v : scaled.values) v *= lambda;
      CHECK(std::abs(se.score(scaled, 0) - s0) < 1e-6);
      if (u0 > 0.0 && core_vectors(cap, base, 0.25).sample != std::vector<double>(10, 0.0)) {
        CHECK(su.score(scaled, 0) != doctest::Approx(u0));
      }
    }
  }
}

TEST_CASE("Scorer") {
  const auto table = one_class({4, 2, 0, 0});
  ScoreConfig cfg;
  cfg.p = 0.5;
  const Scorer scorer(table, cfg);
  CHECK(scorer.head_length() == 2);
  CHECK(code_of([&] { scorer.score(dense_code({1, 0, 0, 0}), 1); }) == ErrorCode::UnknownClass);
  CHECK(code_of([&] { scorer.score(dense_code({1, 0, 0, 0}), -1); }) == ErrorCode::UnknownClass);
  CHECK(scorer.score(dense_code({2, 1, 0, 0}), 0) < 1e-6);
  CHECK(scorer.score(dense_code({1, 2, 0, 0}), 0) > 0.1);
  // All-zero head: KL(uniform || Q).
  const double expected = 0.5 * std::log(0.5 / (4.0 / 6.0)) + 0.5 * std::log(0.5 / (2.0 / 6.0));
  CHECK(scorer.score(dense_code({0, 0, 3, 0}), 0) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("score_dataset: determinism, order and single-sample agreement") {
  Rng rng(14);
  const auto model = caps_ood::testing::random_model<float>(rng, 6, 30, 5);
  const InputNormalizer norm{{0.1f, -0.2f, 0.0f, 0.3f, 0.0f, 0.0f}, 1.5f};
  auto train = caps_ood::testing::random_dataset(rng, 90, 6, true, false, 3);
  for (std::int32_t c = 0; c < 3; ++c) (*train.true_labels)[static_cast<std::size_t>(c)] = c;
  const auto table = build_caps(model, norm, train, 0.05);

  for (bool with_pred : {true, false}) {
    auto ds = caps_ood::testing::random_dataset(rng, 150, 6, false, with_pred, 3);
    for (auto metric : {Metric::Epd, Metric::Euclidean, Metric::Cosine}) {
      ScoreConfig cfg;
      cfg.metric = metric;
      const auto a = score_dataset(table, model, norm, ds, cfg);
      set_num_threads(4);
      const auto b = score_dataset(table, model, norm, ds, cfg);
      set_num_threads(1);
      CHECK(a.scores == b.scores);
      CHECK(a.pred_class == b.pred_class);
      REQUIRE(a.scores.size() == 150);
      for (std::size_t i = 0; i < 150; i += 37) {
        if (with_pred) CHECK(a.pred_class[i] == (*ds.pred_labels)[i]);
        CHECK(a.scores[i] == score_sample(table, model, norm, ds.data.row(i), a.pred_class[i], cfg));
      }
    }
  }

  EmbeddingDataset one;
  one.data = Matrix<float>(1, 6, {1, 2, 3, 4, 5, 6});
  one.pred_labels = Labels{2};
  const auto s = score_dataset(table, model, norm, one, {});
  REQUIRE(s.scores.size() == 1);
  CHECK(s.scores[0] == score_sample(table, model, norm, one.data.row(0), 2, {}));
  CHECK(scores_csv(s).rfind("index,pred_class,score\n0,2,", 0) == 0);

  one.pred_labels = Labels{3};
  CHECK(code_of([&] { score_dataset(table, model, norm, one, {}); }) == ErrorCode::UnknownClass);
}
