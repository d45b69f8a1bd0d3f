#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "osamd/metrics.hpp"

using namespace osamd;

namespace {

// Central finite difference of a scalar field, one coordinate at a time.
Vec finite_difference(const std::function<double(const Vec&)>& f, const Vec& w, double h) {
  Vec g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    Vec lo = w, hi = w;
    lo[i] -= h;
    hi[i] += h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("standard normal density and distribution match reference values") {
  CHECK(normal_pdf(0.0) == doctest::Approx(0.3989422804014327).epsilon(1e-14));
  CHECK(normal_pdf(1.0) == doctest::Approx(0.24197072451914337).epsilon(1e-14));
  CHECK(normal_cdf(0.5) == doctest::Approx(0.6914624612740131).epsilon(1e-14));
  CHECK(normal_cdf(1.96) == doctest::Approx(0.9750021048517796).epsilon(1e-14));
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  for (double x : {-2.0, -0.3, 0.7, 3.1}) {
    CHECK(normal_cdf(-x) == doctest::Approx(1.0 - normal_cdf(x)).epsilon(1e-14));
  }
  CHECK(normal_cdf(-1.0) < normal_cdf(0.0));
  CHECK(normal_cdf(0.0) < normal_cdf(1.0));
}

TEST_CASE("expected hinge of a gaussian margin matches reference values") {
  CHECK(expected_hinge_of_gaussian_margin(1.0, 0.0, 1.0) ==
        doctest::Approx(1.0833154705876864).epsilon(1e-13));
  CHECK(expected_hinge_of_gaussian_margin(1.0, 2.0, 0.5) ==
        doctest::Approx(0.004245351308414823).epsilon(1e-12));
  // Zero variance collapses to the plain hinge of the mean margin.
  CHECK(expected_hinge_of_gaussian_margin(2.0, -1.0, 0.0) == 3.0);
  CHECK(expected_hinge_of_gaussian_margin(1.0, 3.0, 0.0) == 0.0);
  CHECK_THROWS_AS(expected_hinge_of_gaussian_margin(1.0, 0.0, -0.1), std::invalid_argument);

  // Decreasing in the mean margin, and never below the hinge of the mean.
  double prev = expected_hinge_of_gaussian_margin(1.0, -2.0, 0.7);
  for (double mean = -1.5; mean <= 3.0; mean += 0.5) {
    const double v = expected_hinge_of_gaussian_margin(1.0, mean, 0.7);
    CHECK(v < prev);
    CHECK(v >= std::max(0.0, 1.0 - mean));
    prev = v;
  }
}

TEST_CASE("closed-form gaussian expected loss matches hand-computed values") {
  const HingeSpec spec{1.0, 0.2, 2};
  RotatingGaussianConfig cfg;
  const Vec w{0.1, 0.0, -1.0};
  // Both class margins concentrate at -0.5 with sd 0.1732, so the expectation
  // is the penalty 0.2 * 0.01 plus 1.5; the Gaussian tails are below 1e-17.
  CHECK(expected_hinge_gaussian(spec, w, cfg, 1) == doctest::Approx(1.502).epsilon(1e-14));
  // After the half-turn, one class margin moves to -1.5 and the other to +2.5.
  CHECK(expected_hinge_gaussian(spec, w, cfg, cfg.horizon) ==
        doctest::Approx(1.252).epsilon(1e-14));
  CHECK(expected_hinge_gaussian(spec, Vec{0.0, 0.0, 0.0}, cfg, 1) == 1.0);

  RotatingGaussianConfig point = cfg;
  point.covariance_scale = 0.0;
  CHECK(expected_hinge_gaussian(spec, w, point, 1) == doctest::Approx(1.502).epsilon(1e-14));
  const Vec g = expected_hinge_gaussian_gradient(spec, w, point, 1);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == doctest::Approx(5.04).epsilon(1e-14));
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);

  CHECK_THROWS_AS(expected_hinge_gaussian(spec, Vec{1.0, 2.0}, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(expected_hinge_gaussian_gradient(spec, Vec{1.0, 2.0}, cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("gaussian expected gradient matches central differences") {
  const HingeSpec spec{1.0, 0.2, 2};
  RotatingGaussianConfig cfg;
  Rng rng(17);
  const double h = 1e-5;
  for (int i = 0; i < 10; ++i) {
    Vec w{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    if (std::hypot(w[0], w[1]) < 0.1) w[0] += 0.5;  // keep the margin sd away from zero
    const int t = 1 + rng.uniform_int(cfg.horizon);
    const auto f = [&](const Vec& u) { return expected_hinge_gaussian(spec, u, cfg, t); };
    const Vec analytic = expected_hinge_gaussian_gradient(spec, w, cfg, t);
    const Vec numeric = finite_difference(f, w, h);
    for (std::size_t c = 0; c < w.size(); ++c) {
      CHECK(std::abs(analytic[c] - numeric[c]) <= 1e-6);
    }
  }
}

TEST_CASE("label flip expected loss averages the two point hinges") {
  const HingeSpec spec{1.0, 0.0, {}};
  LabelFlipConfig cfg;
  const Vec aligned{-1.0, 0.0};
  // Before the flip the separator at -e1 scores both points at the margin.
  CHECK(expected_hinge_label_flip(spec, aligned, cfg, 1) == 0.0);
  CHECK(expected_hinge_label_flip(spec, aligned, cfg, cfg.horizon / 2) == 0.0);
  // After the flip the same separator is maximally wrong on both points.
  CHECK(expected_hinge_label_flip(spec, aligned, cfg, cfg.horizon / 2 + 1) == 2.0);
  CHECK(expected_hinge_label_flip(spec, aligned, cfg, cfg.horizon) == 2.0);

  Rng rng(23);
  const double h = 1e-5;
  int tested = 0;
  while (tested < 10) {
    const Vec w{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const int t = 1 + rng.uniform_int(cfg.horizon);
    // Skip draws whose margins land on the hinge kink, where the derivative jumps.
    if (std::abs(-w[0] - 1.0) < 1e-3 || std::abs(w[0] - 1.0) < 1e-3) continue;
    const auto f = [&](const Vec& u) { return expected_hinge_label_flip(spec, u, cfg, t); };
    const Vec analytic = expected_hinge_label_flip_gradient(spec, w, cfg, t);
    const Vec numeric = finite_difference(f, w, h);
    for (std::size_t c = 0; c < w.size(); ++c) {
      CHECK(std::abs(analytic[c] - numeric[c]) <= 1e-6);
    }
    ++tested;
  }
}

TEST_CASE("monte carlo estimate brackets the closed form") {
  const HingeSpec spec{1.0, 0.2, 2};
  RotatingGaussianConfig cfg;
  const Vec w{0.5, 0.3, -4.0};
  const int t = 700;
  const double closed = expected_hinge_gaussian(spec, w, cfg, t);
  Rng rng(91);
  const auto est = mc_expected_loss(
      [&](Rng& r) { return gaussian_sample(cfg, t, r); },
      [&](const Sample& s) { return hinge_value(spec, w, s.x, s.label); }, 200000, rng);
  CHECK(est.n == 200000);
  CHECK(est.std_error > 0.0);
  CHECK(std::abs(est.estimate - closed) <= 3.0 * est.std_error);

  // Identical generator state reproduces the estimate bit for bit.
  Rng again(91);
  const auto rerun = mc_expected_loss(
      [&](Rng& r) { return gaussian_sample(cfg, t, r); },
      [&](const Sample& s) { return hinge_value(spec, w, s.x, s.label); }, 200000, again);
  CHECK(rerun.estimate == est.estimate);
  CHECK(rerun.std_error == est.std_error);
}

TEST_CASE("monte carlo of a constant has zero standard error") {
  Rng rng(1);
  const auto est = mc_expected_loss([](Rng&) { return Sample{Vec{1.0}, 1}; },
                                    [](const Sample&) { return 2.5; }, 50, rng);
  CHECK(est.estimate == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(est.std_error == 0.0);
  CHECK_THROWS_AS(mc_expected_loss([](Rng&) { return Sample{Vec{1.0}, 1}; },
                                   [](const Sample&) { return 2.5; }, 1, rng),
                  std::invalid_argument);
}

TEST_CASE("comparator oracle finds the flip minimizers on the unit ball") {
  const HingeSpec spec{1.0, 0.0, {}};
  LabelFlipConfig cfg;
  BregmanGeometry ball{Regularizer::kSquaredEuclidean, 1.0};
  ComparatorOracle oracle(label_flip_expected_loss(spec, cfg), ball);

  const auto before = oracle.at(1);
  CHECK(before.value <= 1e-5);
  CHECK(before.w[0] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(std::abs(before.w[1]) < 1e-2);

  const auto after = oracle.at(1500);
  CHECK(after.value <= 1e-5);
  CHECK(after.w[0] == doctest::Approx(1.0).epsilon(1e-3));

  // Rounds sharing a distribution share the cached entry exactly.
  const auto sibling = oracle.at(2);
  CHECK(sibling.w[0] == before.w[0]);
  CHECK(sibling.w[1] == before.w[1]);
  CHECK(sibling.value == before.value);
}

TEST_CASE("comparator cache round-trips through dump and load") {
  const HingeSpec spec{1.0, 0.0, {}};
  LabelFlipConfig cfg;
  BregmanGeometry ball{Regularizer::kSquaredEuclidean, 1.0};
  ComparatorOracle oracle(label_flip_expected_loss(spec, cfg), ball);
  const auto a = oracle.at(1);
  const auto b = oracle.at(1500);

  ComparatorOracle fresh(label_flip_expected_loss(spec, cfg), ball);
  CHECK(fresh.load_cache(oracle.dump_cache()) == 2);
  const auto a2 = fresh.at(1);
  const auto b2 = fresh.at(1500);
  CHECK(a2.value == a.value);
  CHECK(b2.value == b.value);
  for (std::size_t i = 0; i < a.w.size(); ++i) {
    CHECK(a2.w[i] == a.w[i]);
    CHECK(b2.w[i] == b.w[i]);
  }
}

TEST_CASE("gaussian comparators rotate with the stream") {
  const HingeSpec spec{1.0, 0.2, 2};
  RotatingGaussianConfig cfg;
  auto loss = gaussian_expected_loss(spec, cfg);
  loss.warm_start = nullptr;  // force every round to be solved from scratch
  ComparatorOracle oracle(std::move(loss), BregmanGeometry{});

  const auto base = oracle.at(1);
  for (int t : {500, 1000, 2000}) {
    const auto e = oracle.at(t);
    // Rigid rotation of the problem: the optimum value is invariant and the
    // minimizer's feature part rotates by the round's angle.
    CHECK(std::abs(e.value - base.value) <= 1e-4);
    const auto rotated =
        rotate_point({base.w[0], base.w[1]}, rotation_angle(cfg.total_rotation, t, cfg.horizon));
    CHECK(std::abs(e.w[0] - rotated[0]) <= 1e-4);
    CHECK(std::abs(e.w[1] - rotated[1]) <= 1e-4);
    CHECK(std::abs(e.w[2] - base.w[2]) <= 1e-4);
  }
}

TEST_CASE("warm-started comparators agree with cold solves") {
  const HingeSpec spec{1.0, 0.2, 2};
  RotatingGaussianConfig cfg;
  ComparatorOracle warm(gaussian_expected_loss(spec, cfg), BregmanGeometry{});
  auto cold_loss = gaussian_expected_loss(spec, cfg);
  cold_loss.warm_start = nullptr;
  ComparatorOracle cold(std::move(cold_loss), BregmanGeometry{});
  for (int t : {1, 777, 2000}) {
    const auto a = warm.at(t);
    const auto b = cold.at(t);
    for (std::size_t i = 0; i < a.w.size(); ++i) CHECK(std::abs(a.w[i] - b.w[i]) <= 1e-4);
    CHECK(std::abs(a.value - b.value) <= 1e-6);
  }
}

TEST_CASE("replaying the comparator itself accumulates exactly zero regret") {
  const HingeSpec spec{1.0, 0.0, {}};
  LabelFlipConfig cfg;
  BregmanGeometry ball{Regularizer::kSquaredEuclidean, 1.0};
  ComparatorOracle oracle(label_flip_expected_loss(spec, cfg), ball);
  std::vector<double> losses;
  for (int t = 1; t <= 100; ++t) losses.push_back(oracle.at(t).value);
  for (double r : dynamic_regret(losses, losses)) CHECK(r == 0.0);
}

TEST_CASE("dynamic regret accumulates the per-round gaps") {
  const auto curve = dynamic_regret({1.0, 2.0, 3.0}, {0.5, 1.0, 1.0});
  REQUIRE(curve.size() == 3);
  CHECK(curve[0] == 0.5);
  CHECK(curve[1] == 1.5);
  CHECK(curve[2] == 3.5);
  CHECK_THROWS_AS(dynamic_regret({1.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK(dynamic_regret({}, {}).empty());
}

TEST_CASE("student t quantiles match reference values") {
  CHECK(student_t_quantile(0.95, 1) == doctest::Approx(6.3137515146750405).epsilon(1e-6));
  CHECK(student_t_quantile(0.975, 9) == doctest::Approx(2.2621571628540993).epsilon(1e-6));
  CHECK(student_t_quantile(0.95, 9) == doctest::Approx(1.8331129326536335).epsilon(1e-6));
  CHECK(student_t_quantile(0.5, 3) == 0.0);
  CHECK(student_t_quantile(0.05, 9) ==
        doctest::Approx(-student_t_quantile(0.95, 9)).epsilon(1e-12));
  CHECK_THROWS_AS(student_t_quantile(0.95, 0), std::invalid_argument);
  CHECK_THROWS_AS(student_t_quantile(0.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(student_t_quantile(1.0, 5), std::invalid_argument);
}

TEST_CASE("mean confidence interval uses the t distribution") {
  const auto ci = aggregate_mean_ci({0.0, 1.0});
  CHECK(ci.n == 2);
  CHECK(ci.mean == 0.5);
  CHECK(ci.half_width == doctest::Approx(3.1568757573375215).epsilon(1e-6));

  const auto single = aggregate_mean_ci({4.2});
  CHECK(single.mean == 4.2);
  CHECK(single.half_width == 0.0);
  CHECK(single.n == 1);

  // Wider confidence, wider interval.
  const auto narrow = aggregate_mean_ci({1.0, 2.0, 3.0, 2.5}, 0.80);
  const auto wide = aggregate_mean_ci({1.0, 2.0, 3.0, 2.5}, 0.99);
  CHECK(narrow.mean == wide.mean);
  CHECK(narrow.half_width < wide.half_width);

  CHECK_THROWS_AS(aggregate_mean_ci({}), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_mean_ci({1.0, 2.0}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_mean_ci({1.0, 2.0}, 0.0), std::invalid_argument);
}

TEST_CASE("run records reduce their step logs correctly") {
  RunRecord rec;
  rec.learner = "probe";
  const auto step = [](double loss, double expected, double comparator, bool q, bool m, bool c) {
    StepRecord s;
    s.instantaneous_loss = loss;
    s.expected_loss = expected;
    s.comparator_loss = comparator;
    s.queried = q;
    s.mistake = m;
    s.correct = c;
    return s;
  };
  rec.steps = {
      step(1.0, 1.0, 0.5, true, true, true),
      step(0.5, 1.0, 0.5, false, false, true),
      step(2.0, 2.0, 1.0, true, true, true),
      step(0.5, 1.0, 1.0, false, false, false),
  };
  CHECK(rec.accuracy() == 0.75);
  CHECK(rec.query_fraction() == 0.5);
  CHECK(rec.accumulated_loss() == 4.0);
  CHECK(rec.mistake_count() == 2);
  const auto curve = rec.regret_curve();
  REQUIRE(curve.size() == 4);
  CHECK(curve[0] == 0.5);
  CHECK(curve[1] == 1.0);
  CHECK(curve[2] == 2.0);
  CHECK(curve[3] == 2.0);
  REQUIRE(rec.final_regret().has_value());
  CHECK(*rec.final_regret() == 2.0);

  rec.steps[2].expected_loss.reset();
  CHECK(rec.regret_curve().empty());
  CHECK_FALSE(rec.final_regret().has_value());

  const RunRecord empty;
  CHECK(empty.accuracy() == 0.0);
  CHECK(empty.query_fraction() == 0.0);
  CHECK(empty.accumulated_loss() == 0.0);
  CHECK(empty.mistake_count() == 0);
}
