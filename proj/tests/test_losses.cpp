#include <cmath>
#include <cstddef>

#include "doctest.h"
#include "osamd/losses.hpp"
#include "osamd/rng.hpp"

using namespace osamd;

TEST_CASE("linear score and hinge value at frozen points") {
  const HingeSpec spec{1.0, 0.1, {}};
  CHECK(linear_score({0.5, -1.0}, {2.0, 1.0}) == 0.0);
  // Zero margin: the hinge costs the full target either way.
  CHECK(hinge_value(spec, {0.5, -1.0}, {2.0, 1.0}, 1) == doctest::Approx(1.125));
  CHECK(hinge_value(spec, {0.5, -1.0}, {2.0, 1.0}, -1) == doctest::Approx(1.125));
  // Margin 2 satisfies the target for +1 and doubles the cost for -1.
  CHECK(hinge_value(spec, {1.0, 2.0}, {3.0, -0.5}, 1) == doctest::Approx(0.5));
  CHECK(hinge_value(spec, {1.0, 2.0}, {3.0, -0.5}, -1) == doctest::Approx(3.5));
  CHECK_THROWS_AS(hinge_value(spec, {1.0}, {1.0}, 0), std::invalid_argument);
}

TEST_CASE("hinge gradient at a frozen point") {
  const Vec g = hinge_gradient(HingeSpec{1.0, 0.1, {}}, {0.5, -1.0}, {2.0, 1.0}, 1);
  CHECK(g[0] == doctest::Approx(-1.9));
  CHECK(g[1] == doctest::Approx(-1.2));
}

TEST_CASE("hinge gradient matches central differences away from the kink") {
  Rng rng(7);
  int used = 0;
  while (used < 40) {
    const HingeSpec spec{1.0, rng.uniform(0.0, 0.5),
                         used % 2 == 0 ? std::optional<int>(2) : std::nullopt};
    const Vec w{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    if (std::abs(spec.margin_target - y * linear_score(w, x)) < 1e-2) continue;
    ++used;
    const Vec g = hinge_gradient(spec, w, x, y);
    const double h = 1e-6;
    for (std::size_t d = 0; d < w.size(); ++d) {
      Vec wp = w, wm = w;
      wp[d] += h;
      wm[d] -= h;
      const double fd = (hinge_value(spec, wp, x, y) - hinge_value(spec, wm, x, y)) / (2 * h);
      CHECK(std::abs(g[d] - fd) < 1e-6);
    }
  }
}

TEST_CASE("a margin exactly at the target contributes nothing to the gradient") {
  const Vec g = hinge_gradient(HingeSpec{1.0, 0.25, {}}, {1.0, 0.0}, {1.0, 0.0}, 1);
  CHECK(g[0] == doctest::Approx(0.5));  // penalty term only
  CHECK(g[1] == 0.0);
}

TEST_CASE("penalty_dims restricts the penalty to a prefix of coordinates") {
  const Vec w{1.0, 2.0, 3.0};
  CHECK(penalized_sqnorm(HingeSpec{1.0, 0.5, {}}, w) == doctest::Approx(14.0));
  CHECK(penalized_sqnorm(HingeSpec{1.0, 0.5, 2}, w) == doctest::Approx(5.0));
  CHECK(penalized_sqnorm(HingeSpec{1.0, 0.5, 0}, w) == 0.0);
  CHECK(penalized_sqnorm(HingeSpec{1.0, 0.5, 9}, w) == doctest::Approx(14.0));

  // x = 0 kills the hinge part of the gradient, leaving the penalty alone.
  const Vec x{0.0, 0.0, 0.0};
  CHECK(hinge_gradient(HingeSpec{1.0, 0.5, {}}, w, x, 1) == Vec{1.0, 2.0, 3.0});
  CHECK(hinge_gradient(HingeSpec{1.0, 0.5, 2}, w, x, 1) == Vec{1.0, 2.0, 0.0});
  CHECK(hinge_value(HingeSpec{1.0, 0.5, {}}, w, x, 1) == doctest::Approx(8.0));
  CHECK(hinge_value(HingeSpec{1.0, 0.5, 2}, w, x, 1) == doctest::Approx(3.5));
}

TEST_CASE("hinge is convex along random segments") {
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    const HingeSpec spec{1.0, rng.uniform(0.0, 0.3),
                         i % 2 == 0 ? std::optional<int>(2) : std::nullopt};
    const Vec a{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const Vec b{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const Vec mid = scaled(add(a, b), 0.5);
    CHECK(hinge_value(spec, mid, x, y) <=
          0.5 * (hinge_value(spec, a, x, y) + hinge_value(spec, b, x, y)) + 1e-12);
  }
}

TEST_CASE("class scores, top class, and margins") {
  const ClassWeights weights{{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
  const Vec x{2.0, 3.0};
  const auto s = class_scores(weights, x);
  CHECK(s == std::vector<double>{2.0, 3.0, -2.0});
  CHECK(top_class(s) == 1);
  CHECK(top_class({5.0, 5.0, 1.0}) == 0);  // ties resolve to the lowest index
  CHECK(multiclass_margin(s, 1) == doctest::Approx(1.0));
  CHECK(multiclass_margin(s, 0) == doctest::Approx(-1.0));
  CHECK(multiclass_margin(s, 2) == doctest::Approx(-5.0));
  CHECK(confidence_score(s) == doctest::Approx(1.0));
  CHECK_THROWS_AS(multiclass_margin(s, 3), std::invalid_argument);
  CHECK_THROWS_AS(top_class({}), std::invalid_argument);
}

TEST_CASE("multiclass hinge value and gradient at a frozen point") {
  const HingeSpec spec{1.0, 0.1, {}};
  const ClassWeights weights{{1.0, 0.0}, {0.0, 1.0}};
  const Vec x{2.0, 3.0};
  // Scores (2, 3): the true class trails by 1, so the hinge is 2.
  CHECK(multiclass_hinge_value(spec, weights, x, 0) == doctest::Approx(2.2));
  const auto g = multiclass_hinge_gradient(spec, weights, x, 0);
  CHECK(g[0][0] == doctest::Approx(-1.8));  // -x plus the penalty pull
  CHECK(g[0][1] == doctest::Approx(-3.0));
  CHECK(g[1][0] == doctest::Approx(2.0));
  CHECK(g[1][1] == doctest::Approx(3.2));
}

TEST_CASE("multiclass gradient matches central differences away from the kink") {
  Rng rng(19);
  int used = 0;
  while (used < 20) {
    const HingeSpec spec{1.0, rng.uniform(0.0, 0.3),
                         used % 2 == 0 ? std::optional<int>(2) : std::nullopt};
    ClassWeights weights(3, Vec(3));
    for (auto& row : weights) {
      for (double& c : row) c = rng.uniform(-2, 2);
    }
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const int y = rng.uniform_int(3);
    const auto scores = class_scores(weights, x);
    if (std::abs(spec.margin_target - multiclass_margin(scores, y)) < 1e-2) continue;
    ++used;
    const auto g = multiclass_hinge_gradient(spec, weights, x, y);
    const double h = 1e-6;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      for (std::size_t d = 0; d < weights[k].size(); ++d) {
        ClassWeights wp = weights, wm = weights;
        wp[k][d] += h;
        wm[k][d] -= h;
        const double fd = (multiclass_hinge_value(spec, wp, x, y) -
                           multiclass_hinge_value(spec, wm, x, y)) /
                          (2 * h);
        CHECK(std::abs(g[k][d] - fd) < 1e-6);
      }
    }
  }
}

TEST_CASE("two symmetric rows reduce the multiclass hinge to the binary one") {
  const HingeSpec spec{1.0, 0.0, {}};
  Rng rng(29);
  for (int i = 0; i < 50; ++i) {
    const Vec w{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const ClassWeights weights{scaled(w, 0.5), scaled(w, -0.5)};
    CHECK(multiclass_hinge_value(spec, weights, x, 0) ==
          doctest::Approx(hinge_value(spec, w, x, 1)).epsilon(1e-12));
    CHECK(multiclass_hinge_value(spec, weights, x, 1) ==
          doctest::Approx(hinge_value(spec, w, x, -1)).epsilon(1e-12));
  }
}
