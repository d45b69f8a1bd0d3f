#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "osamd/geometry.hpp"
#include "osamd/losses.hpp"
#include "osamd/rng.hpp"

using namespace osamd;

namespace {

BregmanGeometry unconstrained() { return {}; }
BregmanGeometry ball(double r) { return {Regularizer::kSquaredEuclidean, r}; }

DifferentiableLoss linear_loss(const Vec& g) {
  return {[g](const Vec& w) { return dot(g, w); }, [g](const Vec&) { return g; }};
}

DifferentiableLoss hinge_loss(const HingeSpec& spec, const Vec& x, int y) {
  return {[spec, x, y](const Vec& w) { return hinge_value(spec, w, x, y); },
          [spec, x, y](const Vec& w) { return hinge_gradient(spec, w, x, y); }};
}

}  // namespace

TEST_CASE("bregman divergence is half the squared distance") {
  CHECK(bregman_divergence(unconstrained(), {3.0, 4.0}, {0.0, 0.0}) == doctest::Approx(12.5));
  CHECK(bregman_divergence(unconstrained(), {1.0, -2.0}, {1.0, -2.0}) == 0.0);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec a{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const Vec b{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    CHECK(bregman_divergence(unconstrained(), a, b) >= 0.0);
  }
}

TEST_CASE("projection clips onto the ball and fixes interior points") {
  CHECK(project(unconstrained(), {100.0, -7.0}) == Vec{100.0, -7.0});
  const Vec inside{0.3, -0.4};
  CHECK(project(ball(1.0), inside) == inside);

  const Vec p = project(ball(2.0), {3.0, 4.0});
  CHECK(p[0] == doctest::Approx(1.2));
  CHECK(p[1] == doctest::Approx(1.6));
  CHECK(norm(p) <= 2.0);
  CHECK_THROWS_AS(project(ball(-1.0), {1.0}), std::invalid_argument);
}

TEST_CASE("projection is an exact fixpoint") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const Vec w{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const double r = rng.uniform(0.1, 3.0);
    const Vec once = project(ball(r), w);
    const Vec twice = project(ball(r), once);
    CHECK(once == twice);  // bitwise, not approximate
    CHECK(norm(once) <= r);
  }
}

TEST_CASE("mirror step moves against the gradient then projects") {
  CHECK(mirror_step(unconstrained(), {3.0, 0.0}, {1.0, 0.0}, 2.0) == Vec{1.0, 0.0});
  const Vec clipped = mirror_step(ball(0.5), {3.0, 0.0}, {1.0, 0.0}, 2.0);
  CHECK(clipped[0] == doctest::Approx(0.5));
  CHECK(std::abs(clipped[1]) < 1e-15);
}

TEST_CASE("proximal step on a linear loss lands at anchor minus step times gradient") {
  const Vec w = proximal_step(unconstrained(), {2.0, 3.0}, linear_loss({1.0, -1.0}), 0.5, 30, 1.0);
  CHECK(w[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("proximal step with a zero gradient returns the anchor") {
  const Vec anchor{0.4, -0.2};
  CHECK(proximal_step(unconstrained(), anchor, linear_loss({0.0, 0.0}), 1.0, 10, 0.5) == anchor);
}

TEST_CASE("proximal step never does worse than the projected anchor") {
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const BregmanGeometry geom = i % 2 == 0 ? unconstrained() : ball(rng.uniform(0.2, 2.0));
    const Vec anchor{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), 1.0};
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const HingeSpec spec{1.0, rng.uniform(0.0, 0.5), {}};
    const auto loss = hinge_loss(spec, x, y);
    const double step = rng.uniform(0.01, 1.0);
    const Vec w = proximal_step(geom, anchor, loss, step, 20, 0.1);
    if (geom.radius) CHECK(norm(w) <= *geom.radius + 1e-12);
    CHECK(prox_objective(geom, anchor, loss, step, w) <=
          prox_objective(geom, anchor, loss, step, project(geom, anchor)) + 1e-12);
  }
}

// The hinge prox has a one-dimensional closed form: the minimizer lies at
// (anchor + lambda * y * x) / (1 + 2 * step * penalty) for some lambda in
// [0, step], and the optimum is one of {flat side, full pull, the kink}.
TEST_CASE("proximal step reaches the hinge prox optimum within 1e-6") {
  Rng rng(41);
  for (int i = 0; i < 100; ++i) {
    const Vec anchor{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), 1.0};
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double penalty = i % 3 == 0 ? 0.0 : rng.uniform(0.05, 0.5);
    const HingeSpec spec{1.0, penalty, {}};
    const double step = rng.uniform(0.05, 1.0);
    const auto loss = hinge_loss(spec, x, y);

    const double shrink = 1.0 + 2.0 * step * penalty;
    const auto candidate = [&](double lambda) {
      Vec w = anchor;
      axpy(lambda * y, x, w);
      for (double& c : w) c /= shrink;
      return w;
    };
    double kink = (spec.margin_target * shrink - y * dot(anchor, x)) / squared_norm(x);
    kink = std::clamp(kink, 0.0, step);
    double best = prox_objective(unconstrained(), anchor, loss, step, candidate(0.0));
    for (double lambda : {step, kink}) {
      best = std::min(best,
                      prox_objective(unconstrained(), anchor, loss, step, candidate(lambda)));
    }

    const Vec w = proximal_step(unconstrained(), anchor, loss, step, 120, 1.0 / shrink);
    CHECK(prox_objective(unconstrained(), anchor, loss, step, w) <= best + 1e-6);
  }
}

TEST_CASE("proximal step validates its budget and rate") {
  const auto loss = linear_loss({1.0});
  CHECK_THROWS_AS(proximal_step(unconstrained(), {0.0}, loss, 0.1, -1, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(proximal_step(unconstrained(), {0.0}, loss, 0.1, 5, 0.0),
                  std::invalid_argument);
}
