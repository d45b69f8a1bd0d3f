#pragma once

#include <functional>
#include <optional>

#include "osamd/vec.hpp"

namespace osamd {

enum class Regularizer {
  kSquaredEuclidean,  // R(w) = 1/2 ||w||^2
};

// Mirror-descent geometry: the regularizer inducing the Bregman divergence,
// plus the feasible set K = { ||w||_2 <= radius } (no radius = unconstrained).
struct BregmanGeometry {
  Regularizer kind = Regularizer::kSquaredEuclidean;
  std::optional<double> radius;
};

// D_R(a, b). For the squared-Euclidean regularizer this is 1/2 ||a - b||^2.
double bregman_divergence(const BregmanGeometry& geom, const Vec& a, const Vec& b);

// Euclidean projection onto K. Exact fixpoint: project(project(w)) == project(w).
Vec project(const BregmanGeometry& geom, Vec w);

// Projected step w <- Proj_K(w - step * grad).
Vec mirror_step(const BregmanGeometry& geom, const Vec& w, const Vec& grad, double step);

// A convex loss handed to proximal_step as value + gradient callbacks.
struct DifferentiableLoss {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
};

// Approximates argmin_{w in K} step * loss(w) + D_R(w, anchor). Each of the
// inner_iterations rounds first tries a plain projected gradient step at
// inner_rate, so on smooth stretches this is ordinary fixed-rate descent.
// When that trial fails to lower the objective (the minimizer sits on a kink
// of the loss) the round takes a bundle step instead: the loss is modeled by
// the max of a few linearizations and the modeled objective is minimized in
// closed form. Steps are kept only when they lower the true objective, so the
// result is never worse than the projected anchor itself.
Vec proximal_step(const BregmanGeometry& geom, const Vec& anchor,
                  const DifferentiableLoss& loss, double step,
                  int inner_iterations, double inner_rate);

// step * loss(w) + D_R(w, anchor); exposed for tests and diagnostics.
double prox_objective(const BregmanGeometry& geom, const Vec& anchor,
                      const DifferentiableLoss& loss, double step, const Vec& w);

}  // namespace osamd
