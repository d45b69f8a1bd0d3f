#include "osamd/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace osamd {

double bregman_divergence(const BregmanGeometry& geom, const Vec& a, const Vec& b) {
  check_same_dim(a, b, "bregman_divergence");
  switch (geom.kind) {
    case Regularizer::kSquaredEuclidean:
      return 0.5 * squared_norm(sub(a, b));
  }
  throw std::invalid_argument("bregman_divergence: unknown regularizer");
}

Vec project(const BregmanGeometry& geom, Vec w) {
  if (!geom.radius) return w;
  const double d = *geom.radius;
  if (d < 0.0) throw std::invalid_argument("project: negative radius");
  // Rescaling can land a hair outside the ball in floating point; repeat until
  // the result is a true fixpoint so project(project(w)) == project(w) exactly.
  double n = norm(w);
  while (n > d) {
    const double scale = d / n;
    for (double& x : w) x *= scale;
    n = norm(w);
  }
  return w;
}

Vec mirror_step(const BregmanGeometry& geom, const Vec& w, const Vec& grad, double step) {
  check_same_dim(w, grad, "mirror_step");
  Vec out(w);
  axpy(-step, grad, out);
  return project(geom, out);
}

double prox_objective(const BregmanGeometry& geom, const Vec& anchor,
                      const DifferentiableLoss& loss, double step, const Vec& w) {
  return step * loss.value(w) + bregman_divergence(geom, w, anchor);
}

Vec proximal_step(const BregmanGeometry& geom, const Vec& anchor,
                  const DifferentiableLoss& loss, double step,
                  int inner_iterations, double inner_rate) {
  if (inner_iterations < 0) {
    throw std::invalid_argument("proximal_step: negative inner_iterations");
  }
  if (inner_rate <= 0.0) {
    throw std::invalid_argument("proximal_step: inner_rate must be positive");
  }
  Vec w = project(geom, anchor);
  double value = prox_objective(geom, anchor, loss, step, w);

  // Monotone hybrid solver. Each round first tries a plain projected gradient
  // step at inner_rate, so on smooth stretches of the loss this is ordinary
  // fixed-rate descent. Around a kink of the loss that trial overshoots and
  // fails to lower the objective, and no fixed-rate scheme settles onto a
  // minimizer that sits on the kink; those rounds instead take a bundle step.
  // The loss is modeled by the max of a few linearizations (cuts), and
  // step * model(u) + D_R(u, anchor) is minimized through its dual: weights
  // on the simplex over cuts, optimized by deterministic pairwise-exchange
  // sweeps, each exchange solved in closed form. Cuts sampled on both pieces
  // of a hinge reproduce it exactly, so the bundle step can land on the kink
  // itself; cuts clustered near the minimizer model smooth curvature to
  // second order. Steps are kept only when they lower the true objective, so
  // the result is never worse than the projected anchor.
  struct Cut {
    Vec c;            // loss(u) >= dot(c, u) + b
    double b = 0.0;
    double weight = 0.0;
  };
  constexpr std::size_t kMaxCuts = 10;
  std::vector<Cut> cuts;
  const auto add_cut = [&](const Vec& at, double loss_at, const Vec& grad_at, double weight) {
    if (cuts.size() == kMaxCuts) {
      std::size_t lightest = 0;
      for (std::size_t i = 1; i < cuts.size(); ++i)
        if (cuts[i].weight < cuts[lightest].weight) lightest = i;
      cuts.erase(cuts.begin() + static_cast<std::ptrdiff_t>(lightest));
    }
    cuts.push_back(Cut{grad_at, loss_at - dot(grad_at, at), weight});
  };
  for (int k = 0; k < inner_iterations; ++k) {
    // Fast path: gradient of the prox objective is step * loss'(w) + (w - anchor).
    const Vec gl = loss.gradient(w);
    Vec trial = w;
    for (std::size_t i = 0; i < w.size(); ++i)
      trial[i] -= inner_rate * (step * gl[i] + (w[i] - anchor[i]));
    trial = project(geom, trial);
    const double trial_value = prox_objective(geom, anchor, loss, step, trial);
    if (trial_value < value) {
      value = trial_value;
      w = std::move(trial);
      cuts.clear();
      continue;
    }
    if (cuts.empty()) add_cut(w, loss.value(w), gl, 1.0);

    // Dual of argmin_u step * max_i(cut_i(u)) + 0.5 * |u - anchor|^2 over
    // simplex weights: maximize step*(dot(s, anchor) + b(weights))
    // - 0.5 * step^2 * |s|^2 with s = sum_i weight_i * c_i. A pairwise
    // exchange t from cut j to cut i is a 1-D concave quadratic in t.
    double total = 0.0;
    for (const Cut& cut : cuts) total += cut.weight;
    for (Cut& cut : cuts) cut.weight /= total;  // renormalize dropped mass
    Vec s(w.size(), 0.0);
    for (const Cut& cut : cuts)
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += cut.weight * cut.c[i];
    for (int sweep = 0; sweep < 24; ++sweep) {
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        for (std::size_t j = i + 1; j < cuts.size(); ++j) {
          const Vec d = sub(cuts[i].c, cuts[j].c);
          const double dd = squared_norm(d);
          if (dd == 0.0) continue;
          double t = (dot(d, anchor) + cuts[i].b - cuts[j].b - step * dot(d, s)) / (step * dd);
          t = std::clamp(t, -cuts[i].weight, cuts[j].weight);
          cuts[i].weight += t;
          cuts[j].weight -= t;
          axpy(t, d, s);
        }
      }
    }
    Vec candidate = anchor;
    axpy(-step, s, candidate);
    candidate = project(geom, candidate);
    const double candidate_loss = loss.value(candidate);
    const double candidate_value =
        step * candidate_loss + bregman_divergence(geom, candidate, anchor);
    add_cut(candidate, candidate_loss, loss.gradient(candidate), 1.0 / static_cast<double>(cuts.size()));
    if (candidate_value < value) {
      value = candidate_value;
      w = std::move(candidate);
    }
  }
  return w;
}

}  // namespace osamd
