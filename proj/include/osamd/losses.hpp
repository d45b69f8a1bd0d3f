#pragma once

#include <optional>
#include <vector>

#include "osamd/vec.hpp"

namespace osamd {

// Regularized hinge: f(w; x, y) = max{0, margin_target - y w'x} + penalty ||w||^2.
// When penalty_dims is set, the penalty covers only the first penalty_dims
// coordinates, so a bias-augmented coordinate can go unpenalized.
struct HingeSpec {
  double margin_target = 1.0;
  double penalty = 0.0;
  std::optional<int> penalty_dims;
};

// ||w||^2 restricted to the coordinates the penalty covers.
double penalized_sqnorm(const HingeSpec& spec, const Vec& w);

double linear_score(const Vec& w, const Vec& x);

double hinge_value(const HingeSpec& spec, const Vec& w, const Vec& x, int y);

// Subgradient; at the kink (margin exactly equal to the target) the hinge term
// contributes zero, matching the flat side.
Vec hinge_gradient(const HingeSpec& spec, const Vec& w, const Vec& x, int y);

// --- multiclass -------------------------------------------------------------

using ClassWeights = std::vector<Vec>;  // one weight vector per class

std::vector<double> class_scores(const ClassWeights& weights, const Vec& x);

// Highest-scoring class; ties resolve to the lowest index.
int top_class(const std::vector<double>& scores);

// Score of the true class minus the best rival: psi = s[y] - max_{k != y} s[k].
// Positive iff the point is classified correctly with a margin.
double multiclass_margin(const std::vector<double>& scores, int true_class);

// Gap between the top two scores; the margin of the predicted class.
double confidence_score(const std::vector<double>& scores);

// f(W; x, y) = max{0, margin_target - psi(W)} + penalty * sum_k ||W_k||^2.
double multiclass_hinge_value(const HingeSpec& spec, const ClassWeights& weights,
                              const Vec& x, int y);

ClassWeights multiclass_hinge_gradient(const HingeSpec& spec, const ClassWeights& weights,
                                       const Vec& x, int y);

}  // namespace osamd
