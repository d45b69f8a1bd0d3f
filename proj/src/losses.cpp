#include "osamd/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace osamd {

namespace {

void check_binary_label(int y, const char* where) {
  if (y != 1 && y != -1) {
    throw std::invalid_argument(std::string(where) + ": label must be +1 or -1, got " +
                                std::to_string(y));
  }
}

void check_class(const std::vector<double>& scores, int y, const char* where) {
  if (scores.size() < 2) {
    throw std::invalid_argument(std::string(where) + ": need at least two classes");
  }
  if (y < 0 || static_cast<std::size_t>(y) >= scores.size()) {
    throw std::invalid_argument(std::string(where) + ": class index out of range");
  }
}

// Best rival class: argmax over k != y, lowest index on ties.
int best_rival(const std::vector<double>& scores, int y) {
  int rival = y == 0 ? 1 : 0;
  for (int k = 0; k < static_cast<int>(scores.size()); ++k) {
    if (k == y) continue;
    if (scores[k] > scores[rival]) rival = k;
  }
  return rival;
}

// Coordinates covered by the penalty term.
std::size_t penalty_span(const HingeSpec& spec, std::size_t dim) {
  if (!spec.penalty_dims) return dim;
  return std::min(dim, static_cast<std::size_t>(std::max(*spec.penalty_dims, 0)));
}

}  // namespace

double penalized_sqnorm(const HingeSpec& spec, const Vec& w) {
  const std::size_t span = penalty_span(spec, w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < span; ++i) s += w[i] * w[i];
  return s;
}

double linear_score(const Vec& w, const Vec& x) { return dot(w, x); }

double hinge_value(const HingeSpec& spec, const Vec& w, const Vec& x, int y) {
  check_binary_label(y, "hinge_value");
  const double margin = y * linear_score(w, x);
  return std::max(0.0, spec.margin_target - margin) + spec.penalty * penalized_sqnorm(spec, w);
}

Vec hinge_gradient(const HingeSpec& spec, const Vec& w, const Vec& x, int y) {
  check_binary_label(y, "hinge_gradient");
  check_same_dim(w, x, "hinge_gradient");
  Vec g(w.size(), 0.0);
  const std::size_t span = penalty_span(spec, w.size());
  for (std::size_t i = 0; i < span; ++i) g[i] = 2.0 * spec.penalty * w[i];
  const double margin = y * linear_score(w, x);
  if (margin < spec.margin_target) axpy(-static_cast<double>(y), x, g);
  return g;
}

std::vector<double> class_scores(const ClassWeights& weights, const Vec& x) {
  std::vector<double> scores(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) scores[k] = dot(weights[k], x);
  return scores;
}

int top_class(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("top_class: empty scores");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

double multiclass_margin(const std::vector<double>& scores, int true_class) {
  check_class(scores, true_class, "multiclass_margin");
  return scores[true_class] - scores[best_rival(scores, true_class)];
}

double confidence_score(const std::vector<double>& scores) {
  const int top = top_class(scores);
  check_class(scores, top, "confidence_score");
  return scores[top] - scores[best_rival(scores, top)];
}

double multiclass_hinge_value(const HingeSpec& spec, const ClassWeights& weights,
                              const Vec& x, int y) {
  const auto scores = class_scores(weights, x);
  check_class(scores, y, "multiclass_hinge_value");
  double reg = 0.0;
  for (const auto& wk : weights) reg += penalized_sqnorm(spec, wk);
  return std::max(0.0, spec.margin_target - multiclass_margin(scores, y)) +
         spec.penalty * reg;
}

ClassWeights multiclass_hinge_gradient(const HingeSpec& spec, const ClassWeights& weights,
                                       const Vec& x, int y) {
  const auto scores = class_scores(weights, x);
  check_class(scores, y, "multiclass_hinge_gradient");
  ClassWeights grad(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    grad[k].assign(weights[k].size(), 0.0);
    const std::size_t span = penalty_span(spec, weights[k].size());
    for (std::size_t i = 0; i < span; ++i) grad[k][i] = 2.0 * spec.penalty * weights[k][i];
  }
  if (multiclass_margin(scores, y) < spec.margin_target) {
    const int rival = best_rival(scores, y);
    axpy(-1.0, x, grad[y]);
    axpy(1.0, x, grad[rival]);
  }
  return grad;
}

}  // namespace osamd
