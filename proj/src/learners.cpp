#include "osamd/learners.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace osamd {

double query_probability(double sigma, double confidence) {
  if (!(sigma > 0.0)) throw std::invalid_argument("query_probability: sigma must be positive");
  if (confidence < 0.0) {
    throw std::invalid_argument("query_probability: confidence must be non-negative");
  }
  return sigma / (sigma + confidence);
}

double aggressive_stepsize_from_margin(const OsamdParams& params, double value,
                                       double grad_norm_sq) {
  if (grad_norm_sq <= 0.0) return 0.0;
  const double tau = std::max(0.0, params.aggressive_margin() - value) / grad_norm_sq;
  return params.separable_mode ? tau : std::min(params.tau_cap, tau);
}

double aggressive_stepsize(const OsamdParams& params, int y, double score,
                           double grad_norm_sq) {
  if (y != 1 && y != -1) {
    throw std::invalid_argument("aggressive_stepsize: label must be +1 or -1");
  }
  return aggressive_stepsize_from_margin(params, y * score, grad_norm_sq);
}

namespace {

int sign_label(double score) { return score >= 0.0 ? 1 : -1; }

DifferentiableLoss hinge_at(const HingeSpec& spec, const Vec& x, int y) {
  return {[&spec, &x, y](const Vec& w) { return hinge_value(spec, w, x, y); },
          [&spec, &x, y](const Vec& w) { return hinge_gradient(spec, w, x, y); }};
}

// Shared body of the three binary variants. self_adapt toggles the proximal
// decision step AND pseudolabel learning: without it the conservative model
// updates only on queried rounds (true labels reach it, pseudolabels never do).
template <typename ProbFn>
OsamdRound osamd_round_impl(const OsamdState& state, const Vec& x, LabelOracle& oracle,
                            Rng& rng, bool self_adapt, const ProbFn& prob) {
  check_same_dim(state.aggressive, x, "osamd_round");
  check_same_dim(state.anchor, x, "osamd_round");
  OsamdRound r;
  r.state = state;
  const OsamdParams& p = state.params;

  const double agg_score = linear_score(state.aggressive, x);
  const int pseudolabel = sign_label(agg_score);

  r.decision = self_adapt
                   ? proximal_step(state.geometry, state.anchor,
                                   hinge_at(state.loss, x, pseudolabel), p.eta,
                                   p.inner_iterations, p.prox_rate())
                   : state.anchor;

  const double confidence = std::abs(agg_score);
  const double prob_query = prob(p.sigma, confidence);
  const bool queried = rng.bernoulli(prob_query);  // the round's only draw

  int label_for_update = pseudolabel;
  if (queried) {
    const int y = oracle.query_for_update();
    label_for_update = y;
    const double tau = aggressive_stepsize(p, y, agg_score, squared_norm(x));
    if (tau > 0.0) {
      Vec theta = r.state.aggressive;
      axpy(tau * y, x, theta);
      r.state.aggressive = project(state.geometry, std::move(theta));
    }
  }
  if (self_adapt || queried) {
    r.state.anchor = mirror_step(state.geometry, state.anchor,
                                 hinge_gradient(state.loss, r.decision, x, label_for_update),
                                 p.eta);
  }

  const int truth = oracle.peek_for_metrics();
  r.outcome.decision_score = linear_score(r.decision, x);
  r.outcome.predicted_label = sign_label(r.outcome.decision_score);
  r.outcome.pseudolabel = pseudolabel;
  r.outcome.confidence = confidence;
  r.outcome.query_probability = prob_query;
  r.outcome.queried = queried;
  r.outcome.mistake = pseudolabel != truth;
  r.outcome.instantaneous_loss = hinge_value(state.loss, r.decision, x, truth);
  return r;
}

}  // namespace

OsamdRound osamd_round(const OsamdState& state, const Vec& x, LabelOracle& oracle,
                       Rng& rng, const QueryProbabilityFn& prob_fn) {
  if (prob_fn) return osamd_round_impl(state, x, oracle, rng, true, prob_fn);
  return osamd_round_impl(state, x, oracle, rng, true, query_probability);
}

OsamdRound osamd_no_selfadapt_round(const OsamdState& state, const Vec& x,
                                    LabelOracle& oracle, Rng& rng,
                                    const QueryProbabilityFn& prob_fn) {
  if (prob_fn) return osamd_round_impl(state, x, oracle, rng, false, prob_fn);
  return osamd_round_impl(state, x, oracle, rng, false, query_probability);
}

OsamdRound osamd_no_active_round(const OsamdState& state, const Vec& x,
                                 LabelOracle& oracle, double query_rate, Rng& rng) {
  if (query_rate < 0.0 || query_rate > 1.0) {
    throw std::invalid_argument("osamd_no_active_round: query_rate must lie in [0, 1]");
  }
  return osamd_round_impl(state, x, oracle, rng, true,
                          [query_rate](double, double) { return query_rate; });
}

OmdRound omd_round(const OmdState& state, const Vec& x, LabelOracle& oracle,
                   const QueryPolicy& policy, Rng& rng) {
  check_same_dim(state.model, x, "omd_round");
  OmdRound r;
  r.state = state;
  r.decision = state.model;

  const double score = linear_score(state.model, x);
  const int predicted = sign_label(score);

  bool queried = true;
  double prob = 1.0;
  if (policy.kind == QueryPolicy::Kind::kBernoulli) {
    if (policy.rate < 0.0 || policy.rate > 1.0) {
      throw std::invalid_argument("omd_round: query rate must lie in [0, 1]");
    }
    prob = policy.rate;
    queried = rng.bernoulli(prob);
  }
  if (queried) {
    const int y = oracle.query_for_update();
    r.state.model = mirror_step(state.geometry, state.model,
                                hinge_gradient(state.loss, state.model, x, y), state.eta);
  }

  const int truth = oracle.peek_for_metrics();
  r.outcome.decision_score = score;
  r.outcome.predicted_label = predicted;
  r.outcome.pseudolabel = predicted;
  r.outcome.confidence = std::abs(score);
  r.outcome.query_probability = prob;
  r.outcome.queried = queried;
  r.outcome.mistake = predicted != truth;
  r.outcome.instantaneous_loss = hinge_value(state.loss, state.model, x, truth);
  return r;
}

PaaRound paa_round(const PaaState& state, const Vec& x, LabelOracle& oracle, Rng& rng) {
  check_same_dim(state.model, x, "paa_round");
  PaaRound r;
  r.state = state;
  r.decision = state.model;

  const double score = linear_score(state.model, x);
  const int predicted = sign_label(score);
  const double prob = query_probability(state.params.delta, std::abs(score));
  const bool queried = rng.bernoulli(prob);

  if (queried) {
    const int y = oracle.query_for_update();
    const double hinge = std::max(0.0, state.loss.margin_target - y * score);
    const double xx = squared_norm(x);
    if (hinge > 0.0 && xx > 0.0) {
      const double tau = std::min(state.params.cap, hinge / xx);
      Vec w = state.model;
      axpy(tau * y, x, w);
      r.state.model = project(state.geometry, std::move(w));
    }
  }

  const int truth = oracle.peek_for_metrics();
  r.outcome.decision_score = score;
  r.outcome.predicted_label = predicted;
  r.outcome.pseudolabel = predicted;
  r.outcome.confidence = std::abs(score);
  r.outcome.query_probability = prob;
  r.outcome.queried = queried;
  r.outcome.mistake = predicted != truth;
  r.outcome.instantaneous_loss = hinge_value(state.loss, state.model, x, truth);
  return r;
}

namespace {

Vec flatten(const ClassWeights& weights) {
  Vec out;
  for (const auto& w : weights) out.insert(out.end(), w.begin(), w.end());
  return out;
}

ClassWeights unflatten(const Vec& flat, int n_classes, std::size_t dim) {
  ClassWeights out(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    out[k].assign(flat.begin() + k * dim, flat.begin() + (k + 1) * dim);
  }
  return out;
}

// The feasible set bounds the flattened (Frobenius) norm of the class stack.
ClassWeights project_classes(const BregmanGeometry& geom, const ClassWeights& weights) {
  if (!geom.radius) return weights;
  return unflatten(project(geom, flatten(weights)), static_cast<int>(weights.size()),
                   weights.front().size());
}

int best_rival_class(const std::vector<double>& scores, int y) {
  int rival = y == 0 ? 1 : 0;
  for (int k = 0; k < static_cast<int>(scores.size()); ++k) {
    if (k != y && scores[k] > scores[rival]) rival = k;
  }
  return rival;
}

}  // namespace

MosamdRound mosamd_round(const MosamdState& state, const Vec& x, LabelOracle& oracle,
                         Rng& rng, const QueryProbabilityFn& prob_fn) {
  if (state.aggressive.size() < 2 || state.aggressive.size() != state.anchor.size()) {
    throw std::invalid_argument("mosamd_round: malformed class weights");
  }
  MosamdRound r;
  r.state = state;
  const OsamdParams& p = state.params;
  const int n_classes = static_cast<int>(state.aggressive.size());
  const std::size_t dim = x.size();

  const auto agg_scores = class_scores(state.aggressive, x);
  const int pseudolabel = top_class(agg_scores);
  const double confidence = confidence_score(agg_scores);

  {
    // Proximal self-adaptation over the flattened class stack.
    DifferentiableLoss loss{
        [&](const Vec& flat) {
          return multiclass_hinge_value(state.loss, unflatten(flat, n_classes, dim), x,
                                        pseudolabel);
        },
        [&](const Vec& flat) {
          return flatten(multiclass_hinge_gradient(
              state.loss, unflatten(flat, n_classes, dim), x, pseudolabel));
        }};
    const Vec prox = proximal_step(state.geometry, flatten(state.anchor), loss, p.eta,
                                   p.inner_iterations, p.prox_rate());
    r.decision = unflatten(prox, n_classes, dim);
  }

  const double prob_query =
      prob_fn ? prob_fn(p.sigma, confidence) : query_probability(p.sigma, confidence);
  const bool queried = rng.bernoulli(prob_query);

  int label_for_update = pseudolabel;
  if (queried) {
    const int y = oracle.query_for_update();
    label_for_update = y;
    const double margin = multiclass_margin(agg_scores, y);
    // The margin's gradient moves the true class up and its rival down, so its
    // squared norm is 2 ||x||^2.
    const double tau = aggressive_stepsize_from_margin(p, margin, 2.0 * squared_norm(x));
    if (tau > 0.0) {
      const int rival = best_rival_class(agg_scores, y);
      ClassWeights theta = r.state.aggressive;
      axpy(tau, x, theta[y]);
      axpy(-tau, x, theta[rival]);
      r.state.aggressive = project_classes(state.geometry, theta);
    }
  }
  {
    const auto grad = multiclass_hinge_gradient(state.loss, r.decision, x, label_for_update);
    ClassWeights anchor = state.anchor;
    for (int k = 0; k < n_classes; ++k) axpy(-p.eta, grad[k], anchor[k]);
    r.state.anchor = project_classes(state.geometry, anchor);
  }

  const int truth = oracle.peek_for_metrics();
  const auto decision_scores = class_scores(r.decision, x);
  r.outcome.predicted_label = top_class(decision_scores);
  r.outcome.decision_score = decision_scores[r.outcome.predicted_label];
  r.outcome.pseudolabel = pseudolabel;
  r.outcome.confidence = confidence;
  r.outcome.query_probability = prob_query;
  r.outcome.queried = queried;
  r.outcome.mistake = pseudolabel != truth;
  r.outcome.instantaneous_loss = multiclass_hinge_value(state.loss, r.decision, x, truth);
  return r;
}

Vec pretrain_binary(const std::vector<Sample>& pool, const HingeSpec& spec,
                    const BregmanGeometry& geom, int epochs, double rate, Rng& rng,
                    std::optional<Vec> init, int dim) {
  if (epochs < 0) throw std::invalid_argument("pretrain_binary: negative epochs");
  const std::size_t d = init ? init->size()
                             : (!pool.empty() ? pool.front().x.size()
                                              : static_cast<std::size_t>(std::max(dim, 0)));
  if (d == 0) throw std::invalid_argument("pretrain_binary: cannot infer dimension");
  Vec w = init ? project(geom, *std::move(init)) : Vec(d, 0.0);
  if (epochs == 0 || pool.empty()) return w;

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
      std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    }
    for (std::size_t i : order) {
      w = mirror_step(geom, w, hinge_gradient(spec, w, pool[i].x, pool[i].label), rate);
    }
  }
  return w;
}

ClassWeights pretrain_multiclass(const std::vector<Sample>& pool, const HingeSpec& spec,
                                 const BregmanGeometry& geom, int n_classes, int epochs,
                                 double rate, Rng& rng) {
  if (n_classes < 2) throw std::invalid_argument("pretrain_multiclass: n_classes >= 2");
  if (epochs < 0) throw std::invalid_argument("pretrain_multiclass: negative epochs");
  if (pool.empty()) throw std::invalid_argument("pretrain_multiclass: empty pool");
  const std::size_t d = pool.front().x.size();
  ClassWeights w(n_classes, Vec(d, 0.0));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    }
    for (std::size_t i : order) {
      const auto grad = multiclass_hinge_gradient(spec, w, pool[i].x, pool[i].label);
      for (int k = 0; k < n_classes; ++k) axpy(-rate, grad[k], w[k]);
      w = project_classes(geom, w);
    }
  }
  return w;
}

}  // namespace osamd
