#pragma once

#include <functional>
#include <optional>

#include "osamd/environments.hpp"
#include "osamd/geometry.hpp"
#include "osamd/losses.hpp"
#include "osamd/rng.hpp"

namespace osamd {

// Ground-truth label source for one round. Requesting a label for learning is
// an explicit, counted act; metrics peek at the label without requesting it.
// Learners must never let peeked labels influence their state.
struct LabelOracle {
  virtual ~LabelOracle() = default;
  virtual int query_for_update() = 0;
  virtual int peek_for_metrics() const = 0;
};

struct FixedLabelOracle final : LabelOracle {
  explicit FixedLabelOracle(int label) : label_(label) {}
  int query_for_update() override {
    ++queries;
    return label_;
  }
  int peek_for_metrics() const override { return label_; }
  int queries = 0;

 private:
  int label_ = 0;
};

struct OsamdParams {
  double sigma = 0.35;  // query scale: P(query) = sigma / (sigma + confidence)
  double eta = 0.01;    // mirror-descent step for both model tracks
  double tau_cap = 1.0; // cap on the aggressive stepsize (ignored in separable mode)
  // Margin the aggressive update restores on queried labels. Defaults to
  // sigma; the experiments decouple it (see configs) so the query scale can be
  // tuned without shrinking the update target.
  std::optional<double> tau_margin;
  int inner_iterations = 20;  // proximal solver budget per round
  // Inner gradient rate for the proximal solver; defaults to eta, making the
  // decision a gentle nudge off the anchor rather than the exact minimizer.
  std::optional<double> inner_rate;
  bool separable_mode = false;  // uncapped stepsize for realizable streams

  double aggressive_margin() const { return tau_margin.value_or(sigma); }
  double prox_rate() const { return inner_rate.value_or(eta); }
};

// P(query) = sigma / (sigma + confidence); decreasing in confidence, 1 at 0.
double query_probability(double sigma, double confidence);

// Stepsize restoring the target margin on the queried example:
//   tau = max{0, margin - value} / grad_norm_sq, capped at tau_cap unless
// separable_mode. `value` is the signed margin y * score (binary) or the
// true-class margin (multiclass).
double aggressive_stepsize_from_margin(const OsamdParams& params, double value,
                                       double grad_norm_sq);
double aggressive_stepsize(const OsamdParams& params, int y, double score,
                           double grad_norm_sq);

// Per-round record of what the learner did and how it fared. `mistake` tracks
// the pseudolabel against the true label; `instantaneous_loss` is the loss of
// the played decision at the true label.
struct RoundOutcome {
  double decision_score = 0.0;
  int predicted_label = 0;
  int pseudolabel = 0;
  double confidence = 0.0;
  double query_probability = 0.0;
  bool queried = false;
  bool mistake = false;
  double instantaneous_loss = 0.0;
};

// Test hook: replaces the query probability map while keeping everything else
// (a constant 1.0 forces queries; a constant 0.0 silences them).
using QueryProbabilityFn = std::function<double(double sigma, double confidence)>;

// Two coupled model tracks. `aggressive` scores and queries; `anchor` is the
// conservative mirror-descent iterate the played decision adapts from.
struct OsamdState {
  Vec aggressive;
  Vec anchor;
  BregmanGeometry geometry;
  HingeSpec loss;
  OsamdParams params;
};

struct OsamdRound {
  OsamdState state;
  Vec decision;
  RoundOutcome outcome;
};

// One round: pseudolabel from the aggressive model, proximal self-adaptation
// of the anchor toward that pseudolabel, a Bernoulli label query driven by the
// aggressive confidence, then a margin-restoring aggressive update on queried
// labels and a conservative mirror step on the (pseudo)label either way.
// Consumes exactly one uniform draw per round.
OsamdRound osamd_round(const OsamdState& state, const Vec& x, LabelOracle& oracle,
                       Rng& rng, const QueryProbabilityFn& prob_fn = {});

// Ablation: plays the anchor directly and learns from queried labels only;
// the margin-driven query pattern is kept, pseudolabels never reach the model.
OsamdRound osamd_no_selfadapt_round(const OsamdState& state, const Vec& x,
                                    LabelOracle& oracle, Rng& rng,
                                    const QueryProbabilityFn& prob_fn = {});

// Ablation: queries at a fixed rate instead of by confidence.
OsamdRound osamd_no_active_round(const OsamdState& state, const Vec& x,
                                 LabelOracle& oracle, double query_rate, Rng& rng);

// --- plain online mirror descent --------------------------------------------

struct QueryPolicy {
  enum class Kind { kAlways, kBernoulli } kind = Kind::kAlways;
  double rate = 1.0;
  static QueryPolicy always() { return {Kind::kAlways, 1.0}; }
  static QueryPolicy bernoulli(double rate) { return {Kind::kBernoulli, rate}; }
};

struct OmdState {
  Vec model;
  BregmanGeometry geometry;
  HingeSpec loss;
  double eta = 0.01;
};

struct OmdRound {
  OmdState state;
  Vec decision;
  RoundOutcome outcome;
};

// Mirror descent on observed labels only; rounds without a label leave the
// model untouched. The Always policy consumes no randomness.
OmdRound omd_round(const OmdState& state, const Vec& x, LabelOracle& oracle,
                   const QueryPolicy& policy, Rng& rng);

// --- passive-aggressive active baseline --------------------------------------

struct PaaParams {
  double delta = 0.35;  // query scale, same role as sigma
  double cap = 1.0;     // aggressiveness cap on the update stepsize
};

struct PaaState {
  Vec model;
  BregmanGeometry geometry;
  HingeSpec loss;
  PaaParams params;
};

struct PaaRound {
  PaaState state;
  Vec decision;
  RoundOutcome outcome;
};

// Margin-based query, then a capped passive-aggressive correction
// tau = min{cap, hinge / ||x||^2} on queried labels.
PaaRound paa_round(const PaaState& state, const Vec& x, LabelOracle& oracle, Rng& rng);

// --- multiclass variant -------------------------------------------------------

struct MosamdState {
  ClassWeights aggressive;
  ClassWeights anchor;
  BregmanGeometry geometry;  // radius constrains the flattened (Frobenius) norm
  HingeSpec loss;
  OsamdParams params;
};

struct MosamdRound {
  MosamdState state;
  ClassWeights decision;
  RoundOutcome outcome;
};

// Multiclass round: pseudolabel = top class, confidence = top-two score gap,
// aggressive update pushes the true class above its best rival.
MosamdRound mosamd_round(const MosamdState& state, const Vec& x, LabelOracle& oracle,
                         Rng& rng, const QueryProbabilityFn& prob_fn = {});

// --- pretraining ---------------------------------------------------------------

// Plain SGD passes over a shuffled pool; epochs == 0 returns the projected
// init (or zeros). Used to produce the shared warm start for every learner.
Vec pretrain_binary(const std::vector<Sample>& pool, const HingeSpec& spec,
                    const BregmanGeometry& geom, int epochs, double rate, Rng& rng,
                    std::optional<Vec> init = std::nullopt, int dim = 0);

ClassWeights pretrain_multiclass(const std::vector<Sample>& pool, const HingeSpec& spec,
                                 const BregmanGeometry& geom, int n_classes, int epochs,
                                 double rate, Rng& rng);

}  // namespace osamd
