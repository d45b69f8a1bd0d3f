#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "osamd/environments.hpp"
#include "osamd/losses.hpp"
#include "osamd/geometry.hpp"
#include "osamd/rng.hpp"

namespace osamd {

double normal_pdf(double x);
double normal_cdf(double x);

// E max{0, m_target - z} for z ~ N(mean, sd^2):
//   d * Phi(d / sd) + sd * phi(d / sd),  d = m_target - mean
// (point mass max{0, d} when sd = 0).
double expected_hinge_of_gaussian_margin(double margin_target, double mean, double sd);

// Expected regularized hinge of w under the round-t mixture of the rotating
// Gaussian stream, computed in closed form. The margin y w'x is Gaussian
// within each class, which reduces the expectation to the formula above.
double expected_hinge_gaussian(const HingeSpec& spec, const Vec& w,
                               const RotatingGaussianConfig& cfg, int t);
Vec expected_hinge_gaussian_gradient(const HingeSpec& spec, const Vec& w,
                                     const RotatingGaussianConfig& cfg, int t);

// Exact expected loss under the two-point stream (an average of two hinges).
double expected_hinge_label_flip(const HingeSpec& spec, const Vec& w,
                                 const LabelFlipConfig& cfg, int t);
Vec expected_hinge_label_flip_gradient(const HingeSpec& spec, const Vec& w,
                                       const LabelFlipConfig& cfg, int t);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int n = 0;
};

// Monte-Carlo estimate of E loss_of(sample); the cross-check for the closed
// forms above.
McEstimate mc_expected_loss(const std::function<Sample(Rng&)>& sampler,
                            const std::function<double(const Sample&)>& loss_of, int n,
                            Rng& rng);

// Per-round expected loss with gradient, plus a key identifying rounds that
// share the same distribution (so their comparators coincide). warm_start, if
// set, maps the base round's minimizer to a good starting point for round t
// (e.g. by rotating it along with the stream); it is a hint only, every round
// is still optimized to tolerance.
struct ExpectedLoss {
  std::function<double(const Vec&, int)> value;
  std::function<Vec(const Vec&, int)> gradient;
  std::function<std::int64_t(int)> round_key;
  std::function<Vec(const Vec&, int)> warm_start;
  int base_round = 1;
  int dim = 0;
};

ExpectedLoss gaussian_expected_loss(const HingeSpec& spec, const RotatingGaussianConfig& cfg);
ExpectedLoss label_flip_expected_loss(const HingeSpec& spec, const LabelFlipConfig& cfg);

// Per-round minimizer w_t* of the expected loss over the feasible set, via
// multi-start projected gradient descent with backtracking, cached by
// round_key. Thread-safe; entries are deterministic in (loss, geometry).
class ComparatorOracle {
 public:
  struct Options {
    int max_iterations = 20000;
    // Projected-gradient norm target. Value-based line search bottoms out
    // near sqrt(eps) * curvature, so targets below ~1e-7 only burn budget.
    double tolerance = 1e-6;
  };
  struct Entry {
    Vec w;
    double value = 0.0;
    double grad_norm = 0.0;
  };

  ComparatorOracle(ExpectedLoss loss, BregmanGeometry geometry);
  ComparatorOracle(ExpectedLoss loss, BregmanGeometry geometry, Options options);

  Entry at(int t);

  // Serialization of the cache for reuse across processes.
  std::string dump_cache() const;
  int load_cache(const std::string& text);  // returns entries accepted

 private:
  Entry solve(int t, bool allow_warm) const;
  const Entry& base() const;
  ExpectedLoss loss_;
  BregmanGeometry geometry_;
  Options options_;
  mutable std::once_flag base_once_;
  mutable Entry base_entry_;
  mutable std::mutex mutex_;
  std::map<std::int64_t, Entry> cache_;
};

// Cumulative sums of (expected - comparator); the dynamic regret curve.
std::vector<double> dynamic_regret(const std::vector<double>& expected_losses,
                                   const std::vector<double>& comparator_losses);

// --- run records and aggregation ---------------------------------------------

struct StepRecord {
  double instantaneous_loss = 0.0;
  std::optional<double> expected_loss;    // expected loss of the played decision
  std::optional<double> comparator_loss;  // expected loss of the round's comparator
  bool queried = false;
  bool mistake = false;  // pseudolabel vs truth
  bool correct = false;  // played decision vs truth
};

struct RunRecord {
  std::string learner;
  int repeat = 0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;

  double accuracy() const;
  double query_fraction() const;
  double accumulated_loss() const;
  int mistake_count() const;
  std::vector<double> regret_curve() const;         // empty if expected losses missing
  std::optional<double> final_regret() const;
};

struct CiSummary {
  double mean = 0.0;
  double half_width = 0.0;
  int n = 0;
};

double student_t_quantile(double p, int dof);

// Mean with a two-sided Student-t confidence interval at the given level.
CiSummary aggregate_mean_ci(const std::vector<double>& values, double confidence = 0.90);

}  // namespace osamd
