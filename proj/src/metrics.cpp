#include "osamd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace osamd {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double expected_hinge_of_gaussian_margin(double margin_target, double mean, double sd) {
  if (sd < 0.0) throw std::invalid_argument("expected_hinge_of_gaussian_margin: sd < 0");
  const double d = margin_target - mean;
  if (sd == 0.0) return std::max(0.0, d);
  const double u = d / sd;
  return d * normal_cdf(u) + sd * normal_pdf(u);
}

namespace {

void check_gaussian_dim(const Vec& w, const RotatingGaussianConfig& cfg, const char* where) {
  const std::size_t want = cfg.augment_bias ? 3 : 2;
  if (w.size() != want) {
    throw std::invalid_argument(std::string(where) + ": expected dimension " +
                                std::to_string(want) + ", got " + std::to_string(w.size()));
  }
}

// Margin distribution of class `label` at round t: y w'x is Gaussian with
// this mean and standard deviation (the bias coordinate adds no variance).
void margin_moments(const Vec& w, const RotatingGaussianConfig& cfg, int label, int t,
                    double& mean, double& sd) {
  const auto c = gaussian_center(cfg, label, t);
  double m = w[0] * c[0] + w[1] * c[1];
  if (cfg.augment_bias) m += w[2];
  mean = label * m;
  sd = std::sqrt(cfg.covariance_scale) * std::hypot(w[0], w[1]);
}

}  // namespace

double expected_hinge_gaussian(const HingeSpec& spec, const Vec& w,
                               const RotatingGaussianConfig& cfg, int t) {
  check_gaussian_dim(w, cfg, "expected_hinge_gaussian");
  double total = spec.penalty * penalized_sqnorm(spec, w);
  const double balance[2] = {cfg.class_balance, 1.0 - cfg.class_balance};
  const int labels[2] = {1, -1};
  for (int i = 0; i < 2; ++i) {
    if (balance[i] == 0.0) continue;
    double mean, sd;
    margin_moments(w, cfg, labels[i], t, mean, sd);
    total += balance[i] * expected_hinge_of_gaussian_margin(spec.margin_target, mean, sd);
  }
  return total;
}

Vec expected_hinge_gaussian_gradient(const HingeSpec& spec, const Vec& w,
                                     const RotatingGaussianConfig& cfg, int t) {
  check_gaussian_dim(w, cfg, "expected_hinge_gaussian_gradient");
  Vec g(w.size(), 0.0);
  {
    const std::size_t span =
        spec.penalty_dims ? std::min(w.size(), static_cast<std::size_t>(
                                                   std::max(*spec.penalty_dims, 0)))
                          : w.size();
    for (std::size_t i = 0; i < span; ++i) g[i] = 2.0 * spec.penalty * w[i];
  }
  const double feat_norm = std::hypot(w[0], w[1]);
  const double balance[2] = {cfg.class_balance, 1.0 - cfg.class_balance};
  const int labels[2] = {1, -1};
  for (int i = 0; i < 2; ++i) {
    if (balance[i] == 0.0) continue;
    double mean, sd;
    margin_moments(w, cfg, labels[i], t, mean, sd);
    const auto c = gaussian_center(cfg, labels[i], t);
    const double d = spec.margin_target - mean;
    if (sd == 0.0) {
      // Point mass: subgradient of max{0, d}, flat side at the kink.
      if (d > 0.0) {
        g[0] -= balance[i] * labels[i] * c[0];
        g[1] -= balance[i] * labels[i] * c[1];
        if (cfg.augment_bias) g[2] -= balance[i] * labels[i];
      }
      continue;
    }
    // dE = Phi(u) dd + phi(u) dsd with u = d / sd (the u-derivative terms cancel)
    const double u = d / sd;
    const double cdf = normal_cdf(u), pdf = normal_pdf(u);
    g[0] += balance[i] * (-cdf * labels[i] * c[0]);
    g[1] += balance[i] * (-cdf * labels[i] * c[1]);
    if (cfg.augment_bias) g[2] += balance[i] * (-cdf * labels[i]);
    if (feat_norm > 0.0) {
      const double k = std::sqrt(cfg.covariance_scale) / feat_norm;
      g[0] += balance[i] * pdf * k * w[0];
      g[1] += balance[i] * pdf * k * w[1];
    }
  }
  return g;
}

namespace {

// Label of point_pos at round t; point_neg carries the opposite one.
int flip_label(const LabelFlipConfig& cfg, int t) { return t <= cfg.horizon / 2 ? 1 : -1; }

}  // namespace

double expected_hinge_label_flip(const HingeSpec& spec, const Vec& w,
                                 const LabelFlipConfig& cfg, int t) {
  const int y = flip_label(cfg, t);
  const Vec a{cfg.point_pos[0], cfg.point_pos[1]};
  const Vec b{cfg.point_neg[0], cfg.point_neg[1]};
  return 0.5 * hinge_value(spec, w, a, y) + 0.5 * hinge_value(spec, w, b, -y);
}

Vec expected_hinge_label_flip_gradient(const HingeSpec& spec, const Vec& w,
                                       const LabelFlipConfig& cfg, int t) {
  const int y = flip_label(cfg, t);
  const Vec a{cfg.point_pos[0], cfg.point_pos[1]};
  const Vec b{cfg.point_neg[0], cfg.point_neg[1]};
  Vec g = hinge_gradient(spec, w, a, y);
  const Vec gb = hinge_gradient(spec, w, b, -y);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.5 * (g[i] + gb[i]);
  return g;
}

McEstimate mc_expected_loss(const std::function<Sample(Rng&)>& sampler,
                            const std::function<double(const Sample&)>& loss_of, int n,
                            Rng& rng) {
  if (n < 2) throw std::invalid_argument("mc_expected_loss: need n >= 2");
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = loss_of(sampler(rng));
    const double delta = v - mean;
    mean += delta / (i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / (n - 1);
  return {mean, std::sqrt(std::max(0.0, var) / n), n};
}

ExpectedLoss gaussian_expected_loss(const HingeSpec& spec, const RotatingGaussianConfig& cfg) {
  ExpectedLoss out;
  out.dim = cfg.augment_bias ? 3 : 2;
  out.value = [spec, cfg](const Vec& w, int t) {
    return expected_hinge_gaussian(spec, w, cfg, t);
  };
  out.gradient = [spec, cfg](const Vec& w, int t) {
    return expected_hinge_gaussian_gradient(spec, w, cfg, t);
  };
  out.round_key = [cfg](int t) {
    // Rounds with the same rotation angle (to 1e-6 rad) share a comparator.
    return std::llround(rotation_angle(cfg.total_rotation, t, cfg.horizon) * 1e6);
  };
  out.warm_start = [cfg](const Vec& base, int t) {
    // The whole problem rotates rigidly, so the minimizer rotates too.
    const double angle = rotation_angle(cfg.total_rotation, t, cfg.horizon);
    const auto rotated = rotate_point({base[0], base[1]}, angle);
    Vec w = base;
    w[0] = rotated[0];
    w[1] = rotated[1];
    return w;
  };
  return out;
}

ExpectedLoss label_flip_expected_loss(const HingeSpec& spec, const LabelFlipConfig& cfg) {
  ExpectedLoss out;
  out.dim = 2;
  out.value = [spec, cfg](const Vec& w, int t) {
    return expected_hinge_label_flip(spec, w, cfg, t);
  };
  out.gradient = [spec, cfg](const Vec& w, int t) {
    return expected_hinge_label_flip_gradient(spec, w, cfg, t);
  };
  out.round_key = [cfg](int t) { return static_cast<std::int64_t>(flip_label(cfg, t)); };
  out.warm_start = [cfg](const Vec& base, int t) {
    // Flipping every label negates the minimizer.
    return flip_label(cfg, t) == flip_label(cfg, 1) ? base : scaled(base, -1.0);
  };
  return out;
}

ComparatorOracle::ComparatorOracle(ExpectedLoss loss, BregmanGeometry geometry)
    : ComparatorOracle(std::move(loss), std::move(geometry), Options()) {}

ComparatorOracle::ComparatorOracle(ExpectedLoss loss, BregmanGeometry geometry, Options options)
    : loss_(std::move(loss)), geometry_(std::move(geometry)), options_(options) {
  if (loss_.dim <= 0) throw std::invalid_argument("ComparatorOracle: loss.dim must be positive");
}

ComparatorOracle::Entry ComparatorOracle::at(int t) {
  const std::int64_t key = loss_.round_key(t);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  Entry e = solve(t, true);
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.emplace(key, std::move(e)).first->second;
}

const ComparatorOracle::Entry& ComparatorOracle::base() const {
  std::call_once(base_once_, [this] { base_entry_ = solve(loss_.base_round, false); });
  return base_entry_;
}

ComparatorOracle::Entry ComparatorOracle::solve(int t, bool allow_warm) const {
  // Projected gradient descent with Armijo backtracking from several
  // deterministic starts; keyed per round, independent of evaluation order.
  // The losses are convex, so the first start that reaches stationarity is
  // accepted; the remaining starts exist as a fallback.
  const auto value = [&](const Vec& w) { return loss_.value(w, t); };
  const auto gradient = [&](const Vec& w) { return loss_.gradient(w, t); };

  std::vector<Vec> starts;
  if (allow_warm && loss_.warm_start &&
      loss_.round_key(t) != loss_.round_key(loss_.base_round)) {
    starts.push_back(project(geometry_, loss_.warm_start(base().w, t)));
  }
  starts.emplace_back(loss_.dim, 0.0);
  Rng start_rng(mix_seed(0x6f7261636c65ull, static_cast<std::uint64_t>(loss_.round_key(t))));
  for (int s = 0; s < 3; ++s) {
    Vec w(loss_.dim);
    for (auto& c : w) c = start_rng.uniform(-2.0, 2.0);
    starts.push_back(project(geometry_, std::move(w)));
  }

  Entry best;
  bool have_best = false;
  for (const auto& start : starts) {
    Vec w = project(geometry_, start);
    double fw = value(w);
    double step = 1.0;
    double pg_norm = 0.0;
    bool converged = false;
    for (int it = 0; it < options_.max_iterations; ++it) {
      const Vec g = gradient(w);
      // Projected-gradient stationarity measure at unit step.
      Vec probe = w;
      axpy(-1.0, g, probe);
      probe = project(geometry_, probe);
      pg_norm = norm(sub(w, probe));
      if (pg_norm <= options_.tolerance) {
        converged = true;
        break;
      }

      bool moved = false;
      while (step > 1e-18) {
        Vec cand = w;
        axpy(-step, g, cand);
        cand = project(geometry_, cand);
        const double fc = value(cand);
        if (fc <= fw - 1e-4 * step * squared_norm(g) || fc < fw) {
          w = std::move(cand);
          fw = fc;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
      step = std::min(step * 2.0, 1e3);
    }
    if (!have_best || fw < best.value) {
      best = {w, fw, pg_norm};
      have_best = true;
    }
    if (converged) break;
  }
  return best;
}

std::string ComparatorOracle::dump_cache() const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::ostringstream out;
  out.precision(17);
  for (const auto& [key, e] : cache_) {
    out << key << ' ' << e.value << ' ' << e.grad_norm;
    for (double c : e.w) out << ' ' << c;
    out << '\n';
  }
  return out.str();
}

int ComparatorOracle::load_cache(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int accepted = 0;
  std::lock_guard<std::mutex> lock(mutex_);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::int64_t key;
    Entry e;
    if (!(row >> key >> e.value >> e.grad_norm)) continue;
    e.w.resize(loss_.dim);
    bool ok = true;
    for (auto& c : e.w) ok = ok && static_cast<bool>(row >> c);
    if (!ok) continue;
    cache_[key] = std::move(e);
    ++accepted;
  }
  return accepted;
}

std::vector<double> dynamic_regret(const std::vector<double>& expected_losses,
                                   const std::vector<double>& comparator_losses) {
  if (expected_losses.size() != comparator_losses.size()) {
    throw std::invalid_argument("dynamic_regret: series length mismatch");
  }
  std::vector<double> out(expected_losses.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    acc += expected_losses[i] - comparator_losses[i];
    out[i] = acc;
  }
  return out;
}

double RunRecord::accuracy() const {
  if (steps.empty()) return 0.0;
  double c = 0.0;
  for (const auto& s : steps) c += s.correct ? 1.0 : 0.0;
  return c / steps.size();
}

double RunRecord::query_fraction() const {
  if (steps.empty()) return 0.0;
  double q = 0.0;
  for (const auto& s : steps) q += s.queried ? 1.0 : 0.0;
  return q / steps.size();
}

double RunRecord::accumulated_loss() const {
  double acc = 0.0;
  for (const auto& s : steps) acc += s.instantaneous_loss;
  return acc;
}

int RunRecord::mistake_count() const {
  int m = 0;
  for (const auto& s : steps) m += s.mistake ? 1 : 0;
  return m;
}

std::vector<double> RunRecord::regret_curve() const {
  std::vector<double> expected, comparator;
  expected.reserve(steps.size());
  comparator.reserve(steps.size());
  for (const auto& s : steps) {
    if (!s.expected_loss || !s.comparator_loss) return {};
    expected.push_back(*s.expected_loss);
    comparator.push_back(*s.comparator_loss);
  }
  return dynamic_regret(expected, comparator);
}

std::optional<double> RunRecord::final_regret() const {
  const auto curve = regret_curve();
  if (curve.empty()) return std::nullopt;
  return curve.back();
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int dof) {
  const double v = static_cast<double>(dof);
  const double x = v / (v + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * v, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

}  // namespace

double student_t_quantile(double p, int dof) {
  if (dof < 1) throw std::invalid_argument("student_t_quantile: dof must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("student_t_quantile: p in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, dof);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, dof) < p && hi < 1e300) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

CiSummary aggregate_mean_ci(const std::vector<double>& values, double confidence) {
  if (values.empty()) throw std::invalid_argument("aggregate_mean_ci: no values");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("aggregate_mean_ci: confidence in (0, 1)");
  }
  const int n = static_cast<int>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (n == 1) return {mean, 0.0, 1};  // no dispersion estimate from one run
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  const double q = student_t_quantile(0.5 + 0.5 * confidence, n - 1);
  return {mean, q * sd / std::sqrt(static_cast<double>(n)), n};
}

}  // namespace osamd
