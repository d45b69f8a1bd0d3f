#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "osamd/rng.hpp"
#include "osamd/vec.hpp"

namespace osamd {

struct Sample {
  Vec x;
  int label = 0;  // +1/-1 for binary streams, class index for multiclass
};

// Two Gaussian classes whose centers rotate rigidly about the origin over the
// horizon: angle(t) = total_rotation * (t-1)/(horizon-1). Class +1 sits on the
// inner center, class -1 on the outer one; covariance is isotropic.
struct RotatingGaussianConfig {
  std::array<double, 2> center_inner{5.0, 0.0};
  std::array<double, 2> center_outer{15.0, 0.0};
  double covariance_scale = 3.0;
  double total_rotation = M_PI;
  int horizon = 2000;
  double class_balance = 0.5;  // P(label = +1)
  bool augment_bias = true;
  int n_pretrain = 2000;  // pretraining pool drawn from the t=1 distribution
};

// Two fixed points whose labels swap halfway through: for t <= horizon/2 the
// point at point_pos carries +1 and point_neg carries -1; afterwards the
// assignment flips. Each round picks one of the two points uniformly.
struct LabelFlipConfig {
  std::array<double, 2> point_pos{-1.0, 0.0};
  std::array<double, 2> point_neg{1.0, 0.0};
  int horizon = 2000;
};

// n_classes Gaussian blobs on a ring, rotating rigidly like the binary stream.
// Class k starts at angle 2*pi*k/n_classes; labels are uniform.
struct RotatingRingConfig {
  int n_classes = 3;
  double ring_radius = 6.0;
  double covariance_scale = 1.0;
  double total_rotation = M_PI / 2.0;
  int horizon = 2000;
  bool augment_bias = true;
  int n_pretrain = 1000;
};

// Replays a CSV file row by row. All columns are numeric features except
// label_column (default: the last column). Binary files must label with +1/-1;
// setting n_classes switches to class indices in [0, n_classes).
struct CsvStreamConfig {
  std::string path;
  std::optional<int> label_column;
  std::optional<int> n_classes;
  bool augment_bias = false;
  std::optional<int> horizon;  // cap on rows used; default: all rows
};

using StreamConfig =
    std::variant<RotatingGaussianConfig, LabelFlipConfig, RotatingRingConfig, CsvStreamConfig>;

// Rotation by `angle` about the origin.
std::array<double, 2> rotate_point(const std::array<double, 2>& p, double angle);

// Shared angle schedule: 0 at t=1 up to total_rotation at t=horizon.
double rotation_angle(double total_rotation, int t, int horizon);

// One draw from the round-t distribution. Consumes the generator; callers that
// need reproducibility per round should pass round_rng(seed, t).
Sample gaussian_sample(const RotatingGaussianConfig& cfg, int t, Rng& rng);
Sample label_flip_sample(const LabelFlipConfig& cfg, int t, Rng& rng);
Sample ring_sample(const RotatingRingConfig& cfg, int t, Rng& rng);

// Center of the given class at round t, bias component excluded.
std::array<double, 2> gaussian_center(const RotatingGaussianConfig& cfg, int label, int t);
std::array<double, 2> ring_center(const RotatingRingConfig& cfg, int label, int t);

// Loads and validates the whole file. Throws std::runtime_error naming the
// offending row/column on malformed numbers, bad labels, or ragged rows.
std::vector<Sample> load_csv_stream(const CsvStreamConfig& cfg);

// Uniform view over the four stream kinds, with per-round determinism baked
// in: sample(t) depends only on (seed, t), never on call order.
class Stream {
 public:
  Stream(StreamConfig config, std::uint64_t seed);

  int horizon() const { return horizon_; }
  int dim() const { return dim_; }              // feature dimension incl. bias
  int n_classes() const { return n_classes_; }
  bool signed_labels() const { return signed_labels_; }  // +1/-1 vs class indices
  std::uint64_t seed() const { return seed_; }
  const StreamConfig& config() const { return config_; }

  Sample sample(int t) const;  // t in [1, horizon]

  // Pretraining pool for synthetic streams (empty for CSV replay).
  std::vector<Sample> pretrain_pool() const;

 private:
  StreamConfig config_;
  std::uint64_t seed_ = 0;
  int horizon_ = 0;
  int dim_ = 0;
  int n_classes_ = 2;
  bool signed_labels_ = true;
  std::vector<Sample> rows_;  // CSV only
};

}  // namespace osamd
