#include "osamd/environments.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace osamd {

std::array<double, 2> rotate_point(const std::array<double, 2>& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1]};
}

double rotation_angle(double total_rotation, int t, int horizon) {
  if (t < 1 || t > horizon) {
    throw std::invalid_argument("rotation_angle: round " + std::to_string(t) +
                                " outside [1, " + std::to_string(horizon) + "]");
  }
  if (horizon <= 1) return 0.0;
  return total_rotation * static_cast<double>(t - 1) / static_cast<double>(horizon - 1);
}

namespace {

Vec with_bias(double x1, double x2, bool augment) {
  return augment ? Vec{x1, x2, 1.0} : Vec{x1, x2};
}

}  // namespace

std::array<double, 2> gaussian_center(const RotatingGaussianConfig& cfg, int label, int t) {
  const auto& base = label == 1 ? cfg.center_inner : cfg.center_outer;
  return rotate_point(base, rotation_angle(cfg.total_rotation, t, cfg.horizon));
}

Sample gaussian_sample(const RotatingGaussianConfig& cfg, int t, Rng& rng) {
  const int label = rng.bernoulli(cfg.class_balance) ? 1 : -1;
  const auto center = gaussian_center(cfg, label, t);
  const double sd = std::sqrt(cfg.covariance_scale);
  const double x1 = center[0] + sd * rng.normal();
  const double x2 = center[1] + sd * rng.normal();
  return {with_bias(x1, x2, cfg.augment_bias), label};
}

Sample label_flip_sample(const LabelFlipConfig& cfg, int t, Rng& rng) {
  if (t < 1 || t > cfg.horizon) {
    throw std::invalid_argument("label_flip_sample: round out of range");
  }
  const bool first_point = rng.bernoulli(0.5);
  const auto& p = first_point ? cfg.point_pos : cfg.point_neg;
  int label = first_point ? 1 : -1;
  if (t > cfg.horizon / 2) label = -label;
  return {Vec{p[0], p[1]}, label};
}

std::array<double, 2> ring_center(const RotatingRingConfig& cfg, int label, int t) {
  const double base = 2.0 * M_PI * label / cfg.n_classes;
  const double angle = base + rotation_angle(cfg.total_rotation, t, cfg.horizon);
  return {cfg.ring_radius * std::cos(angle), cfg.ring_radius * std::sin(angle)};
}

Sample ring_sample(const RotatingRingConfig& cfg, int t, Rng& rng) {
  const int label = rng.uniform_int(cfg.n_classes);
  const auto center = ring_center(cfg, label, t);
  const double sd = std::sqrt(cfg.covariance_scale);
  const double x1 = center[0] + sd * rng.normal();
  const double x2 = center[1] + sd * rng.normal();
  return {with_bias(x1, x2, cfg.augment_bias), label};
}

namespace {

bool parse_double(const std::string& cell, double& out) {
  std::size_t pos = 0;
  try {
    out = std::stod(cell, &pos);
  } catch (const std::exception&) {
    return false;
  }
  while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
  return pos == cell.size();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

[[noreturn]] void csv_error(const std::string& path, int row, int col, const std::string& what) {
  throw std::runtime_error(path + ": row " + std::to_string(row) + ", column " +
                           std::to_string(col) + ": " + what);
}

}  // namespace

std::vector<Sample> load_csv_stream(const CsvStreamConfig& cfg) {
  std::ifstream in(cfg.path);
  if (!in) throw std::runtime_error("cannot open csv stream: " + cfg.path);
  if (cfg.n_classes && *cfg.n_classes < 2) {
    throw std::invalid_argument("csv stream: n_classes must be at least 2");
  }

  std::vector<Sample> samples;
  std::string line;
  int row = 0;
  int n_columns = -1;
  int label_col = -1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);

    if (n_columns < 0) {
      // A first row with any non-numeric cell is a header.
      double tmp;
      bool numeric = true;
      for (const auto& c : cells) numeric = numeric && parse_double(c, tmp);
      n_columns = static_cast<int>(cells.size());
      if (n_columns < 2) csv_error(cfg.path, row, 1, "need at least one feature and a label");
      label_col = cfg.label_column.value_or(n_columns - 1);
      if (label_col < 0 || label_col >= n_columns) {
        throw std::invalid_argument("csv stream: label_column out of range");
      }
      if (!numeric) continue;  // header consumed
    }

    if (static_cast<int>(cells.size()) != n_columns) {
      csv_error(cfg.path, row, static_cast<int>(cells.size()),
                "expected " + std::to_string(n_columns) + " columns");
    }
    Sample s;
    for (int c = 0; c < n_columns; ++c) {
      double v;
      if (!parse_double(cells[c], v)) csv_error(cfg.path, row, c + 1, "not a number: '" + cells[c] + "'");
      if (c == label_col) {
        const int label = static_cast<int>(v);
        if (static_cast<double>(label) != v) csv_error(cfg.path, row, c + 1, "label must be an integer");
        if (cfg.n_classes) {
          if (label < 0 || label >= *cfg.n_classes) {
            csv_error(cfg.path, row, c + 1,
                      "label " + std::to_string(label) + " outside [0, " +
                          std::to_string(*cfg.n_classes) + ")");
          }
        } else if (label != 1 && label != -1) {
          csv_error(cfg.path, row, c + 1,
                    "binary label must be +1 or -1, got " + std::to_string(label));
        }
        s.label = label;
      } else {
        s.x.push_back(v);
      }
    }
    if (cfg.augment_bias) s.x.push_back(1.0);
    samples.push_back(std::move(s));
    if (cfg.horizon && static_cast<int>(samples.size()) >= *cfg.horizon) break;
  }
  if (samples.empty()) throw std::runtime_error("csv stream has no data rows: " + cfg.path);
  return samples;
}

Stream::Stream(StreamConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  if (const auto* g = std::get_if<RotatingGaussianConfig>(&config_)) {
    if (g->horizon < 1) throw std::invalid_argument("stream horizon must be positive");
    if (g->covariance_scale < 0) throw std::invalid_argument("covariance_scale must be >= 0");
    if (g->class_balance < 0 || g->class_balance > 1) {
      throw std::invalid_argument("class_balance must lie in [0, 1]");
    }
    horizon_ = g->horizon;
    dim_ = g->augment_bias ? 3 : 2;
  } else if (const auto* f = std::get_if<LabelFlipConfig>(&config_)) {
    if (f->horizon < 1) throw std::invalid_argument("stream horizon must be positive");
    horizon_ = f->horizon;
    dim_ = 2;
  } else if (const auto* r = std::get_if<RotatingRingConfig>(&config_)) {
    if (r->horizon < 1) throw std::invalid_argument("stream horizon must be positive");
    if (r->n_classes < 2) throw std::invalid_argument("ring stream needs n_classes >= 2");
    if (r->covariance_scale < 0) throw std::invalid_argument("covariance_scale must be >= 0");
    horizon_ = r->horizon;
    dim_ = r->augment_bias ? 3 : 2;
    n_classes_ = r->n_classes;
    signed_labels_ = false;
  } else {
    const auto& c = std::get<CsvStreamConfig>(config_);
    rows_ = load_csv_stream(c);
    horizon_ = static_cast<int>(rows_.size());
    dim_ = static_cast<int>(rows_.front().x.size());
    n_classes_ = c.n_classes.value_or(2);
    signed_labels_ = !c.n_classes.has_value();
    for (std::size_t i = 1; i < rows_.size(); ++i) {
      if (static_cast<int>(rows_[i].x.size()) != dim_) {
        throw std::runtime_error(c.path + ": inconsistent feature dimension at row " +
                                 std::to_string(i + 1));
      }
    }
  }
}

Sample Stream::sample(int t) const {
  if (t < 1 || t > horizon_) {
    throw std::invalid_argument("stream sample: round " + std::to_string(t) + " outside [1, " +
                                std::to_string(horizon_) + "]");
  }
  Rng rng = round_rng(seed_, t);
  if (const auto* g = std::get_if<RotatingGaussianConfig>(&config_)) {
    return gaussian_sample(*g, t, rng);
  }
  if (const auto* f = std::get_if<LabelFlipConfig>(&config_)) {
    return label_flip_sample(*f, t, rng);
  }
  if (const auto* r = std::get_if<RotatingRingConfig>(&config_)) {
    return ring_sample(*r, t, rng);
  }
  return rows_[static_cast<std::size_t>(t - 1)];
}

std::vector<Sample> Stream::pretrain_pool() const {
  // Drawn from the t=1 distribution with a seed stream disjoint from the
  // per-round draws (negative indices), so pool size never shifts the stream.
  std::vector<Sample> pool;
  const std::uint64_t pool_seed = hash_name(seed_, "pretrain-pool");
  if (const auto* g = std::get_if<RotatingGaussianConfig>(&config_)) {
    pool.reserve(g->n_pretrain);
    for (int i = 0; i < g->n_pretrain; ++i) {
      Rng rng = round_rng(pool_seed, i);
      pool.push_back(gaussian_sample(*g, 1, rng));
    }
  } else if (const auto* r = std::get_if<RotatingRingConfig>(&config_)) {
    pool.reserve(r->n_pretrain);
    for (int i = 0; i < r->n_pretrain; ++i) {
      Rng rng = round_rng(pool_seed, i);
      pool.push_back(ring_sample(*r, 1, rng));
    }
  }
  return pool;
}

}  // namespace osamd
