#include "osamd/harness.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace osamd {

using Json = nlohmann::ordered_json;

std::string learner_type_name(LearnerType type) {
  switch (type) {
    case LearnerType::kOsamd: return "osamd";
    case LearnerType::kMosamd: return "mosamd";
    case LearnerType::kOmd: return "omd";
    case LearnerType::kPaa: return "paa";
    case LearnerType::kOsamdNoSelfadapt: return "osamd_no_selfadapt";
    case LearnerType::kOsamdNoActive: return "osamd_no_active";
  }
  return "unknown";
}

std::optional<LearnerType> learner_type_from_name(const std::string& name) {
  for (LearnerType t : {LearnerType::kOsamd, LearnerType::kMosamd, LearnerType::kOmd,
                        LearnerType::kPaa, LearnerType::kOsamdNoSelfadapt,
                        LearnerType::kOsamdNoActive}) {
    if (learner_type_name(t) == name) return t;
  }
  return std::nullopt;
}

std::uint64_t stream_seed(std::uint64_t base_seed, int repeat) {
  return mix_seed(hash_name(base_seed, "stream"), static_cast<std::uint64_t>(repeat));
}

std::uint64_t learner_seed(std::uint64_t base_seed, const std::string& learner, int repeat) {
  return mix_seed(hash_name(base_seed, learner), static_cast<std::uint64_t>(repeat));
}

// --- built-in experiments ------------------------------------------------------

ExperimentConfig default_gaussian_experiment() {
  ExperimentConfig cfg;
  cfg.name = "rotating_gaussian";
  cfg.stream = RotatingGaussianConfig{};
  // Penalty on the feature weights only: regularizing the bias-augmented
  // coordinate would shrink the intercept below any usable margin.
  cfg.loss = HingeSpec{1.0, 0.2, 2};
  cfg.repeats = 10;
  cfg.base_seed = 42;
  cfg.pretrain = PretrainSpec{4, 0.01, 0.2, std::nullopt};

  OsamdParams shared;
  shared.sigma = 0.35;
  shared.eta = 0.01;
  shared.tau_cap = 1.0;
  shared.tau_margin = 1.0;  // decoupled from sigma: restore the loss margin
  shared.inner_iterations = 20;

  LearnerSpec osamd{"osamd", LearnerType::kOsamd, shared, 0.01, {}, {}};
  LearnerSpec omd_all{"omd_all", LearnerType::kOmd, {}, 0.01, {}, {RateSpec::Kind::kAlways, 1.0}};
  LearnerSpec omd_partial{"omd_partial", LearnerType::kOmd, {}, 0.01, {},
                          {RateSpec::Kind::kMatched, 0.0}};
  LearnerSpec paa{"paa", LearnerType::kPaa, {}, 0.01, PaaParams{0.35, 1.0}, {}};
  LearnerSpec no_selfadapt{"osamd_no_selfadapt", LearnerType::kOsamdNoSelfadapt, shared,
                           0.01, {}, {}};
  LearnerSpec no_active{"osamd_no_active", LearnerType::kOsamdNoActive, shared, 0.01, {},
                        {RateSpec::Kind::kMatched, 0.0}};
  cfg.learners = {osamd, omd_all, omd_partial, paa, no_selfadapt, no_active};
  return cfg;
}

ExperimentConfig label_flip_scenario() {
  ExperimentConfig cfg;
  cfg.name = "label_flip";
  cfg.stream = LabelFlipConfig{};
  cfg.loss = HingeSpec{1.0, 0.0, {}};
  cfg.geometry.radius = 1.0;
  cfg.repeats = 10;
  cfg.base_seed = 7;
  cfg.pretrain = PretrainSpec{0, 0.01, 0.0, Vec{-1.0, 0.0}};

  OsamdParams shared;
  shared.sigma = 0.1;
  shared.eta = 0.05;
  shared.tau_margin = 1.0;
  shared.separable_mode = true;  // one queried mistake restores the margin outright
  shared.inner_iterations = 20;

  LearnerSpec osamd{"osamd", LearnerType::kOsamd, shared, 0.05, {}, {}};
  // Never queries: equivalent to training forever on its own pseudolabels.
  LearnerSpec frozen{"self_trained", LearnerType::kOsamdNoActive, shared, 0.05, {},
                     {RateSpec::Kind::kFixed, 0.0}};
  cfg.learners = {osamd, frozen};
  return cfg;
}

// --- config json ---------------------------------------------------------------

namespace {

class ConfigErrors {
 public:
  void add(const std::string& where, const std::string& what) {
    lines_.push_back(where + ": " + what);
  }
  const std::vector<std::string>& lines() const { return lines_; }
  bool empty() const { return lines_.empty(); }

 private:
  std::vector<std::string> lines_;
};

void check_known_keys(const Json& j, const std::string& where,
                      const std::set<std::string>& known, ConfigErrors& errors) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) errors.add(where, "unknown field '" + key + "'");
  }
}

template <typename T>
T get_or(const Json& j, const std::string& where, const std::string& key, T fallback,
         ConfigErrors& errors) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    errors.add(where + "." + key, "wrong type");
    return fallback;
  }
}

std::optional<double> get_opt_number(const Json& j, const std::string& where,
                                     const std::string& key, ConfigErrors& errors) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) {
    errors.add(where + "." + key, "expected a number");
    return std::nullopt;
  }
  return j.at(key).get<double>();
}

std::array<double, 2> get_point(const Json& j, const std::string& where,
                                const std::string& key, std::array<double, 2> fallback,
                                ConfigErrors& errors) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    errors.add(where + "." + key, "expected [x, y]");
    return fallback;
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

StreamConfig parse_stream(const Json& j, ConfigErrors& errors) {
  const std::string where = "stream";
  if (!j.is_object()) {
    errors.add(where, "expected an object");
    return RotatingGaussianConfig{};
  }
  const std::string kind = get_or<std::string>(j, where, "kind", "rotating_gaussian", errors);
  if (kind == "rotating_gaussian") {
    RotatingGaussianConfig c;
    check_known_keys(j, where,
                     {"kind", "center_inner", "center_outer", "covariance_scale",
                      "total_rotation", "horizon", "class_balance", "augment_bias",
                      "n_pretrain"},
                     errors);
    c.center_inner = get_point(j, where, "center_inner", c.center_inner, errors);
    c.center_outer = get_point(j, where, "center_outer", c.center_outer, errors);
    c.covariance_scale = get_or(j, where, "covariance_scale", c.covariance_scale, errors);
    c.total_rotation = get_or(j, where, "total_rotation", c.total_rotation, errors);
    c.horizon = get_or(j, where, "horizon", c.horizon, errors);
    c.class_balance = get_or(j, where, "class_balance", c.class_balance, errors);
    c.augment_bias = get_or(j, where, "augment_bias", c.augment_bias, errors);
    c.n_pretrain = get_or(j, where, "n_pretrain", c.n_pretrain, errors);
    if (c.horizon < 1) errors.add(where + ".horizon", "must be >= 1");
    if (c.covariance_scale < 0) errors.add(where + ".covariance_scale", "must be >= 0");
    if (c.class_balance < 0 || c.class_balance > 1) {
      errors.add(where + ".class_balance", "must lie in [0, 1]");
    }
    if (c.n_pretrain < 0) errors.add(where + ".n_pretrain", "must be >= 0");
    return c;
  }
  if (kind == "label_flip") {
    LabelFlipConfig c;
    check_known_keys(j, where, {"kind", "point_pos", "point_neg", "horizon"}, errors);
    c.point_pos = get_point(j, where, "point_pos", c.point_pos, errors);
    c.point_neg = get_point(j, where, "point_neg", c.point_neg, errors);
    c.horizon = get_or(j, where, "horizon", c.horizon, errors);
    if (c.horizon < 1) errors.add(where + ".horizon", "must be >= 1");
    return c;
  }
  if (kind == "rotating_ring") {
    RotatingRingConfig c;
    check_known_keys(j, where,
                     {"kind", "n_classes", "ring_radius", "covariance_scale",
                      "total_rotation", "horizon", "augment_bias", "n_pretrain"},
                     errors);
    c.n_classes = get_or(j, where, "n_classes", c.n_classes, errors);
    c.ring_radius = get_or(j, where, "ring_radius", c.ring_radius, errors);
    c.covariance_scale = get_or(j, where, "covariance_scale", c.covariance_scale, errors);
    c.total_rotation = get_or(j, where, "total_rotation", c.total_rotation, errors);
    c.horizon = get_or(j, where, "horizon", c.horizon, errors);
    c.augment_bias = get_or(j, where, "augment_bias", c.augment_bias, errors);
    c.n_pretrain = get_or(j, where, "n_pretrain", c.n_pretrain, errors);
    if (c.n_classes < 2) errors.add(where + ".n_classes", "must be >= 2");
    if (c.horizon < 1) errors.add(where + ".horizon", "must be >= 1");
    if (c.covariance_scale < 0) errors.add(where + ".covariance_scale", "must be >= 0");
    if (c.n_pretrain < 0) errors.add(where + ".n_pretrain", "must be >= 0");
    return c;
  }
  if (kind == "csv") {
    CsvStreamConfig c;
    check_known_keys(j, where,
                     {"kind", "path", "label_column", "n_classes", "augment_bias", "horizon"},
                     errors);
    c.path = get_or<std::string>(j, where, "path", "", errors);
    if (auto v = get_opt_number(j, where, "label_column", errors)) {
      c.label_column = static_cast<int>(*v);
    }
    if (auto v = get_opt_number(j, where, "n_classes", errors)) {
      c.n_classes = static_cast<int>(*v);
      if (*c.n_classes < 2) errors.add(where + ".n_classes", "must be >= 2");
    }
    c.augment_bias = get_or(j, where, "augment_bias", c.augment_bias, errors);
    if (auto v = get_opt_number(j, where, "horizon", errors)) {
      c.horizon = static_cast<int>(*v);
      if (*c.horizon < 1) errors.add(where + ".horizon", "must be >= 1");
    }
    if (c.path.empty()) errors.add(where + ".path", "required for csv streams");
    return c;
  }
  errors.add(where + ".kind", "unknown stream kind '" + kind + "'");
  return RotatingGaussianConfig{};
}

LearnerSpec parse_learner(const Json& j, const std::string& where, ConfigErrors& errors) {
  LearnerSpec spec;
  if (!j.is_object()) {
    errors.add(where, "expected an object");
    return spec;
  }
  check_known_keys(j, where,
                   {"name", "type", "sigma", "eta", "tau_cap", "tau_margin",
                    "inner_iterations", "inner_rate", "separable_mode", "delta", "cap",
                    "query_rate"},
                   errors);
  spec.name = get_or<std::string>(j, where, "name", "", errors);
  const std::string type_name = get_or<std::string>(j, where, "type", "osamd", errors);
  if (auto t = learner_type_from_name(type_name)) {
    spec.type = *t;
  } else {
    errors.add(where + ".type", "unknown learner type '" + type_name + "'");
  }
  if (spec.name.empty()) spec.name = type_name;

  spec.params.sigma = get_or(j, where, "sigma", spec.params.sigma, errors);
  spec.params.eta = get_or(j, where, "eta", spec.params.eta, errors);
  spec.eta = spec.params.eta;
  spec.params.tau_cap = get_or(j, where, "tau_cap", spec.params.tau_cap, errors);
  spec.params.tau_margin = get_opt_number(j, where, "tau_margin", errors);
  spec.params.inner_iterations =
      get_or(j, where, "inner_iterations", spec.params.inner_iterations, errors);
  spec.params.inner_rate = get_opt_number(j, where, "inner_rate", errors);
  spec.params.separable_mode =
      get_or(j, where, "separable_mode", spec.params.separable_mode, errors);
  spec.paa.delta = get_or(j, where, "delta", spec.paa.delta, errors);
  spec.paa.cap = get_or(j, where, "cap", spec.paa.cap, errors);

  spec.query_rate = spec.type == LearnerType::kOsamdNoActive
                        ? RateSpec{RateSpec::Kind::kMatched, 0.0}
                        : RateSpec{RateSpec::Kind::kAlways, 1.0};
  if (j.contains("query_rate")) {
    const auto& qr = j.at("query_rate");
    if (qr.is_string() && qr.get<std::string>() == "matched") {
      spec.query_rate = {RateSpec::Kind::kMatched, 0.0};
    } else if (qr.is_number()) {
      spec.query_rate = {RateSpec::Kind::kFixed, qr.get<double>()};
      if (spec.query_rate.value < 0.0 || spec.query_rate.value > 1.0) {
        errors.add(where + ".query_rate", "must lie in [0, 1]");
      }
    } else {
      errors.add(where + ".query_rate", "expected a number or \"matched\"");
    }
  }
  return spec;
}

void validate_semantics(const ExperimentConfig& cfg, ConfigErrors& errors) {
  if (cfg.repeats < 1) errors.add("repeats", "must be >= 1");
  if (cfg.jobs < 0) errors.add("jobs", "must be >= 0 (0 = hardware)");
  if (cfg.loss.margin_target <= 0) errors.add("loss.margin_target", "must be > 0");
  if (cfg.loss.penalty < 0) errors.add("loss.penalty", "must be >= 0");
  if (cfg.loss.penalty_dims && *cfg.loss.penalty_dims < 0) {
    errors.add("loss.penalty_dims", "must be >= 0");
  }
  if (cfg.geometry.radius && *cfg.geometry.radius <= 0) {
    errors.add("geometry.radius", "must be > 0 when present");
  }
  if (cfg.pretrain.epochs < 0) errors.add("pretrain.epochs", "must be >= 0");
  if (cfg.pretrain.rate <= 0) errors.add("pretrain.rate", "must be > 0");
  if (cfg.pretrain.penalty < 0) errors.add("pretrain.penalty", "must be >= 0");
  if (!(cfg.metrics.ci_confidence > 0 && cfg.metrics.ci_confidence < 1)) {
    errors.add("metrics.ci_confidence", "must lie in (0, 1)");
  }
  if (cfg.learners.empty()) errors.add("learners", "need at least one learner");

  bool signed_stream = true;
  int stream_dim = 0;
  try {
    // Csv streams touch the filesystem; defer those errors to run time.
    if (!std::holds_alternative<CsvStreamConfig>(cfg.stream)) {
      Stream probe(cfg.stream, 0);
      signed_stream = probe.signed_labels();
      stream_dim = probe.dim();
    } else {
      signed_stream = !std::get<CsvStreamConfig>(cfg.stream).n_classes.has_value();
    }
  } catch (const std::exception& e) {
    errors.add("stream", e.what());
  }

  std::set<std::string> names;
  bool has_osamd = false;
  bool wants_matched = false;
  for (std::size_t i = 0; i < cfg.learners.size(); ++i) {
    const auto& l = cfg.learners[i];
    const std::string where = "learners[" + std::to_string(i) + "]";
    if (!names.insert(l.name).second) errors.add(where, "duplicate name '" + l.name + "'");
    for (char c : l.name) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
        errors.add(where + ".name", "use letters, digits, '_' or '-'");
        break;
      }
    }
    if (l.params.sigma <= 0) errors.add(where + ".sigma", "must be > 0");
    if (l.params.eta <= 0) errors.add(where + ".eta", "must be > 0");
    if (l.params.tau_cap <= 0) errors.add(where + ".tau_cap", "must be > 0");
    if (l.params.tau_margin && *l.params.tau_margin <= 0) {
      errors.add(where + ".tau_margin", "must be > 0 when present");
    }
    if (l.params.inner_iterations < 0) errors.add(where + ".inner_iterations", "must be >= 0");
    if (l.params.inner_rate && *l.params.inner_rate <= 0) {
      errors.add(where + ".inner_rate", "must be > 0 when present");
    }
    if (l.type == LearnerType::kPaa) {
      if (l.paa.delta <= 0) errors.add(where + ".delta", "must be > 0");
      if (l.paa.cap <= 0) errors.add(where + ".cap", "must be > 0");
    }
    if (l.type == LearnerType::kOsamd) has_osamd = true;
    if (l.query_rate.kind == RateSpec::Kind::kMatched &&
        l.type != LearnerType::kOsamd && l.type != LearnerType::kMosamd) {
      wants_matched = true;
    }
    const bool needs_signed = l.type != LearnerType::kMosamd;
    if (needs_signed && !signed_stream) {
      errors.add(where, "learner type '" + learner_type_name(l.type) +
                            "' needs a binary (+1/-1) stream");
    }
    if (!needs_signed && signed_stream) {
      errors.add(where, "mosamd needs a class-index stream");
    }
  }
  if (wants_matched && !has_osamd) {
    errors.add("learners", "a \"matched\" query_rate needs an osamd learner to match");
  }
  if (cfg.pretrain.fixed_init && stream_dim > 0 &&
      static_cast<int>(cfg.pretrain.fixed_init->size()) != stream_dim) {
    errors.add("pretrain.fixed_init", "dimension " +
                                          std::to_string(cfg.pretrain.fixed_init->size()) +
                                          " does not match stream dimension " +
                                          std::to_string(stream_dim));
  }
}

ExperimentConfig parse_config_json(const Json& root, ConfigErrors& errors) {
  ExperimentConfig cfg;
  if (!root.is_object()) {
    errors.add("config", "expected a JSON object");
    return cfg;
  }
  check_known_keys(root, "config",
                   {"name", "stream", "loss", "geometry", "learners", "repeats",
                    "base_seed", "jobs", "pretrain", "metrics", "output",
                    "comparator_cache"},
                   errors);
  cfg.name = get_or<std::string>(root, "config", "name", cfg.name, errors);
  if (root.contains("stream")) {
    cfg.stream = parse_stream(root.at("stream"), errors);
  } else {
    errors.add("stream", "required");
  }
  if (root.contains("loss")) {
    const auto& j = root.at("loss");
    check_known_keys(j, "loss", {"margin_target", "penalty", "penalty_dims"}, errors);
    cfg.loss.margin_target = get_or(j, "loss", "margin_target", cfg.loss.margin_target, errors);
    cfg.loss.penalty = get_or(j, "loss", "penalty", cfg.loss.penalty, errors);
    if (j.contains("penalty_dims")) {
      cfg.loss.penalty_dims =
          get_or(j, "loss", "penalty_dims", cfg.loss.penalty_dims.value_or(0), errors);
    }
  }
  if (root.contains("geometry")) {
    const auto& j = root.at("geometry");
    check_known_keys(j, "geometry", {"radius"}, errors);
    cfg.geometry.radius = get_opt_number(j, "geometry", "radius", errors);
  }
  if (root.contains("learners")) {
    const auto& j = root.at("learners");
    if (!j.is_array()) {
      errors.add("learners", "expected an array");
    } else {
      for (std::size_t i = 0; i < j.size(); ++i) {
        cfg.learners.push_back(
            parse_learner(j[i], "learners[" + std::to_string(i) + "]", errors));
      }
    }
  } else {
    errors.add("learners", "required");
  }
  cfg.repeats = get_or(root, "config", "repeats", cfg.repeats, errors);
  cfg.base_seed = get_or(root, "config", "base_seed", cfg.base_seed, errors);
  cfg.jobs = get_or(root, "config", "jobs", cfg.jobs, errors);
  if (root.contains("pretrain")) {
    const auto& j = root.at("pretrain");
    check_known_keys(j, "pretrain", {"epochs", "rate", "penalty", "fixed_init"}, errors);
    cfg.pretrain.epochs = get_or(j, "pretrain", "epochs", cfg.pretrain.epochs, errors);
    cfg.pretrain.rate = get_or(j, "pretrain", "rate", cfg.pretrain.rate, errors);
    cfg.pretrain.penalty = get_or(j, "pretrain", "penalty", cfg.pretrain.penalty, errors);
    if (j.contains("fixed_init") && !j.at("fixed_init").is_null()) {
      try {
        cfg.pretrain.fixed_init = j.at("fixed_init").get<Vec>();
      } catch (const std::exception&) {
        errors.add("pretrain.fixed_init", "expected an array of numbers");
      }
    }
  }
  if (root.contains("metrics")) {
    const auto& j = root.at("metrics");
    check_known_keys(j, "metrics", {"expected_loss", "ci_confidence"}, errors);
    cfg.metrics.expected_loss =
        get_or(j, "metrics", "expected_loss", cfg.metrics.expected_loss, errors);
    cfg.metrics.ci_confidence =
        get_or(j, "metrics", "ci_confidence", cfg.metrics.ci_confidence, errors);
  }
  if (root.contains("output")) {
    const auto& j = root.at("output");
    check_known_keys(j, "output",
                     {"directory", "per_step_csv", "summary_json", "resolved_config"}, errors);
    cfg.output.directory = get_or<std::string>(j, "output", "directory", cfg.output.directory, errors);
    cfg.output.per_step_csv = get_or(j, "output", "per_step_csv", cfg.output.per_step_csv, errors);
    cfg.output.summary_json = get_or(j, "output", "summary_json", cfg.output.summary_json, errors);
    cfg.output.resolved_config =
        get_or(j, "output", "resolved_config", cfg.output.resolved_config, errors);
  }
  if (root.contains("comparator_cache") && !root.at("comparator_cache").is_null()) {
    cfg.comparator_cache = get_or<std::string>(root, "config", "comparator_cache", "", errors);
  }
  return cfg;
}

Json stream_to_json(const StreamConfig& stream) {
  Json j;
  if (const auto* g = std::get_if<RotatingGaussianConfig>(&stream)) {
    j["kind"] = "rotating_gaussian";
    j["center_inner"] = g->center_inner;
    j["center_outer"] = g->center_outer;
    j["covariance_scale"] = g->covariance_scale;
    j["total_rotation"] = g->total_rotation;
    j["horizon"] = g->horizon;
    j["class_balance"] = g->class_balance;
    j["augment_bias"] = g->augment_bias;
    j["n_pretrain"] = g->n_pretrain;
  } else if (const auto* f = std::get_if<LabelFlipConfig>(&stream)) {
    j["kind"] = "label_flip";
    j["point_pos"] = f->point_pos;
    j["point_neg"] = f->point_neg;
    j["horizon"] = f->horizon;
  } else if (const auto* r = std::get_if<RotatingRingConfig>(&stream)) {
    j["kind"] = "rotating_ring";
    j["n_classes"] = r->n_classes;
    j["ring_radius"] = r->ring_radius;
    j["covariance_scale"] = r->covariance_scale;
    j["total_rotation"] = r->total_rotation;
    j["horizon"] = r->horizon;
    j["augment_bias"] = r->augment_bias;
    j["n_pretrain"] = r->n_pretrain;
  } else if (const auto* c = std::get_if<CsvStreamConfig>(&stream)) {
    j["kind"] = "csv";
    j["path"] = c->path;
    if (c->label_column) j["label_column"] = *c->label_column;
    if (c->n_classes) j["n_classes"] = *c->n_classes;
    j["augment_bias"] = c->augment_bias;
    if (c->horizon) j["horizon"] = *c->horizon;
  }
  return j;
}

Json learner_to_json(const LearnerSpec& l) {
  Json j;
  j["name"] = l.name;
  j["type"] = learner_type_name(l.type);
  switch (l.type) {
    case LearnerType::kOsamd:
    case LearnerType::kMosamd:
    case LearnerType::kOsamdNoSelfadapt:
    case LearnerType::kOsamdNoActive:
      j["sigma"] = l.params.sigma;
      j["eta"] = l.params.eta;
      j["tau_cap"] = l.params.tau_cap;
      if (l.params.tau_margin) j["tau_margin"] = *l.params.tau_margin;
      j["inner_iterations"] = l.params.inner_iterations;
      if (l.params.inner_rate) j["inner_rate"] = *l.params.inner_rate;
      j["separable_mode"] = l.params.separable_mode;
      break;
    case LearnerType::kOmd:
      j["eta"] = l.eta;
      break;
    case LearnerType::kPaa:
      j["delta"] = l.paa.delta;
      j["cap"] = l.paa.cap;
      break;
  }
  if (l.type == LearnerType::kOmd || l.type == LearnerType::kOsamdNoActive) {
    switch (l.query_rate.kind) {
      case RateSpec::Kind::kAlways: j["query_rate"] = 1.0; break;
      case RateSpec::Kind::kFixed: j["query_rate"] = l.query_rate.value; break;
      case RateSpec::Kind::kMatched: j["query_rate"] = "matched"; break;
    }
  }
  return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  ConfigErrors errors;
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg = parse_config_json(root, errors);
  if (errors.empty()) validate_semantics(cfg, errors);
  if (!errors.empty()) {
    std::string all = "invalid config:";
    for (const auto& line : errors.lines()) all += "\n  " + line;
    throw std::invalid_argument(all);
  }
  return cfg;
}

std::vector<std::string> validate_config_text(const std::string& json_text) {
  ConfigErrors errors;
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const std::exception& e) {
    return {std::string("invalid JSON: ") + e.what()};
  }
  ExperimentConfig cfg = parse_config_json(root, errors);
  validate_semantics(cfg, errors);
  return errors.lines();
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["name"] = cfg.name;
  j["stream"] = stream_to_json(cfg.stream);
  j["loss"] = {{"margin_target", cfg.loss.margin_target}, {"penalty", cfg.loss.penalty}};
  if (cfg.loss.penalty_dims) j["loss"]["penalty_dims"] = *cfg.loss.penalty_dims;
  j["geometry"] = Json::object();
  j["geometry"]["radius"] = cfg.geometry.radius ? Json(*cfg.geometry.radius) : Json(nullptr);
  j["learners"] = Json::array();
  for (const auto& l : cfg.learners) j["learners"].push_back(learner_to_json(l));
  j["repeats"] = cfg.repeats;
  j["base_seed"] = cfg.base_seed;
  j["jobs"] = cfg.jobs;
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"rate", cfg.pretrain.rate},
                   {"penalty", cfg.pretrain.penalty}};
  if (cfg.pretrain.fixed_init) j["pretrain"]["fixed_init"] = *cfg.pretrain.fixed_init;
  j["metrics"] = {{"expected_loss", cfg.metrics.expected_loss},
                  {"ci_confidence", cfg.metrics.ci_confidence}};
  j["output"] = {{"directory", cfg.output.directory},
                 {"per_step_csv", cfg.output.per_step_csv},
                 {"summary_json", cfg.output.summary_json},
                 {"resolved_config", cfg.output.resolved_config}};
  if (cfg.comparator_cache) j["comparator_cache"] = *cfg.comparator_cache;
  return j.dump(2) + "\n";
}

// --- running -------------------------------------------------------------------

namespace {

std::optional<ExpectedLoss> make_expected_loss(const ExperimentConfig& cfg) {
  if (!cfg.metrics.expected_loss) return std::nullopt;
  if (const auto* g = std::get_if<RotatingGaussianConfig>(&cfg.stream)) {
    return gaussian_expected_loss(cfg.loss, *g);
  }
  if (const auto* f = std::get_if<LabelFlipConfig>(&cfg.stream)) {
    return label_flip_expected_loss(cfg.loss, *f);
  }
  return std::nullopt;
}

Vec shared_binary_init(const ExperimentConfig& cfg, const Stream& stream, int repeat) {
  if (cfg.pretrain.fixed_init) return project(cfg.geometry, *cfg.pretrain.fixed_init);
  const HingeSpec pre_spec{cfg.loss.margin_target, cfg.pretrain.penalty, cfg.loss.penalty_dims};
  Rng rng(mix_seed(hash_name(cfg.base_seed, "pretrain"), static_cast<std::uint64_t>(repeat)));
  return pretrain_binary(stream.pretrain_pool(), pre_spec, cfg.geometry, cfg.pretrain.epochs,
                         cfg.pretrain.rate, rng, std::nullopt, stream.dim());
}

ClassWeights shared_multiclass_init(const ExperimentConfig& cfg, const Stream& stream,
                                    int repeat) {
  const HingeSpec pre_spec{cfg.loss.margin_target, cfg.pretrain.penalty, cfg.loss.penalty_dims};
  Rng rng(mix_seed(hash_name(cfg.base_seed, "pretrain"), static_cast<std::uint64_t>(repeat)));
  if (cfg.pretrain.epochs == 0 || stream.pretrain_pool().empty()) {
    return ClassWeights(stream.n_classes(), Vec(stream.dim(), 0.0));
  }
  return pretrain_multiclass(stream.pretrain_pool(), pre_spec, cfg.geometry,
                             stream.n_classes(), cfg.pretrain.epochs, cfg.pretrain.rate, rng);
}

struct CellContext {
  const ExperimentConfig& cfg;
  const ExpectedLoss* expected;  // null when the stream has no closed form
  ComparatorOracle* comparator;  // null likewise
};

StepRecord make_step(const CellContext& ctx, const RoundOutcome& outcome, int truth,
                     const Vec* decision, int t) {
  StepRecord s;
  s.instantaneous_loss = outcome.instantaneous_loss;
  s.queried = outcome.queried;
  s.mistake = outcome.mistake;
  s.correct = outcome.predicted_label == truth;
  if (ctx.expected && decision) {
    s.expected_loss = ctx.expected->value(*decision, t);
    s.comparator_loss = ctx.comparator->at(t).value;
  }
  return s;
}

RunRecord run_cell(const CellContext& ctx, const LearnerSpec& spec, double fixed_rate,
                   int repeat) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Stream stream(cfg.stream, stream_seed(cfg.base_seed, repeat));
  RunRecord rec;
  rec.learner = spec.name;
  rec.repeat = repeat;
  rec.seed = learner_seed(cfg.base_seed, spec.name, repeat);
  rec.steps.reserve(stream.horizon());
  Rng rng(rec.seed);

  if (spec.type == LearnerType::kMosamd) {
    MosamdState state{shared_multiclass_init(cfg, stream, repeat), {}, cfg.geometry,
                      cfg.loss, spec.params};
    state.anchor = state.aggressive;
    for (int t = 1; t <= stream.horizon(); ++t) {
      const Sample sample = stream.sample(t);
      FixedLabelOracle oracle(sample.label);
      MosamdRound round = mosamd_round(state, sample.x, oracle, rng);
      state = std::move(round.state);
      rec.steps.push_back(make_step(ctx, round.outcome, sample.label, nullptr, t));
    }
    return rec;
  }

  const Vec init = shared_binary_init(cfg, stream, repeat);
  switch (spec.type) {
    case LearnerType::kOsamd:
    case LearnerType::kOsamdNoSelfadapt:
    case LearnerType::kOsamdNoActive: {
      OsamdState state{init, init, cfg.geometry, cfg.loss, spec.params};
      state.aggressive = project(cfg.geometry, state.aggressive);
      state.anchor = project(cfg.geometry, state.anchor);
      for (int t = 1; t <= stream.horizon(); ++t) {
        const Sample sample = stream.sample(t);
        FixedLabelOracle oracle(sample.label);
        OsamdRound round =
            spec.type == LearnerType::kOsamd
                ? osamd_round(state, sample.x, oracle, rng)
                : spec.type == LearnerType::kOsamdNoSelfadapt
                      ? osamd_no_selfadapt_round(state, sample.x, oracle, rng)
                      : osamd_no_active_round(state, sample.x, oracle, fixed_rate, rng);
        rec.steps.push_back(make_step(ctx, round.outcome, sample.label, &round.decision, t));
        state = std::move(round.state);
      }
      break;
    }
    case LearnerType::kOmd: {
      OmdState state{project(cfg.geometry, init), cfg.geometry, cfg.loss, spec.eta};
      const QueryPolicy policy = spec.query_rate.kind == RateSpec::Kind::kAlways
                                     ? QueryPolicy::always()
                                     : QueryPolicy::bernoulli(fixed_rate);
      for (int t = 1; t <= stream.horizon(); ++t) {
        const Sample sample = stream.sample(t);
        FixedLabelOracle oracle(sample.label);
        OmdRound round = omd_round(state, sample.x, oracle, policy, rng);
        rec.steps.push_back(make_step(ctx, round.outcome, sample.label, &round.decision, t));
        state = std::move(round.state);
      }
      break;
    }
    case LearnerType::kPaa: {
      PaaState state{project(cfg.geometry, init), cfg.geometry, cfg.loss, spec.paa};
      for (int t = 1; t <= stream.horizon(); ++t) {
        const Sample sample = stream.sample(t);
        FixedLabelOracle oracle(sample.label);
        PaaRound round = paa_round(state, sample.x, oracle, rng);
        rec.steps.push_back(make_step(ctx, round.outcome, sample.label, &round.decision, t));
        state = std::move(round.state);
      }
      break;
    }
    default:
      throw std::invalid_argument("run_cell: unhandled learner type");
  }
  return rec;
}

// Runs the given (learner, repeat) cells on `jobs` threads; records land in
// their preassigned slots so the output never depends on scheduling.
void run_cells(const CellContext& ctx, const std::vector<LearnerSpec>& learners,
               const std::vector<double>& rates, const std::vector<std::size_t>& learner_ids,
               int jobs, std::vector<RunRecord>& records) {
  const int repeats = ctx.cfg.repeats;
  struct Cell {
    std::size_t learner;
    int repeat;
  };
  std::vector<Cell> cells;
  cells.reserve(learner_ids.size() * repeats);
  for (std::size_t li : learner_ids) {
    for (int r = 0; r < repeats; ++r) cells.push_back({li, r});
  }
  if (cells.empty()) return;

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        const Cell& c = cells[i];
        records[c.learner * repeats + c.repeat] =
            run_cell(ctx, learners[c.learner], rates[c.learner], c.repeat);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(cells.size());
        return;
      }
    }
  };

  int n_threads = jobs == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : jobs;
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

const RunRecord& ExperimentResult::record(std::size_t learner_index, int repeat) const {
  return records.at(learner_index * resolved.repeats + repeat);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  result.resolved = cfg;
  result.records.assign(cfg.learners.size() * cfg.repeats, RunRecord{});

  std::optional<ExpectedLoss> expected = make_expected_loss(cfg);
  std::optional<ComparatorOracle> comparator;
  if (expected) {
    comparator.emplace(*expected, cfg.geometry);
    if (cfg.comparator_cache) {
      std::ifstream in(*cfg.comparator_cache);
      if (in) {
        std::stringstream buf;
        buf << in.rdbuf();
        comparator->load_cache(buf.str());
      }
    }
  }
  CellContext ctx{cfg, expected ? &*expected : nullptr, comparator ? &*comparator : nullptr};

  // Learners whose query rate is already known run first; "matched" learners
  // run afterwards at the realized mean query fraction of the first osamd.
  std::vector<double> rates(cfg.learners.size(), 1.0);
  std::vector<std::size_t> phase_a, phase_b;
  for (std::size_t i = 0; i < cfg.learners.size(); ++i) {
    if (cfg.learners[i].query_rate.kind == RateSpec::Kind::kMatched) {
      phase_b.push_back(i);
    } else {
      rates[i] = cfg.learners[i].query_rate.value;
      phase_a.push_back(i);
    }
  }
  run_cells(ctx, cfg.learners, rates, phase_a, cfg.jobs, result.records);

  if (!phase_b.empty()) {
    std::size_t reference = cfg.learners.size();
    for (std::size_t i = 0; i < cfg.learners.size(); ++i) {
      if (cfg.learners[i].type == LearnerType::kOsamd) {
        reference = i;
        break;
      }
    }
    if (reference == cfg.learners.size()) {
      throw std::invalid_argument("run_experiment: matched query_rate without an osamd learner");
    }
    double rate = 0.0;
    for (int r = 0; r < cfg.repeats; ++r) {
      rate += result.record(reference, r).query_fraction();
    }
    rate /= cfg.repeats;
    rate = std::min(1.0, std::max(0.0, rate));
    for (std::size_t i : phase_b) {
      rates[i] = rate;
      result.resolved.learners[i].query_rate = {RateSpec::Kind::kFixed, rate};
    }
    run_cells(ctx, cfg.learners, rates, phase_b, cfg.jobs, result.records);
  }

  if (comparator) result.comparator_dump = comparator->dump_cache();
  return result;
}

std::vector<LearnerSummary> summarize(const ExperimentResult& result) {
  const auto& cfg = result.resolved;
  std::vector<LearnerSummary> out;
  out.reserve(cfg.learners.size());
  for (std::size_t li = 0; li < cfg.learners.size(); ++li) {
    LearnerSummary s;
    s.name = cfg.learners[li].name;
    std::vector<double> acc, qf, loss, mist, regret;
    bool all_regret = true;
    for (int r = 0; r < cfg.repeats; ++r) {
      const RunRecord& rec = result.record(li, r);
      acc.push_back(rec.accuracy());
      qf.push_back(rec.query_fraction());
      loss.push_back(rec.accumulated_loss());
      mist.push_back(rec.mistake_count());
      if (auto fr = rec.final_regret()) {
        regret.push_back(*fr);
      } else {
        all_regret = false;
      }
    }
    const double conf = cfg.metrics.ci_confidence;
    s.accuracy = aggregate_mean_ci(acc, conf);
    s.query_fraction = aggregate_mean_ci(qf, conf);
    s.accumulated_loss = aggregate_mean_ci(loss, conf);
    s.mistakes = aggregate_mean_ci(mist, conf);
    if (all_regret && !regret.empty()) s.final_regret = aggregate_mean_ci(regret, conf);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

Json ci_to_json(const CiSummary& ci) {
  return {{"mean", ci.mean}, {"half_width", ci.half_width}, {"n", ci.n}};
}

}  // namespace

std::vector<std::string> emit_results(const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const auto& cfg = result.resolved;
  std::vector<std::string> written;
  fs::create_directories(cfg.output.directory);

  if (cfg.output.per_step_csv) {
    for (std::size_t li = 0; li < cfg.learners.size(); ++li) {
      for (int r = 0; r < cfg.repeats; ++r) {
        const RunRecord& rec = result.record(li, r);
        const auto curve = rec.regret_curve();
        const fs::path path = fs::path(cfg.output.directory) /
                              (rec.learner + "_rep" + std::to_string(r) + ".csv");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << "t,instantaneous_loss,accumulated_loss,expected_loss,regret,queried,mistake,correct\n";
        double acc = 0.0;
        for (std::size_t i = 0; i < rec.steps.size(); ++i) {
          const StepRecord& s = rec.steps[i];
          acc += s.instantaneous_loss;
          out << (i + 1) << ',' << format_double(s.instantaneous_loss) << ','
              << format_double(acc) << ',';
          if (s.expected_loss) out << format_double(*s.expected_loss);
          out << ',';
          if (!curve.empty()) out << format_double(curve[i]);
          out << ',' << (s.queried ? 1 : 0) << ',' << (s.mistake ? 1 : 0) << ','
              << (s.correct ? 1 : 0) << '\n';
        }
        written.push_back(path.string());
      }
    }
  }

  if (cfg.output.summary_json) {
    Json j;
    j["experiment"] = cfg.name;
    j["repeats"] = cfg.repeats;
    j["base_seed"] = cfg.base_seed;
    j["learners"] = Json::array();
    const auto summaries = summarize(result);
    for (std::size_t li = 0; li < summaries.size(); ++li) {
      const auto& s = summaries[li];
      Json lj;
      lj["name"] = s.name;
      lj["accuracy"] = ci_to_json(s.accuracy);
      lj["query_fraction"] = ci_to_json(s.query_fraction);
      lj["accumulated_loss"] = ci_to_json(s.accumulated_loss);
      lj["mistakes"] = ci_to_json(s.mistakes);
      lj["final_regret"] = s.final_regret ? ci_to_json(*s.final_regret) : Json(nullptr);
      Json per;
      std::vector<double> acc, qf;
      std::vector<std::uint64_t> seeds;
      Json regret = Json::array();
      for (int r = 0; r < cfg.repeats; ++r) {
        const RunRecord& rec = result.record(li, r);
        acc.push_back(rec.accuracy());
        qf.push_back(rec.query_fraction());
        seeds.push_back(rec.seed);
        if (auto fr = rec.final_regret()) {
          regret.push_back(*fr);
        } else {
          regret.push_back(nullptr);
        }
      }
      per["accuracy"] = acc;
      per["query_fraction"] = qf;
      per["final_regret"] = regret;
      per["seeds"] = seeds;
      lj["per_repeat"] = per;
      j["learners"].push_back(lj);
    }
    const fs::path path = fs::path(cfg.output.directory) / "summary.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    written.push_back(path.string());
  }

  if (cfg.output.resolved_config) {
    const fs::path path = fs::path(cfg.output.directory) / "resolved_config.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << experiment_config_to_json(cfg);
    written.push_back(path.string());
  }

  if (cfg.comparator_cache && !result.comparator_dump.empty()) {
    std::ofstream out(*cfg.comparator_cache);
    if (!out) throw std::runtime_error("cannot write " + *cfg.comparator_cache);
    out << result.comparator_dump;
    written.push_back(*cfg.comparator_cache);
  }
  return written;
}

}  // namespace osamd
