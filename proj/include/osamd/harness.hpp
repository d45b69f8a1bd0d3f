#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "osamd/environments.hpp"
#include "osamd/learners.hpp"
#include "osamd/metrics.hpp"

namespace osamd {

enum class LearnerType {
  kOsamd,
  kMosamd,
  kOmd,
  kPaa,
  kOsamdNoSelfadapt,
  kOsamdNoActive,
};

std::string learner_type_name(LearnerType type);
std::optional<LearnerType> learner_type_from_name(const std::string& name);

// How a partial-label baseline picks its query rate: a fixed number, or
// matched after the fact to the realized query fraction of the first osamd
// learner in the experiment.
struct RateSpec {
  enum class Kind { kAlways, kFixed, kMatched } kind = Kind::kAlways;
  double value = 1.0;
};

struct LearnerSpec {
  std::string name;
  LearnerType type = LearnerType::kOsamd;
  OsamdParams params;   // osamd, mosamd, and both ablations
  double eta = 0.01;    // omd step
  PaaParams paa;        // paa
  RateSpec query_rate;  // omd (default always) and no_active (default matched)
};

struct PretrainSpec {
  int epochs = 4;
  double rate = 0.01;
  double penalty = 0.0;  // pretraining hinge penalty (margin target is shared)
  std::optional<Vec> fixed_init;  // bypasses fitting entirely
};

struct MetricsSpec {
  bool expected_loss = true;  // closed-form expected loss + regret when the stream has one
  double ci_confidence = 0.90;
};

struct OutputSpec {
  std::string directory = "out";
  bool per_step_csv = true;
  bool summary_json = true;
  bool resolved_config = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  StreamConfig stream;
  HingeSpec loss{1.0, 0.2, {}};
  BregmanGeometry geometry;  // feasible set shared by all learners
  std::vector<LearnerSpec> learners;
  int repeats = 10;
  std::uint64_t base_seed = 42;
  int jobs = 1;  // 0 = hardware concurrency
  PretrainSpec pretrain;
  MetricsSpec metrics;
  OutputSpec output;
  std::optional<std::string> comparator_cache;  // preload/persist comparators here
};

// Ready-made setups: the rotating-Gaussian benchmark with the full learner
// roster, and the two-point label-flip stress scenario.
ExperimentConfig default_gaussian_experiment();
ExperimentConfig label_flip_scenario();

// JSON round trip. Parsing throws std::invalid_argument listing every problem
// found, not just the first; validate() returns the list instead.
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::vector<std::string> validate_config_text(const std::string& json_text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct ExperimentResult {
  ExperimentConfig resolved;  // matched rates filled in
  std::vector<RunRecord> records;  // learner-major, repeat-minor
  std::string comparator_dump;  // serialized comparator cache, if any was built
  const RunRecord& record(std::size_t learner_index, int repeat) const;
};

// Deterministic seed plan: the stream seed depends only on (base_seed, repeat)
// so every learner faces identical data; learner randomness is keyed by name.
std::uint64_t stream_seed(std::uint64_t base_seed, int repeat);
std::uint64_t learner_seed(std::uint64_t base_seed, const std::string& learner, int repeat);

// Runs every (learner, repeat) cell. Matched-rate learners run after the
// osamd reference so they can adopt its realized mean query fraction. Results
// are byte-identical for any job count.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Writes per-step CSVs, summary.json, and resolved_config.json as configured.
// Returns the paths written.
std::vector<std::string> emit_results(const ExperimentResult& result);

// Aggregated per-learner summary (means with Student-t intervals).
struct LearnerSummary {
  std::string name;
  CiSummary accuracy;
  CiSummary query_fraction;
  CiSummary accumulated_loss;
  CiSummary mistakes;
  std::optional<CiSummary> final_regret;
};

std::vector<LearnerSummary> summarize(const ExperimentResult& result);

}  // namespace osamd
