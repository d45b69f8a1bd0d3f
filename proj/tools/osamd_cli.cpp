#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "osamd/harness.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

osamd::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return osamd::default_gaussian_experiment();
  return osamd::parse_experiment_config(read_file(path));
}

struct Overrides {
  std::string out;
  std::string comparator_cache;
  int repeats = -1;
  int jobs = -1;
  long long seed = -1;
};

void apply(const Overrides& o, osamd::ExperimentConfig& cfg) {
  if (!o.out.empty()) cfg.output.directory = o.out;
  if (o.repeats > 0) cfg.repeats = o.repeats;
  if (o.jobs >= 0) cfg.jobs = o.jobs;
  if (o.seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(o.seed);
  if (!o.comparator_cache.empty()) cfg.comparator_cache = o.comparator_cache;
}

void print_summary(const osamd::ExperimentResult& result) {
  std::printf("%-22s %10s %12s %14s %14s\n", "learner", "accuracy", "queries", "mistakes",
              "final_regret");
  for (const auto& s : osamd::summarize(result)) {
    std::printf("%-22s %6.2f%% ±%4.2f %6.2f%% ±%4.2f %7.1f ±%5.1f ", s.name.c_str(),
                100.0 * s.accuracy.mean, 100.0 * s.accuracy.half_width,
                100.0 * s.query_fraction.mean, 100.0 * s.query_fraction.half_width,
                s.mistakes.mean, s.mistakes.half_width);
    if (s.final_regret) {
      std::printf("%9.2f ±%6.2f\n", s.final_regret->mean, s.final_regret->half_width);
    } else {
      std::printf("%9s\n", "-");
    }
  }
}

int cmd_run(const std::string& config_path, const Overrides& overrides) {
  osamd::ExperimentConfig cfg = load_config(config_path);
  apply(overrides, cfg);
  const auto result = osamd::run_experiment(cfg);
  const auto written = osamd::emit_results(result);
  print_summary(result);
  std::printf("wrote %zu files to %s\n", written.size(), cfg.output.directory.c_str());
  return 0;
}

int cmd_validate(const std::string& config_path) {
  const auto problems = osamd::validate_config_text(read_file(config_path));
  if (problems.empty()) {
    std::printf("ok\n");
    return 0;
  }
  for (const auto& p : problems) std::fprintf(stderr, "%s\n", p.c_str());
  std::fprintf(stderr, "%zu problem(s) found\n", problems.size());
  return 1;
}

int cmd_oracle(const std::string& config_path, const std::string& out_path) {
  osamd::ExperimentConfig cfg = load_config(config_path);

  std::optional<osamd::ExpectedLoss> loss;
  if (const auto* g = std::get_if<osamd::RotatingGaussianConfig>(&cfg.stream)) {
    loss = osamd::gaussian_expected_loss(cfg.loss, *g);
  } else if (const auto* f = std::get_if<osamd::LabelFlipConfig>(&cfg.stream)) {
    loss = osamd::label_flip_expected_loss(cfg.loss, *f);
  } else {
    throw std::invalid_argument("oracle: this stream has no closed-form expected loss");
  }
  const osamd::Stream stream(cfg.stream, 0);
  osamd::ComparatorOracle oracle(*loss, cfg.geometry);
  for (int t = 1; t <= stream.horizon(); ++t) oracle.at(t);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  const std::string dump = oracle.dump_cache();
  out << dump;
  std::size_t entries = 0;
  for (char c : dump) entries += c == '\n';
  std::printf("wrote %zu comparator entries to %s\n", entries, out_path.c_str());
  return 0;
}

int cmd_scenario(const std::string& name, const Overrides& overrides) {
  if (name != "label_flip") {
    throw std::invalid_argument("unknown scenario '" + name + "' (try: label_flip)");
  }
  osamd::ExperimentConfig cfg = osamd::label_flip_scenario();
  apply(overrides, cfg);
  const auto result = osamd::run_experiment(cfg);
  osamd::emit_results(result);
  print_summary(result);

  const int horizon = std::get<osamd::LabelFlipConfig>(cfg.stream).horizon;
  const int half = horizon / 2;
  for (std::size_t li = 0; li < cfg.learners.size(); ++li) {
    double post_loss = 0.0, second_half_regret = 0.0, queries = 0.0;
    for (int r = 0; r < cfg.repeats; ++r) {
      const auto& rec = result.record(li, r);
      for (int t = half; t < horizon; ++t) {
        const auto& s = rec.steps[t];
        post_loss += s.instantaneous_loss;
        second_half_regret += s.instantaneous_loss - s.comparator_loss.value_or(0.0);
      }
      queries += rec.query_fraction() * horizon;
    }
    post_loss /= cfg.repeats;
    second_half_regret /= cfg.repeats;
    queries /= cfg.repeats;
    std::printf("%s: post-flip loss %.1f, second-half regret %.1f, queries %.1f of %d\n",
                cfg.learners[li].name.c_str(), post_loss, second_half_regret, queries, horizon);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online self-adaptive mirror descent experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, scenario_name, oracle_out = "comparator_cache.txt";
  Overrides overrides;

  auto* run = app.add_subcommand("run", "run an experiment config (default: rotating gaussian)");
  run->add_option("config,-c,--config", config_path, "experiment config (json)");
  run->add_option("-o,--out", overrides.out, "output directory");
  run->add_option("-s,--seed", overrides.seed, "base seed");
  run->add_option("-r,--repeats", overrides.repeats, "number of repeats");
  run->add_option("-j,--jobs", overrides.jobs, "worker threads (0 = hardware)");
  run->add_option("--comparator-cache", overrides.comparator_cache,
                  "load/store comparator solutions here");

  auto* validate = app.add_subcommand("validate", "check a config and list every problem");
  validate->add_option("config,-c,--config", config_path, "experiment config (json)")->required();

  auto* oracle = app.add_subcommand("oracle", "precompute per-round comparators");
  oracle->add_option("config,-c,--config", config_path, "experiment config (json)");
  oracle->add_option("-o,--out", oracle_out, "cache file to write");

  auto* scenario = app.add_subcommand("scenario", "run a built-in stress scenario");
  scenario->add_option("name", scenario_name, "scenario name (label_flip)")->required();
  scenario->add_option("-o,--out", overrides.out, "output directory");
  scenario->add_option("-s,--seed", overrides.seed, "base seed");
  scenario->add_option("-r,--repeats", overrides.repeats, "number of repeats");
  scenario->add_option("-j,--jobs", overrides.jobs, "worker threads (0 = hardware)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, overrides);
    if (validate->parsed()) return cmd_validate(config_path);
    if (oracle->parsed()) return cmd_oracle(config_path, oracle_out);
    if (scenario->parsed()) return cmd_scenario(scenario_name, overrides);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
