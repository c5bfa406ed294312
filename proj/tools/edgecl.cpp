// edgecl: simulate domains, run the sequential protocol, aggregate and check.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "edgecl/edgecl.hpp"
#include "edgecl/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace edgecl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitCheckFailed = 4;
constexpr int kExitOther = 1;

void log_line(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

int cmd_simulate(const std::string& scene_file, std::uint64_t user, std::size_t per_class, std::uint64_t seed,
                 const fs::path& out) {
  ExperimentConfig c = scene_file.empty() ? ExperimentConfig{} : load_config(scene_file);
  const SceneConfig scene = make_scene(c.scene);
  const UserProfile profile = make_user_profile(user, c.user);
  DomainDataset ds = generate_domain(scene, profile, per_class, seed, c.jitter);
  write_dataset(out, ds);
  std::printf("wrote %zu sequences (C=%zu, L_H=%zu) to %s\n", ds.entries.size(), ds.n_classes, ds.sample_length,
              out.string().c_str());
  return kExitOk;
}

int cmd_run(const std::string& config_file, const std::string& variant_tag, std::size_t trial, const fs::path& out_arg) {
  ExperimentConfig c = load_config(config_file);
  const Variant v = parse_variant(variant_tag);
  const fs::path out = out_arg.empty() ? c.output_dir : out_arg;
  c.variants = {v};
  DomainStore store(c);
  SequentialResult r = run_sequential(c, v, trial, store.provider(), log_line);
  fs::create_directories(out);
  save_checkpoint(out, r.params);
  if (!r.coreset.empty()) save_coreset(out / "coreset", r.coreset, c.user.n_classes, c.layout().sample_length());
  for (const auto& t : r.traces) append_trace(out / "trace.csv", t);
  SuiteResult s;
  s.config = c;
  s.config.n_trials = 1;
  VariantResult vr;
  vr.variant = v;
  vr.trials.push_back(to_trial_result(std::move(r)));
  vr.trials.back().trial = trial;
  s.variants.push_back(std::move(vr));
  export_results(s, out);
  const auto& m = s.variants[0].trials[0].metrics;
  std::printf("%s trial %zu: average_accuracy %.4f forgetting %.4f -> %s\n", variant_tag.c_str(), trial,
              m.average_accuracy, m.forgetting, out.string().c_str());
  return kExitOk;
}

int cmd_suite(const std::string& config_file, const fs::path& out_arg) {
  const ExperimentConfig c = load_config(config_file);
  const fs::path out = out_arg.empty() ? c.output_dir : out_arg;
  const SuiteResult s = run_benchmark_suite(c, log_line, nullptr, threads_from_env());
  export_results(s, out);
  std::printf("%-14s %8s %10s %10s %10s %10s\n", "variant", "trials", "acc_mean", "acc_std", "fgt_mean", "fgt_std");
  for (const auto& v : s.variants) {
    if (v.error) {
      std::printf("%-14s failed: %s\n", std::string(to_string(v.variant)).c_str(), v.error->c_str());
      continue;
    }
    const auto [am, as] = detail::mean_std(detail::collect(v, false));
    const auto [fm, fsd] = detail::mean_std(detail::collect(v, true));
    std::printf("%-14s %8zu %10.4f %10.4f %10.4f %10.4f\n", std::string(to_string(v.variant)).c_str(), v.trials.size(),
                am, as, fm, fsd);
  }
  return kExitOk;
}

// Recomputes the metrics from the persisted matrices and compares them with results.json.
int cmd_report(const fs::path& in) {
  const auto results = nlohmann::json::parse(io::read_file(in / "results.json"));
  bool consistent = true;
  std::printf("%-14s %6s %10s %10s\n", "variant", "trial", "avg_acc", "forgetting");
  for (const auto& v : results.at("variants")) {
    const std::string tag = v.at("variant").get<std::string>();
    for (const auto& t : v.at("trials")) {
      const std::size_t trial = t.at("trial").get<std::size_t>();
      const AccuracyMatrix R = parse_matrix_csv(io::read_file(in / concat("matrix_", tag, "_", trial, ".csv")));
      const Metrics m = compute_metrics(R);
      const bool same = m.average_accuracy == t.at("average_accuracy").get<double>() &&
                        m.forgetting == t.at("forgetting").get<double>();
      consistent = consistent && same;
      std::printf("%-14s %6zu %10.4f %10.4f%s\n", tag.c_str(), trial, m.average_accuracy, m.forgetting,
                  same ? "" : "  (mismatch with results.json)");
    }
  }
  return consistent ? kExitOk : kExitCheckFailed;
}

int cmd_check(const std::string& level) {
  std::vector<int> ids;
  if (level == "unit")
    ids = {2, 7, 9};
  else if (level == "oracle")
    ids = {1, 2, 3, 4, 5, 6, 7, 9};
  else if (level == "endtoend")
    ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  else
    throw ConfigError(concat("unknown check level '", level, "'"));
  const auto results = selfcheck::run(ids, log_line);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s\n", selfcheck::format(r).c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain continual learning for CSI sensing"};
  app.require_subcommand(1);

  std::string scene_file;
  std::uint64_t user = 1, seed = 1;
  std::size_t per_class = 30;
  std::string out_dir;
  auto* sim = app.add_subcommand("simulate", "Generate one synthetic domain dataset");
  sim->add_option("--scene", scene_file, "Config file whose [scene] and [user] tables are used");
  sim->add_option("--user", user, "User id (seeds the geometry perturbation)");
  sim->add_option("--per-class", per_class, "Sequences per activity class");
  sim->add_option("--seed", seed, "Generation seed");
  sim->add_option("--out", out_dir, "Output directory")->required();

  std::string config_file, variant = "proposed";
  std::size_t trial = 0;
  auto* run = app.add_subcommand("run", "Run the sequential protocol for one variant and trial");
  run->add_option("--config", config_file, "Experiment config (TOML or JSON)")->required();
  run->add_option("--variant", variant, "Variant tag");
  run->add_option("--trial", trial, "Trial index");
  run->add_option("--out", out_dir, "Output directory (default: experiment.output_dir)");

  auto* suite = app.add_subcommand("suite", "Run every configured variant and trial");
  suite->add_option("--config", config_file, "Experiment config (TOML or JSON)")->required();
  suite->add_option("--out", out_dir, "Output directory (default: experiment.output_dir)");

  std::string in_dir;
  auto* report = app.add_subcommand("report", "Summarize and cross-check an exported result directory");
  report->add_option("--in", in_dir, "Directory written by run or suite")->required();

  std::string level = "oracle";
  auto* check = app.add_subcommand("check", "Run the built-in acceptance checks");
  check->add_option("--level", level, "unit | oracle | endtoend");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(scene_file, user, per_class, seed, out_dir);
    if (*run) return cmd_run(config_file, variant, trial, out_dir);
    if (*suite) return cmd_suite(config_file, out_dir);
    if (*report) return cmd_report(in_dir);
    if (*check) return cmd_check(level);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOther;
  }
  return kExitOk;
}
