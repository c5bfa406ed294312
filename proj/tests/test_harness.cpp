#include <gtest/gtest.h>

#include <chrono>
#include <fstream>

#include "edgecl/harness.hpp"
#include "edgecl/selfcheck.hpp"

using namespace edgecl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.domains = 2;
  c.n_per_class = 6;
  c.user.n_classes = 3;
  c.scene.n_subcarriers = 4;
  c.model.encoder_hidden = 16;
  c.model.width = 8;
  c.model.heads = 2;
  c.model.blocks = 1;
  c.train.iterations = 30;
  c.train.batch_size = 8;
  c.train.replay_batch = 8;
  c.train.learning_rate = 0.01;
  c.exemplars_per_class = 2;
  c.importance_samples = 8;
  c.n_trials = 1;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Metrics, HandArithmetic) {
  AccuracyMatrix R{{{0.9}, {0.7, 0.8}}};
  const auto m = compute_metrics(R);
  EXPECT_NEAR(m.forgetting, 0.2, 1e-15);
  EXPECT_NEAR(m.average_accuracy, 0.75, 1e-15);
  ASSERT_EQ(m.curves.size(), 2u);
  EXPECT_EQ(m.curves[0], (std::vector<double>{0.9, 0.7}));
}

TEST(Metrics, NoForgettingWhenRetained) {
  AccuracyMatrix R{{{0.6}, {0.6, 0.7}, {0.6, 0.7, 0.9}}};
  EXPECT_EQ(compute_metrics(R).forgetting, 0.0);
  AccuracyMatrix single{{{0.4}}};
  EXPECT_EQ(compute_metrics(single).forgetting, 0.0);
  AccuracyMatrix bad{{{0.4}, {0.5}}};
  EXPECT_THROW(compute_metrics(bad), InvalidArgument);
}

TEST(Metrics, MonotoneRetentionIsNonNegative) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    AccuracyMatrix R;
    for (std::size_t p = 0; p < 4; ++p) {
      R.rows.emplace_back();
      for (std::size_t k = 0; k <= p; ++k)
        R.rows[p].push_back(k == p ? uniform(rng, 0.5, 1.0) : R.rows[p - 1][k] * uniform(rng, 0.5, 1.0));
    }
    EXPECT_GE(compute_metrics(R).forgetting, 0.0);
  }
}

TEST(Evaluate, ChanceLevelForUniformPredictor) {
  Rng rng(5);
  std::vector<std::vector<double>> probs(1000, std::vector<double>(10, 0.1));
  std::vector<std::size_t> labels(1000);
  for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, 9)(rng);
  // Ties resolve to class 0, so accuracy equals the class-0 share.
  EXPECT_NEAR(accuracy(probs, labels), 0.1, 0.03);
}

TEST(Evaluate, PerfectOracleAndEmpty) {
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 30; ++i) {
    labels.push_back(i % 3);
    probs.push_back(one_hot(i % 3, 3));
  }
  EXPECT_EQ(accuracy(probs, labels), 1.0);
  EXPECT_THROW(accuracy(std::vector<std::vector<double>>{}, std::vector<std::size_t>{}), InvalidArgument);
  EXPECT_EQ(argmax(std::vector<double>{0.4, 0.4, 0.2}), 0u);
}

TEST(Sequential, SingleDomainHasOneCellAndNoForgetting) {
  ExperimentConfig c = toy_config();
  c.domains = 1;
  const DomainStore store(c);
  const auto r = run_sequential(c, Variant::proposed, 0, store.provider());
  ASSERT_EQ(r.accuracy.periods(), 1u);
  ASSERT_EQ(r.accuracy.rows[0].size(), 1u);
  EXPECT_EQ(compute_metrics(r.accuracy).forgetting, 0.0);
  EXPECT_EQ(r.coreset.size(), 3u * 2u);
}

TEST(Sequential, CoresetAndInventoryFollowProtocol) {
  const ExperimentConfig c = toy_config();
  const DomainStore store(c);
  for (Variant v : kAllVariants) {
    const auto r = run_sequential(c, v, 0, store.provider());
    ASSERT_EQ(r.inventory.size(), c.domains) << to_string(v);
    for (std::size_t k = 0; k < c.domains; ++k) {
      const auto& inv = r.inventory[k];
      if (v == Variant::bl_cumulative) {
        EXPECT_EQ(inv.raw_domains_held.size(), k + 1);
      } else {
        EXPECT_TRUE(inv.raw_domains_held.empty()) << to_string(v);
        EXPECT_EQ(inv.raw_sequences_held, 0u);
      }
      EXPECT_EQ(inv.coreset_entries, uses_coreset(v) ? (k + 1) * 3 * 2 : 0u) << to_string(v);
    }
    for (const auto& e : r.coreset.entries) {
      const bool hard = *std::max_element(e.label.begin(), e.label.end()) == 1.0;
      EXPECT_EQ(hard, !uses_distilled_labels(v)) << to_string(v);
    }
    EXPECT_EQ(r.coreset.eta, uses_distilled_labels(v) ? c.eta : 1.0);
  }
}

TEST(Sequential, ExemplarsAreRealMembersOfTheirDomain) {
  const ExperimentConfig c = toy_config();
  const DomainStore store(c);
  const auto r = run_sequential(c, Variant::proposed, 0, store.provider());
  for (const auto& e : r.coreset.entries) {
    const auto& raw = store.domains()[e.domain].raw;
    const bool found = std::any_of(raw.entries.begin(), raw.entries.end(), [&](const DomainEntry& d) {
      return d.label == e.cls && d.sequence.timestamps == e.sequence.timestamps && d.sequence.samples == e.sequence.samples;
    });
    EXPECT_TRUE(found);
  }
}

TEST(Sequential, BlErRandUsesSeededRandomIndices) {
  const ExperimentConfig c = toy_config();
  const DomainStore store(c);
  const auto a = run_sequential(c, Variant::bl_er_rand, 0, store.provider());
  const auto b = run_sequential(c, Variant::bl_er_rand, 0, store.provider());
  ASSERT_EQ(a.coreset.size(), b.coreset.size());
  for (std::size_t i = 0; i < a.coreset.size(); ++i)
    EXPECT_EQ(a.coreset.entries[i].sequence.timestamps, b.coreset.entries[i].sequence.timestamps);
}

TEST(Sequential, CumulativeRetainsFirstDomainBetterThanFineTuning) {
  ExperimentConfig c = toy_config();
  c.train.iterations = 60;
  std::size_t wins = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    c.data_seed = 10 + s;
    c.trial_seed = s;
    const DomainStore store(c);
    const auto cum = run_sequential(c, Variant::bl_cumulative, 0, store.provider());
    const auto ft = run_sequential(c, Variant::bl_ft, 0, store.provider());
    wins += cum.accuracy.at(1, 0) >= ft.accuracy.at(1, 0);
  }
  EXPECT_GE(wins, 4u);
}

TEST(Sequential, VariantsShareInitialParameters) {
  ExperimentConfig c = toy_config();
  c.train.iterations = 0;
  c.train.learning_rate = 0.01;
  const DomainStore store(c);
  // With I = 0 nothing moves, so the final parameters are the initial ones.
  c.domains = 1;
  const auto a = run_sequential(c, Variant::proposed, 0, store.provider());
  const auto b = run_sequential(c, Variant::bl_ft, 0, store.provider());
  EXPECT_EQ(a.params.values(), b.params.values());
}

TEST(Suite, OneTrialOneVariantPersistsAMatrix) {
  ExperimentConfig c = toy_config();
  c.variants = {Variant::bl_ft};
  const auto dir = fresh_dir("edgecl-test-suite1");
  const auto s = run_benchmark_suite(c);
  export_results(s, dir);
  EXPECT_TRUE(fs::exists(dir / "matrix_bl_ft_0.csv"));
  EXPECT_EQ(parse_matrix_csv(io::read_file(dir / "matrix_bl_ft_0.csv")).rows, s.variants[0].trials[0].accuracy.rows);
  fs::remove_all(dir);
}

TEST(Suite, FailingVariantIsIsolated) {
  ExperimentConfig c = toy_config();
  c.importance_samples = 0;  // only the importance-based variants consume it
  c.variants = {Variant::pr_ewc, Variant::bl_ft};
  const auto s = run_benchmark_suite(c);
  EXPECT_TRUE(s.get(Variant::pr_ewc).error.has_value());
  EXPECT_FALSE(s.get(Variant::bl_ft).error.has_value());
  EXPECT_EQ(s.get(Variant::bl_ft).trials.size(), 1u);
}

TEST(Suite, ExportLayoutAndMetricIdentities) {
  ExperimentConfig c = toy_config();
  c.n_trials = 2;
  c.variants = {Variant::proposed, Variant::bl_ft, Variant::er_herding};
  const auto s = run_benchmark_suite(c);
  const auto dir = fresh_dir("edgecl-test-export");
  export_results(s, dir);
  EXPECT_EQ(count_lines(dir / "summary.csv"), 1 + c.variants.size());
  const std::size_t K = c.domains;
  EXPECT_EQ(count_lines(dir / "curves.csv"), 1 + c.variants.size() * c.n_trials * K * (K + 1) / 2);
  const auto j = nlohmann::json::parse(io::read_file(dir / "results.json"));
  for (const auto& v : j.at("variants"))
    for (const auto& t : v.at("trials")) {
      const auto R = parse_matrix_csv(io::read_file(
          dir / concat("matrix_", v.at("variant").get<std::string>(), "_", t.at("trial").get<std::size_t>(), ".csv")));
      const auto m = compute_metrics(R);
      EXPECT_EQ(m.average_accuracy, t.at("average_accuracy").get<double>());
      EXPECT_EQ(m.forgetting, t.at("forgetting").get<double>());
    }
  // Re-export of the same bundle is byte-identical.
  const std::string first = io::read_file(dir / "results.json");
  export_results(s, dir);
  EXPECT_EQ(io::read_file(dir / "results.json"), first);
  fs::remove_all(dir);
}

TEST(Suite, DeterministicAcrossRunsAndThreadCounts) {
  ExperimentConfig c = toy_config();
  c.n_trials = 2;
  c.variants = {Variant::proposed, Variant::pr_mas};
  const DomainStore store(c);
  const auto a = results_json(run_benchmark_suite(c, {}, &store, 1)).dump();
  const auto b = results_json(run_benchmark_suite(c, {}, &store, 3)).dump();
  const auto d = results_json(run_benchmark_suite(c)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d);
}

TEST(Suite, HeldOutSplitIsStratified) {
  ExperimentConfig c = toy_config();
  c.held_out = true;
  c.n_per_class = 10;
  c.held_out_fraction = 0.2;
  const auto d = prepare_domain(c, 0);
  EXPECT_EQ(d.eval_rows.size(), 6u);
  EXPECT_EQ(d.train_rows.size(), 24u);
  std::vector<std::size_t> per(3, 0);
  for (std::size_t r : d.eval_rows) ++per[d.labels[r]];
  EXPECT_EQ(per, (std::vector<std::size_t>{2, 2, 2}));
}

TEST(Config, TomlAndJsonAgree) {
  const std::string toml_text = R"(
[experiment]
domains = 3
n_per_class = 12
variants = ["proposed", "pr_ewc"]

[train]
iterations = 40
learning_rate = 0.002

[coreset]
beta = 0.5
)";
  const auto a = parse_config_text(toml_text, false);
  EXPECT_EQ(a.domains, 3u);
  EXPECT_EQ(a.n_per_class, 12u);
  EXPECT_EQ(a.train.iterations, 40u);
  EXPECT_EQ(a.beta, 0.5);
  EXPECT_EQ(a.variants, (std::vector<Variant>{Variant::proposed, Variant::pr_ewc}));
  const auto b = parse_config_text(config_to_json(a).dump(), true);
  EXPECT_EQ(config_to_json(a).dump(), config_to_json(b).dump());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config_text("[train]\nlearnin_rate = 0.1\n", false), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\ndomains = 0\n", false), ConfigError);
  EXPECT_THROW(parse_config_text("[coreset]\neta = 0.5\n", false), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\nvariants = [\"x\"]\n", false), ConfigError);
  EXPECT_THROW(parse_config_text("{not json", true), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/edgecl.toml"), ConfigError);
}

TEST(Runtime, TrainingTimeScalesLinearlyWithDomainSize) {
  // Full-batch iterations, so the per-iteration work is proportional to M.
  ExperimentConfig c = toy_config();
  c.n_per_class = 20;
  const auto d = prepare_domain(c, 0);
  std::vector<LabeledInput> all;
  for (std::size_t i = 0; i < d.inputs.size(); ++i) all.push_back({&d.inputs[i], d.targets[i]});
  auto time_for = [&](std::size_t M) {
    std::vector<LabeledInput> subset(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(M));
    TrainConfig tc = c.train;
    tc.variant = Variant::bl_ft;
    tc.batch_size = M;
    tc.iterations = 10;
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      ModelParams p = init_params(c.resolved_model(), 1);
      const auto t0 = std::chrono::steady_clock::now();
      train_epochs(p, subset, {}, tc);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double ratio = time_for(60) / time_for(30);
  EXPECT_GT(ratio, 1.6);
  EXPECT_LT(ratio, 2.6);
}

TEST(SelfCheck, DeskConfigMatchesAcceptanceScale) {
  const auto c = selfcheck::desk_config();
  EXPECT_EQ(c.domains, 4u);
  EXPECT_EQ(c.n_per_class, 30u);
  EXPECT_EQ(c.train.iterations, 300u);
  EXPECT_EQ(c.n_trials, 5u);
  EXPECT_EQ(c.variants.size(), 5u);
}
