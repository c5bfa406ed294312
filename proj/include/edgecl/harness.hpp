#pragma once

// Sequential cross-domain protocol: train on D_1..D_K in order, measure accuracy on
// every domain seen so far after each period, keep only what the variant is allowed
// to keep, and aggregate the accuracy matrices over trials and variants.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "edgecl/common.hpp"
#include "edgecl/coreset.hpp"
#include "edgecl/csi_sim.hpp"
#include "edgecl/dataset_io.hpp"
#include "edgecl/model.hpp"
#include "edgecl/preprocess.hpp"
#include "edgecl/train.hpp"

namespace edgecl {

struct ExperimentConfig {
  std::size_t domains = 4;  // K
  std::size_t n_per_class = 30;
  std::uint64_t data_seed = 1;
  std::uint64_t first_user_id = 1;  // domain k is user first_user_id + k
  SceneOptions scene;
  UserOptions user;
  InstanceJitter jitter;
  std::size_t temporal_length = kDefaultTemporalLength;
  ModelConfig model;  // input_width and classes are derived from the scene and user options
  TrainConfig train;
  double finetune_lr_scale = 0.1;  // bl_ft after the first domain
  std::size_t importance_samples = 64;
  std::size_t exemplars_per_class = 10;  // E
  double beta = 0.9;
  double eta = 2.0;
  HerdingForm herding_form = HerdingForm::running_mean;
  bool held_out = false;
  double held_out_fraction = 0.2;
  std::size_t n_trials = 5;
  std::uint64_t trial_seed = 0;
  std::vector<Variant> variants{Variant::proposed, Variant::bl_ft, Variant::bl_cumulative, Variant::er_kmeans,
                                Variant::er_herding};
  std::filesystem::path output_dir = "edgecl-results";
  bool write_traces = false;

  AntennaLayout layout() const { return {scene.n_subcarriers, scene.n_tx, scene.n_rx}; }

  ModelConfig resolved_model() const {
    ModelConfig m = model;
    m.input_width = preprocessed_width(layout(), temporal_length);
    m.classes = user.n_classes;
    return m;
  }

  std::uint64_t trial_base(std::size_t trial) const { return derive_seed(trial_seed, trial); }

  void validate() const {
    require<ConfigError>(domains >= 1, "experiment needs K >= 1 domains");
    require<ConfigError>(n_trials >= 1, "experiment needs n_trials >= 1");
    require<ConfigError>(n_per_class >= 1, "n_per_class must be >= 1");
    require<ConfigError>(!variants.empty(), "no variants selected");
    require<ConfigError>(beta >= 0.0 && beta <= 1.0, "beta must be in [0, 1]");
    require<ConfigError>(eta >= 1.0, "eta must be >= 1");
    require<ConfigError>(scene.n_rx >= 2, "need at least two Rx antennas");
    require<ConfigError>(!held_out || (held_out_fraction > 0.0 && held_out_fraction < 1.0),
                         "held_out_fraction must be in (0, 1)");
    const std::size_t train_per_class =
        held_out ? n_per_class - static_cast<std::size_t>(std::lround(held_out_fraction * n_per_class)) : n_per_class;
    require<ConfigError>(exemplars_per_class <= train_per_class, "E = ", exemplars_per_class,
                         " exceeds the per-class training size ", train_per_class);
    try {
      resolved_model().validate();
      train.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::uint64_t tag_hash(std::string_view s) { return hash_bytes(s); }

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(concat("bad value for '", key, "': ", e.what()));
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* section) {
  for (const auto& [k, _] : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* n) { return k == n; });
    require<ConfigError>(ok, "unknown key '", k, "' in [", section, "]");
  }
}

}  // namespace detail

/// Reads the nested layout shared by the TOML and JSON forms.
inline ExperimentConfig config_from_json(const nlohmann::json& root) {
  ExperimentConfig c;
  require<ConfigError>(root.is_object(), "config root must be a table");
  detail::reject_unknown(root, {"experiment", "scene", "user", "model", "train", "coreset"}, "root");
  const nlohmann::json empty = nlohmann::json::object();
  auto section = [&](const char* name) -> const nlohmann::json& { return root.contains(name) ? root.at(name) : empty; };

  const auto& e = section("experiment");
  detail::reject_unknown(e, {"domains", "n_per_class", "data_seed", "first_user_id", "n_trials", "trial_seed",
                             "variants", "output_dir", "held_out", "held_out_fraction", "temporal_length",
                             "write_traces"},
                         "experiment");
  detail::read_opt(e, "domains", c.domains);
  detail::read_opt(e, "n_per_class", c.n_per_class);
  detail::read_opt(e, "data_seed", c.data_seed);
  detail::read_opt(e, "first_user_id", c.first_user_id);
  detail::read_opt(e, "n_trials", c.n_trials);
  detail::read_opt(e, "trial_seed", c.trial_seed);
  detail::read_opt(e, "held_out", c.held_out);
  detail::read_opt(e, "held_out_fraction", c.held_out_fraction);
  detail::read_opt(e, "temporal_length", c.temporal_length);
  detail::read_opt(e, "write_traces", c.write_traces);
  if (e.contains("output_dir")) c.output_dir = e.at("output_dir").get<std::string>();
  if (e.contains("variants")) {
    c.variants.clear();
    for (const auto& v : e.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
  }

  const auto& s = section("scene");
  detail::reject_unknown(s, {"n_subcarriers", "n_tx", "n_rx", "carrier_frequency", "bandwidth", "packet_rate",
                             "duration", "snr_db", "n_env_paths", "static_scale", "rx_distance",
                             "phase_error_enabled", "seed"},
                         "scene");
  detail::read_opt(s, "n_subcarriers", c.scene.n_subcarriers);
  detail::read_opt(s, "n_tx", c.scene.n_tx);
  detail::read_opt(s, "n_rx", c.scene.n_rx);
  detail::read_opt(s, "carrier_frequency", c.scene.carrier_frequency);
  detail::read_opt(s, "bandwidth", c.scene.bandwidth);
  detail::read_opt(s, "packet_rate", c.scene.packet_rate);
  detail::read_opt(s, "duration", c.scene.duration);
  detail::read_opt(s, "snr_db", c.scene.snr_db);
  detail::read_opt(s, "n_env_paths", c.scene.n_env_paths);
  detail::read_opt(s, "static_scale", c.scene.static_scale);
  detail::read_opt(s, "rx_distance", c.scene.rx_distance);
  detail::read_opt(s, "phase_error_enabled", c.scene.phase_error_enabled);
  detail::read_opt(s, "seed", c.scene.seed);

  const auto& u = section("user");
  detail::reject_unknown(u, {"n_classes", "max_offset", "min_amplitude_scale", "max_amplitude_scale",
                             "min_speed_scale", "max_speed_scale", "jitter_offset", "jitter_amplitude",
                             "jitter_speed"},
                         "user");
  detail::read_opt(u, "n_classes", c.user.n_classes);
  detail::read_opt(u, "max_offset", c.user.max_offset);
  detail::read_opt(u, "min_amplitude_scale", c.user.min_amplitude_scale);
  detail::read_opt(u, "max_amplitude_scale", c.user.max_amplitude_scale);
  detail::read_opt(u, "min_speed_scale", c.user.min_speed_scale);
  detail::read_opt(u, "max_speed_scale", c.user.max_speed_scale);
  detail::read_opt(u, "jitter_offset", c.jitter.max_offset);
  detail::read_opt(u, "jitter_amplitude", c.jitter.amplitude_spread);
  detail::read_opt(u, "jitter_speed", c.jitter.speed_spread);

  const auto& m = section("model");
  detail::reject_unknown(m, {"encoder_hidden", "width", "heads", "blocks", "dropout"}, "model");
  detail::read_opt(m, "encoder_hidden", c.model.encoder_hidden);
  detail::read_opt(m, "width", c.model.width);
  detail::read_opt(m, "heads", c.model.heads);
  detail::read_opt(m, "blocks", c.model.blocks);
  detail::read_opt(m, "dropout", c.model.dropout);

  const auto& t = section("train");
  detail::reject_unknown(t, {"learning_rate", "iterations", "batch_size", "replay_batch", "deviation_radius",
                             "finetune_lr_scale", "importance_samples"},
                         "train");
  detail::read_opt(t, "learning_rate", c.train.learning_rate);
  detail::read_opt(t, "iterations", c.train.iterations);
  detail::read_opt(t, "batch_size", c.train.batch_size);
  detail::read_opt(t, "replay_batch", c.train.replay_batch);
  detail::read_opt(t, "deviation_radius", c.train.deviation_radius);
  detail::read_opt(t, "finetune_lr_scale", c.finetune_lr_scale);
  detail::read_opt(t, "importance_samples", c.importance_samples);

  const auto& k = section("coreset");
  detail::reject_unknown(k, {"exemplars_per_class", "beta", "eta", "herding_form"}, "coreset");
  detail::read_opt(k, "exemplars_per_class", c.exemplars_per_class);
  detail::read_opt(k, "beta", c.beta);
  detail::read_opt(k, "eta", c.eta);
  if (k.contains("herding_form")) {
    const auto form = k.at("herding_form").get<std::string>();
    require<ConfigError>(form == "running_mean" || form == "running_sum", "herding_form must be running_mean or running_sum");
    c.herding_form = form == "running_mean" ? HerdingForm::running_mean : HerdingForm::running_sum;
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  std::vector<std::string> variants;
  for (Variant v : c.variants) variants.emplace_back(to_string(v));
  j["experiment"] = {{"domains", c.domains},
                     {"n_per_class", c.n_per_class},
                     {"data_seed", c.data_seed},
                     {"first_user_id", c.first_user_id},
                     {"n_trials", c.n_trials},
                     {"trial_seed", c.trial_seed},
                     {"variants", variants},
                     {"held_out", c.held_out},
                     {"held_out_fraction", c.held_out_fraction},
                     {"temporal_length", c.temporal_length}};
  j["scene"] = {{"n_subcarriers", c.scene.n_subcarriers}, {"n_tx", c.scene.n_tx},
                {"n_rx", c.scene.n_rx},                   {"carrier_frequency", c.scene.carrier_frequency},
                {"bandwidth", c.scene.bandwidth},         {"packet_rate", c.scene.packet_rate},
                {"duration", c.scene.duration},           {"snr_db", c.scene.snr_db},
                {"n_env_paths", c.scene.n_env_paths},     {"static_scale", c.scene.static_scale},
                {"rx_distance", c.scene.rx_distance},     {"phase_error_enabled", c.scene.phase_error_enabled},
                {"seed", c.scene.seed}};
  j["user"] = {{"n_classes", c.user.n_classes},
               {"max_offset", c.user.max_offset},
               {"min_amplitude_scale", c.user.min_amplitude_scale},
               {"max_amplitude_scale", c.user.max_amplitude_scale},
               {"min_speed_scale", c.user.min_speed_scale},
               {"max_speed_scale", c.user.max_speed_scale},
               {"jitter_offset", c.jitter.max_offset},
               {"jitter_amplitude", c.jitter.amplitude_spread},
               {"jitter_speed", c.jitter.speed_spread}};
  j["model"] = {{"encoder_hidden", c.model.encoder_hidden},
                {"width", c.model.width},
                {"heads", c.model.heads},
                {"blocks", c.model.blocks},
                {"dropout", c.model.dropout}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"iterations", c.train.iterations},
                {"batch_size", c.train.batch_size},
                {"replay_batch", c.train.replay_batch},
                {"deviation_radius", c.train.deviation_radius},
                {"finetune_lr_scale", c.finetune_lr_scale},
                {"importance_samples", c.importance_samples}};
  j["coreset"] = {{"exemplars_per_class", c.exemplars_per_class},
                  {"beta", c.beta},
                  {"eta", c.eta},
                  {"herding_form", c.herding_form == HerdingForm::running_mean ? "running_mean" : "running_sum"}};
  return j;
}

inline ExperimentConfig parse_config_text(const std::string& text, bool is_json) {
  nlohmann::json root;
  if (is_json) {
    try {
      root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(concat("invalid JSON config: ", e.what()));
    }
  } else {
    try {
      const toml::table tbl = toml::parse(text);
      std::ostringstream oss;
      oss << toml::json_formatter{tbl};
      root = nlohmann::json::parse(oss.str());
    } catch (const toml::parse_error& e) {
      throw ConfigError(concat("invalid TOML config: ", e.description()));
    }
  }
  return config_from_json(root);
}

/// `.json` files are read as JSON, anything else as TOML.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config_text(text, path.extension() == ".json");
}

/// One domain after preprocessing, with its training/evaluation split.
struct PreparedDomain {
  std::size_t index = 0;
  DomainDataset raw;
  std::vector<PreprocessedSequence> inputs;
  std::vector<std::vector<double>> targets;  // one-hot
  std::vector<std::size_t> labels;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> eval_rows;
};

inline PreparedDomain prepare_domain(const ExperimentConfig& c, std::size_t k) {
  const SceneConfig scene = make_scene(c.scene);
  const UserProfile user = make_user_profile(c.first_user_id + k, c.user);
  PreparedDomain d;
  d.index = k;
  d.raw = generate_domain(scene, user, c.n_per_class, derive_seed(c.data_seed, k), c.jitter);
  d.raw.domain_id = k;
  d.inputs = preprocess_dataset(d.raw, c.layout(), scene.duration, c.temporal_length);
  for (const auto& e : d.raw.entries) {
    d.labels.push_back(e.label);
    d.targets.push_back(one_hot(e.label, d.raw.n_classes));
  }
  if (!c.held_out) {
    d.train_rows.resize(d.inputs.size());
    std::iota(d.train_rows.begin(), d.train_rows.end(), std::size_t{0});
    d.eval_rows = d.train_rows;
    return d;
  }
  // Stratified split: the same held-out count from every class.
  const auto n_eval = static_cast<std::size_t>(std::lround(c.held_out_fraction * static_cast<double>(c.n_per_class)));
  Rng rng = make_rng(c.data_seed, 0x73706c6974ULL + k);
  for (std::size_t cls = 0; cls < d.raw.n_classes; ++cls) {
    auto pick = sample_without_replacement(c.n_per_class, n_eval, rng);
    std::vector<bool> is_eval(c.n_per_class, false);
    for (std::size_t p : pick) is_eval[p] = true;
    for (std::size_t i = 0; i < c.n_per_class; ++i) (is_eval[i] ? d.eval_rows : d.train_rows).push_back(cls * c.n_per_class + i);
  }
  std::sort(d.eval_rows.begin(), d.eval_rows.end());
  std::sort(d.train_rows.begin(), d.train_rows.end());
  return d;
}

/// Hands out domain k when period k starts; nothing else is visible to the learner.
using DomainProvider = std::function<const PreparedDomain&(std::size_t)>;

/// argmax with ties to the lowest class index.
inline std::size_t argmax(std::span<const double> p) {
  require(!p.empty(), "argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Fraction of predictions whose argmax equals the label.
inline double accuracy(std::span<const std::vector<double>> probabilities, std::span<const std::size_t> labels) {
  require(probabilities.size() == labels.size(), "prediction/label count mismatch");
  require(!labels.empty(), "accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax(probabilities[i]) == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double evaluate(const ModelParams& params, std::span<const PreprocessedSequence> inputs,
                       std::span<const std::size_t> labels) {
  require(!inputs.empty(), "cannot evaluate on an empty dataset");
  std::vector<std::vector<double>> probs;
  probs.reserve(inputs.size());
  for (const auto& x : inputs) probs.push_back(forward(params.view(), x, Mode::eval).probabilities);
  return accuracy(probs, labels);
}

inline double evaluate(const ModelParams& params, const PreparedDomain& d) {
  std::vector<PreprocessedSequence> xs;
  std::vector<std::size_t> ys;
  for (std::size_t r : d.eval_rows) {
    xs.push_back(d.inputs[r]);
    ys.push_back(d.labels[r]);
  }
  return evaluate(params, xs, ys);
}

/// R[k'][k]: accuracy on domain k after period k', stored for k <= k'.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t periods() const { return rows.size(); }
  double at(std::size_t period, std::size_t domain) const {
    require(period < rows.size() && domain < rows[period].size(), "accuracy matrix cell (", period, ", ", domain,
            ") is not defined");
    return rows[period][domain];
  }
  bool complete(std::size_t K) const {
    if (rows.size() != K) return false;
    for (std::size_t k = 0; k < K; ++k)
      if (rows[k].size() != k + 1) return false;
    return true;
  }
};

struct Metrics {
  double average_accuracy = 0.0;
  double forgetting = 0.0;
  std::vector<std::vector<double>> curves;  // curves[k] = accuracy on domain k for periods k..K-1
};

inline Metrics compute_metrics(const AccuracyMatrix& R) {
  const std::size_t K = R.periods();
  require(K >= 1 && R.complete(K), "accuracy matrix is incomplete");
  Metrics m;
  for (std::size_t k = 0; k < K; ++k) {
    const double v = R.at(K - 1, k);
    require(v >= 0.0 && v <= 1.0, "accuracy outside [0, 1]");
    m.average_accuracy += v;
  }
  m.average_accuracy /= static_cast<double>(K);
  for (std::size_t k = 0; k + 1 < K; ++k) m.forgetting += R.at(k, k) - R.at(K - 1, k);
  if (K > 1) m.forgetting /= static_cast<double>(K - 1);
  m.curves.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t p = k; p < K; ++p) m.curves[k].push_back(R.at(p, k));
  return m;
}

/// What the learner holds between periods.
struct InventoryRecord {
  std::size_t period = 0;
  std::size_t coreset_entries = 0;
  std::vector<std::size_t> raw_domains_held;  // domains whose full dataset is still stored
  std::size_t raw_sequences_held = 0;
};

struct SequentialResult {
  Variant variant = Variant::proposed;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  ModelParams params;
  AccuracyMatrix accuracy;
  KnowledgeCoreSet coreset;
  std::vector<InventoryRecord> inventory;
  std::vector<std::vector<TraceRow>> traces;  // one per period
};

using Logger = std::function<void(const std::string&)>;

/// Algorithm-1 loop for one variant and trial. Parameters are initialized from the
/// trial seed alone, so every variant of a trial starts from the same theta.
inline SequentialResult run_sequential(const ExperimentConfig& config, Variant variant, std::size_t trial,
                                       const DomainProvider& provider, const Logger& log = {}) {
  config.validate();
  const ModelConfig mc = config.resolved_model();
  const std::uint64_t base = config.trial_base(trial);
  const std::uint64_t stream = derive_seed(base, detail::tag_hash(to_string(variant)));

  SequentialResult res;
  res.variant = variant;
  res.trial = trial;
  res.seed = base;
  res.params = init_params(mc, derive_seed(base, 0x696e6974ULL));
  res.coreset.per_class = config.exemplars_per_class;
  res.coreset.eta = uses_distilled_labels(variant) ? config.eta : 1.0;

  std::vector<const PreparedDomain*> retained;  // bl_cumulative only
  std::optional<ImportanceVector> importance;
  const double duration = config.scene.duration;

  for (std::size_t k = 0; k < config.domains; ++k) {
    const PreparedDomain& current = provider(k);
    require(current.index == k, "provider returned domain ", current.index, " for period ", k);
    if (variant == Variant::bl_cumulative) retained.push_back(&current);

    std::vector<LabeledInput> train_set;
    auto add_rows = [&](const PreparedDomain& d) {
      for (std::size_t r : d.train_rows) train_set.push_back({&d.inputs[r], d.targets[r]});
    };
    if (variant == Variant::bl_cumulative)
      for (const PreparedDomain* d : retained) add_rows(*d);
    else
      add_rows(current);

    std::vector<PreprocessedSequence> replay_inputs;
    std::vector<LabeledInput> replay;
    if (uses_coreset(variant)) {
      replay_inputs.reserve(res.coreset.size());
      for (const auto& e : res.coreset.entries)
        replay_inputs.push_back(preprocess_sequence(e.sequence, config.layout(), duration, config.temporal_length));
      for (std::size_t i = 0; i < replay_inputs.size(); ++i) replay.push_back({&replay_inputs[i], res.coreset.entries[i].label});
    }

    if (uses_importance(variant) && !importance)
      importance = ImportanceVector{ParamVector(res.params.size(), 0.0), res.params.values()};

    TrainConfig tc = config.train;
    tc.variant = variant;
    tc.seed = derive_seed(stream, k);
    if (variant == Variant::bl_ft && k > 0) tc.learning_rate *= config.finetune_lr_scale;
    res.traces.push_back(train_epochs(res.params, train_set, replay, tc, config.eta, importance ? &*importance : nullptr));

    res.accuracy.rows.emplace_back();
    for (std::size_t j = 0; j <= k; ++j) res.accuracy.rows[k].push_back(evaluate(res.params, provider(j)));

    if (uses_importance(variant)) {
      const std::size_t n = std::min(config.importance_samples, train_set.size());
      const ImportanceVector fresh =
          estimate_importance(res.params, train_set, variant == Variant::pr_ewc ? ImportanceMethod::ewc : ImportanceMethod::mas,
                              n, derive_seed(stream, 0x696d70ULL + k));
      for (std::size_t i = 0; i < fresh.v.size(); ++i) importance->v[i] += fresh.v[i];
      importance->anchor = fresh.anchor;
    }

    if (uses_coreset(variant)) {
      std::vector<PreprocessedSequence> train_inputs;
      std::vector<std::size_t> train_labels;
      for (std::size_t r : current.train_rows) {
        train_inputs.push_back(current.inputs[r]);
        train_labels.push_back(current.labels[r]);
      }
      const FeatureSet fs = variant == Variant::bl_er_rand
                                ? FeatureSet{}
                                : build_feature_set(res.params, train_inputs, train_labels, mc.classes);
      std::vector<CoresetEntry> additions;
      for (std::size_t c = 0; c < mc.classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < train_labels.size(); ++i)
          if (train_labels[i] == c) members.push_back(i);
        const std::uint64_t sel_seed = derive_seed(stream, 0x73656c00ULL + k * 1000 + c);
        std::vector<std::size_t> local;
        const Matrix* F = variant == Variant::bl_er_rand ? nullptr : &fs.classes[c].features;
        switch (variant) {
          case Variant::er_kmeans: local = kmeans_select(*F, config.exemplars_per_class, sel_seed); break;
          case Variant::er_herding: local = herding_select(*F, {}, config.exemplars_per_class, config.herding_form); break;
          case Variant::bl_er_rand: local = random_select(members.size(), config.exemplars_per_class, sel_seed); break;
          default: local = select_exemplars(*F, config.exemplars_per_class, config.beta, sel_seed, config.herding_form);
        }
        std::vector<PreprocessedSequence> chosen_inputs;
        for (std::size_t l : local) chosen_inputs.push_back(train_inputs[members[l]]);
        const auto soft = uses_distilled_labels(variant) ? distill_labels(res.params, chosen_inputs, config.eta)
                                                         : std::vector<std::vector<double>>{};
        for (std::size_t i = 0; i < local.size(); ++i) {
          const std::size_t row = current.train_rows[members[local[i]]];
          CoresetEntry e;
          e.sequence = current.raw.entries[row].sequence;
          e.label = uses_distilled_labels(variant) ? soft[i] : one_hot(c, mc.classes);
          e.domain = k;
          e.cls = c;
          additions.push_back(std::move(e));
        }
      }
      update_knowledge(res.coreset, k, std::move(additions));
    }

    InventoryRecord inv;
    inv.period = k;
    inv.coreset_entries = res.coreset.size();
    for (const PreparedDomain* d : retained) {
      inv.raw_domains_held.push_back(d->index);
      inv.raw_sequences_held += d->raw.entries.size();
    }
    res.inventory.push_back(std::move(inv));

    if (log) {
      std::ostringstream oss;
      oss << to_string(variant) << " trial " << trial << " period " << k + 1 << "/" << config.domains << " acc [";
      for (std::size_t j = 0; j <= k; ++j) oss << (j ? " " : "") << res.accuracy.rows[k][j];
      oss << "] loss " << res.traces.back().front().loss << " -> " << res.traces.back().back().loss;
      log(oss.str());
    }
  }
  return res;
}

/// Generates and preprocesses all K domains up front (the evaluation side keeps them).
class DomainStore {
 public:
  explicit DomainStore(const ExperimentConfig& config) {
    for (std::size_t k = 0; k < config.domains; ++k) domains_.push_back(prepare_domain(config, k));
  }
  DomainProvider provider() const {
    return [this](std::size_t k) -> const PreparedDomain& {
      require(k < domains_.size(), "domain ", k, " out of range");
      return domains_[k];
    };
  }
  const std::vector<PreparedDomain>& domains() const { return domains_; }

 private:
  std::vector<PreparedDomain> domains_;
};

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  AccuracyMatrix accuracy;
  Metrics metrics;
  std::vector<std::vector<TraceRow>> traces;
  std::size_t coreset_entries = 0;
};

struct VariantResult {
  Variant variant = Variant::proposed;
  std::vector<TrialResult> trials;
  std::optional<std::string> error;

  double mean_accuracy() const;
  double mean_forgetting() const;
};

namespace detail {
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}
inline std::vector<double> collect(const VariantResult& v, bool forgetting) {
  std::vector<double> xs;
  for (const auto& t : v.trials) xs.push_back(forgetting ? t.metrics.forgetting : t.metrics.average_accuracy);
  return xs;
}
}  // namespace detail

inline double VariantResult::mean_accuracy() const { return detail::mean_std(detail::collect(*this, false)).first; }
inline double VariantResult::mean_forgetting() const { return detail::mean_std(detail::collect(*this, true)).first; }

struct SuiteResult {
  ExperimentConfig config;
  std::vector<VariantResult> variants;

  const VariantResult& get(Variant v) const {
    for (const auto& r : variants)
      if (r.variant == v) return r;
    throw InvalidArgument(concat("variant ", to_string(v), " not in suite result"));
  }
};

inline TrialResult to_trial_result(SequentialResult&& r) {
  TrialResult t;
  t.trial = r.trial;
  t.seed = r.seed;
  t.metrics = compute_metrics(r.accuracy);
  t.accuracy = std::move(r.accuracy);
  t.traces = std::move(r.traces);
  t.coreset_entries = r.coreset.size();
  return t;
}

/// EDGECL_THREADS, or 1 when unset or invalid.
inline std::size_t threads_from_env() {
  const char* v = std::getenv("EDGECL_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n >= 1) ? static_cast<std::size_t>(n) : 1;
}

/// Every (variant, trial) pair on shared domains; a failing variant is recorded and skipped.
/// Jobs are independent, so running them on `threads` workers does not change any result.
inline SuiteResult run_benchmark_suite(const ExperimentConfig& config, const Logger& log = {},
                                       const DomainStore* store = nullptr, std::size_t threads = 1) {
  config.validate();
  std::optional<DomainStore> own;
  if (!store) store = &own.emplace(config);
  const std::size_t n_jobs = config.variants.size() * config.n_trials;
  std::vector<std::optional<TrialResult>> done(n_jobs);
  std::vector<std::string> errors(n_jobs);
  std::vector<std::exception_ptr> fatal(n_jobs);
  std::mutex log_mutex;
  const Logger safe_log = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(line);
  };
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < n_jobs; job = next++) {
      const Variant v = config.variants[job / config.n_trials];
      const std::size_t t = job % config.n_trials;
      try {
        done[job] = to_trial_result(run_sequential(config, v, t, store->provider(), safe_log));
      } catch (const NumericalError&) {
        fatal[job] = std::current_exception();
      } catch (const Error& e) {
        errors[job] = e.what();
        safe_log(concat(to_string(v), " trial ", t, " failed: ", e.what()));
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n_jobs, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& f : fatal)
    if (f) std::rethrow_exception(f);

  SuiteResult suite;
  suite.config = config;
  for (std::size_t vi = 0; vi < config.variants.size(); ++vi) {
    VariantResult vr;
    vr.variant = config.variants[vi];
    for (std::size_t t = 0; t < config.n_trials; ++t) {
      const std::size_t job = vi * config.n_trials + t;
      if (!errors[job].empty()) {
        vr.error = errors[job];
        vr.trials.clear();
        break;
      }
      vr.trials.push_back(std::move(*done[job]));
    }
    suite.variants.push_back(std::move(vr));
  }
  return suite;
}

namespace detail {
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string matrix_csv(const AccuracyMatrix& R) {
  std::string out = "period";
  const std::size_t K = R.periods();
  for (std::size_t k = 0; k < K; ++k) out += ",domain_" + std::to_string(k + 1);
  out += "\n";
  for (std::size_t p = 0; p < K; ++p) {
    out += std::to_string(p + 1);
    for (std::size_t k = 0; k < K; ++k) out += "," + (k < R.rows[p].size() ? detail::fmt17(R.rows[p][k]) : std::string());
    out += "\n";
  }
  return out;
}

inline AccuracyMatrix parse_matrix_csv(const std::string& text) {
  AccuracyMatrix R;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    std::vector<double> row;
    while (std::getline(cells, cell, ','))
      if (!cell.empty()) row.push_back(std::strtod(cell.c_str(), nullptr));
    R.rows.push_back(std::move(row));
  }
  return R;
}

inline nlohmann::ordered_json results_json(const SuiteResult& s) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(s.config);
  j["variants"] = nlohmann::ordered_json::array();
  for (const auto& v : s.variants) {
    nlohmann::ordered_json jv;
    jv["variant"] = to_string(v.variant);
    if (v.error) jv["error"] = *v.error;
    const auto [acc_mean, acc_std] = detail::mean_std(detail::collect(v, false));
    const auto [fg_mean, fg_std] = detail::mean_std(detail::collect(v, true));
    if (!v.trials.empty())
      jv["summary"] = {{"average_accuracy_mean", acc_mean},
                       {"average_accuracy_std", acc_std},
                       {"forgetting_mean", fg_mean},
                       {"forgetting_std", fg_std}};
    jv["trials"] = nlohmann::ordered_json::array();
    for (const auto& t : v.trials) {
      nlohmann::ordered_json jt;
      jt["trial"] = t.trial;
      jt["seed"] = t.seed;
      jt["average_accuracy"] = t.metrics.average_accuracy;
      jt["forgetting"] = t.metrics.forgetting;
      jt["accuracy_matrix"] = t.accuracy.rows;
      jt["coreset_entries"] = t.coreset_entries;
      jv["trials"].push_back(std::move(jt));
    }
    j["variants"].push_back(std::move(jv));
  }
  return j;
}

/// results.json, matrix_<variant>_<trial>.csv, summary.csv and curves.csv under `dir`.
inline void export_results(const SuiteResult& s, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require<IoError>(!ec && std::filesystem::is_directory(dir), "cannot create output directory ", dir.string());
  io::write_file_atomic(dir / "results.json", results_json(s).dump(2) + "\n");
  std::string summary = "variant,trials,average_accuracy_mean,average_accuracy_std,forgetting_mean,forgetting_std\n";
  std::string curves = "variant,trial,domain,period,accuracy\n";
  for (const auto& v : s.variants) {
    const auto [am, as] = detail::mean_std(detail::collect(v, false));
    const auto [fm, fs] = detail::mean_std(detail::collect(v, true));
    summary += concat(to_string(v.variant), ",", v.trials.size(), ",", detail::fmt17(am), ",", detail::fmt17(as), ",",
                      detail::fmt17(fm), ",", detail::fmt17(fs), "\n");
    for (const auto& t : v.trials) {
      io::write_file_atomic(dir / concat("matrix_", to_string(v.variant), "_", t.trial, ".csv"), matrix_csv(t.accuracy));
      for (std::size_t k = 0; k < t.accuracy.periods(); ++k)
        for (std::size_t p = k; p < t.accuracy.periods(); ++p)
          curves += concat(to_string(v.variant), ",", t.trial, ",", k + 1, ",", p + 1, ",",
                           detail::fmt17(t.accuracy.at(p, k)), "\n");
      if (s.config.write_traces)
        for (std::size_t k = 0; k < t.traces.size(); ++k)
          io::write_file_atomic(dir / concat("trace_", to_string(v.variant), "_", t.trial, "_", k + 1, ".csv"),
                                trace_csv(t.traces[k]));
    }
  }
  io::write_file_atomic(dir / "summary.csv", summary);
  io::write_file_atomic(dir / "curves.csv", curves);
}

}  // namespace edgecl
