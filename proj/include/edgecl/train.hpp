#pragma once

// Losses, objective composition, gradients, the sharpness-aware update and the
// parameter-regularization importance estimates used by the benchmark variants.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edgecl/common.hpp"
#include "edgecl/dataset_io.hpp"
#include "edgecl/model.hpp"
#include "edgecl/preprocess.hpp"

namespace edgecl {

inline constexpr double kProbabilityFloor = 1e-12;

enum class Variant { proposed, er_kmeans, er_herding, pr_ewc, pr_mas, bl_ft, bl_cumulative, bl_er_rand, bl_nondistill };

inline constexpr std::array<Variant, 9> kAllVariants = {
    Variant::proposed, Variant::er_kmeans, Variant::er_herding,    Variant::pr_ewc,       Variant::pr_mas,
    Variant::bl_ft,    Variant::bl_cumulative, Variant::bl_er_rand, Variant::bl_nondistill};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::proposed: return "proposed";
    case Variant::er_kmeans: return "er_kmeans";
    case Variant::er_herding: return "er_herding";
    case Variant::pr_ewc: return "pr_ewc";
    case Variant::pr_mas: return "pr_mas";
    case Variant::bl_ft: return "bl_ft";
    case Variant::bl_cumulative: return "bl_cumulative";
    case Variant::bl_er_rand: return "bl_er_rand";
    case Variant::bl_nondistill: return "bl_nondistill";
  }
  return "?";
}

inline Variant parse_variant(std::string_view tag) {
  for (Variant v : kAllVariants)
    if (to_string(v) == tag) return v;
  throw ConfigError(concat("unknown variant '", tag, "'"));
}

inline bool uses_coreset(Variant v) {
  return v == Variant::proposed || v == Variant::er_kmeans || v == Variant::er_herding || v == Variant::bl_er_rand ||
         v == Variant::bl_nondistill;
}
inline bool uses_importance(Variant v) { return v == Variant::pr_ewc || v == Variant::pr_mas; }
inline bool uses_distilled_labels(Variant v) { return v == Variant::proposed; }
inline bool uses_sam(Variant v) { return v == Variant::proposed; }

struct TrainConfig {
  double learning_rate = 1e-3;  // alpha
  std::size_t iterations = 500;  // I
  std::size_t batch_size = 32;
  std::size_t replay_batch = 32;  // exemplars per iteration: min(|K|, replay_batch)
  double deviation_radius = 0.03;  // epsilon
  std::uint64_t seed = 0;
  Variant variant = Variant::proposed;

  void validate() const {
    require<ConfigError>(learning_rate > 0.0, "learning rate must be > 0");
    require<ConfigError>(batch_size >= 1, "batch size must be >= 1");
    require<ConfigError>(deviation_radius >= 0.0, "deviation radius must be >= 0");
  }
};

/// Diagonal importance v with its anchor theta*; regularizer 0.5 * sum v_i (theta_i - theta*_i)^2.
struct ImportanceVector {
  ParamVector v;
  ParamVector anchor;

  void validate(std::size_t V) const {
    require(v.size() == V && anchor.size() == V, "importance vector length mismatch");
    for (double x : v) require(x >= 0.0 && std::isfinite(x), "importance entries must be finite and >= 0");
  }
};

/// -sum_j t_j log(max(p_j, 1e-12)).
inline double ce_loss(std::span<const double> p, std::span<const double> target) {
  require(p.size() == target.size(), "ce_loss length mismatch: ", p.size(), " vs ", target.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (target[j] != 0.0) loss -= target[j] * std::log(std::max(p[j], kProbabilityFloor));
  return loss;
}

/// d ce_loss(softmax(y / eta), t) / dy. Clamped entries contribute no gradient.
inline Vector ce_logit_gradient(std::span<const double> p, std::span<const double> target, double eta) {
  Vector d(static_cast<Eigen::Index>(p.size()));
  double live_mass = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] > kProbabilityFloor) live_mass += target[j];
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double own = p[j] > kProbabilityFloor ? target[j] : 0.0;
    d(static_cast<Eigen::Index>(j)) = (p[j] * live_mass - own) / eta;
  }
  return d;
}

inline double pr_regularizer(std::span<const double> theta, const ImportanceVector& imp, std::span<double> grad = {}) {
  double r = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double diff = theta[i] - imp.anchor[i];
    r += 0.5 * imp.v[i] * diff * diff;
    if (!grad.empty()) grad[i] += imp.v[i] * diff;
  }
  return r;
}

/// One training input with its target distribution.
struct LabeledInput {
  const PreprocessedSequence* x = nullptr;
  std::span<const double> target;
};

/// Everything one evaluation of the (P1)-style objective needs besides theta.
struct ObjectiveTerms {
  std::vector<LabeledInput> batch;   // current-domain items, eta = 1
  std::vector<LabeledInput> replay;  // exemplars, evaluated through g_eta
  double replay_eta = 1.0;
  const ImportanceVector* importance = nullptr;
  Mode mode = Mode::eval;
  std::uint64_t dropout_seed = 0;  // masks for item i come from derive_seed(dropout_seed, i)
};

/// Composes the objective for `variant` from its terms.
inline ObjectiveTerms make_terms(Variant variant, std::vector<LabeledInput> batch, std::vector<LabeledInput> replay,
                                 double eta, const ImportanceVector* importance) {
  ObjectiveTerms t;
  t.batch = std::move(batch);
  if (uses_coreset(variant)) {
    t.replay = std::move(replay);
    t.replay_eta = uses_distilled_labels(variant) ? eta : 1.0;
  }
  if (uses_importance(variant)) {
    require(importance != nullptr, "variant ", to_string(variant), " needs an importance vector");
    t.importance = importance;
  }
  return t;
}

/// Objective value at theta; accumulates its exact gradient into `grad` when non-empty.
inline double objective(const ModelParams& params, std::span<const double> theta, const ObjectiveTerms& terms,
                        std::span<double> grad = {}) {
  const ParamView view = params.view(theta);
  if (!grad.empty()) require(grad.size() == theta.size(), "gradient buffer length mismatch");
  double total = 0.0;
  std::size_t item = 0;
  auto add = [&](const LabeledInput& in, double eta) {
    require(in.x != nullptr, "null training input");
    Rng rng = make_rng(terms.dropout_seed, item++);
    ForwardCache cache;
    const ForwardOutput out = forward(view, *in.x, terms.mode, &rng, grad.empty() ? nullptr : &cache, eta);
    const double loss = ce_loss(out.probabilities, in.target);
    require<NumericalError>(std::isfinite(loss), "non-finite loss in forward pass");
    total += loss;
    if (!grad.empty()) backward(view, cache, ce_logit_gradient(out.probabilities, in.target, eta), grad);
  };
  for (const auto& in : terms.batch) add(in, 1.0);
  for (const auto& in : terms.replay) add(in, terms.replay_eta);
  if (terms.importance) {
    terms.importance->validate(theta.size());
    total += pr_regularizer(theta, *terms.importance, grad);
  }
  return total;
}

/// f(theta, grad): returns the objective and writes (overwrites) its gradient.
using Objective = std::function<double(std::span<const double>, std::span<double>)>;

inline Objective make_objective(const ModelParams& params, const ObjectiveTerms& terms) {
  return [&params, &terms](std::span<const double> theta, std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return objective(params, theta, terms, grad);
  };
}

struct GradientResult {
  double value = 0.0;
  ParamVector gradient;
};

/// Evaluates `f` and its gradient at theta; non-finite values raise NumericalError.
inline GradientResult gradient(const Objective& f, std::span<const double> theta) {
  GradientResult r;
  r.gradient.assign(theta.size(), 0.0);
  r.value = f(theta, r.gradient);
  require<NumericalError>(std::isfinite(r.value), "objective is not finite");
  for (double g : r.gradient) require<NumericalError>(std::isfinite(g), "gradient has a non-finite entry");
  return r;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct StepInfo {
  double loss = 0.0;       // objective at the pre-step theta
  double grad_norm = 0.0;  // ||grad|| at the pre-step theta
};

/// theta <- theta - alpha * grad f(theta + delta*), delta* = eps * g / ||g||.
/// eps = 0 skips the perturbed evaluation and is exactly one gradient-descent step.
inline StepInfo sam_step(std::span<double> theta, const Objective& f, double alpha, double eps) {
  require(eps >= 0.0, "deviation radius must be >= 0");
  const GradientResult g1 = gradient(f, theta);
  StepInfo info{g1.value, l2_norm(g1.gradient)};
  if (eps == 0.0) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= alpha * g1.gradient[i];
    return info;
  }
  ParamVector perturbed(theta.begin(), theta.end());
  if (info.grad_norm >= 1e-12) {
    const double scale = eps / info.grad_norm;
    for (std::size_t i = 0; i < theta.size(); ++i) perturbed[i] += scale * g1.gradient[i];
  }
  const GradientResult g2 = gradient(f, perturbed);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= alpha * g2.gradient[i];
  return info;
}

enum class ImportanceMethod { ewc, mas };

/// EWC: mean squared per-sample CE gradient. MAS: mean |grad of 0.5 ||logits||^2|.
/// Evaluated in eval mode on `n_samples` inputs drawn without replacement.
inline ImportanceVector estimate_importance(const ModelParams& params, std::span<const LabeledInput> data,
                                            ImportanceMethod method, std::size_t n_samples, std::uint64_t seed) {
  require(n_samples >= 1, "importance estimation needs at least one sample");
  require(n_samples <= data.size(), "n_samples ", n_samples, " exceeds dataset size ", data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x696d70ULL);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t V = params.size();
  ImportanceVector imp{ParamVector(V, 0.0), params.values()};
  ParamVector g(V);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const LabeledInput& in = data[order[s]];
    std::fill(g.begin(), g.end(), 0.0);
    ForwardCache cache;
    const ForwardOutput out = forward(params.view(), *in.x, Mode::eval, nullptr, &cache);
    const Vector dlogits = method == ImportanceMethod::ewc ? ce_logit_gradient(out.probabilities, in.target, 1.0)
                                                           : out.logits;
    backward(params.view(), cache, dlogits, g);
    for (std::size_t i = 0; i < V; ++i) imp.v[i] += method == ImportanceMethod::ewc ? g[i] * g[i] : std::abs(g[i]);
  }
  for (double& x : imp.v) x /= static_cast<double>(n_samples);
  return imp;
}

struct TraceRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// `count` distinct indices from [0, n), uniformly.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  require(count <= n, "cannot sample ", count, " of ", n, " without replacement");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

/// I iterations over one domain with optional replay; SAM for the proposed variant only.
inline std::vector<TraceRow> train_epochs(ModelParams& params, std::span<const LabeledInput> domain,
                                          std::span<const LabeledInput> replay, const TrainConfig& config,
                                          double eta = 2.0, const ImportanceVector* importance = nullptr) {
  config.validate();
  require(!domain.empty(), "cannot train on an empty domain");
  const double eps = uses_sam(config.variant) ? config.deviation_radius : 0.0;
  std::vector<TraceRow> trace;
  trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    Rng rng = make_rng(config.seed, it);
    std::vector<LabeledInput> batch, exemplars;
    for (std::size_t i : sample_without_replacement(domain.size(), std::min(config.batch_size, domain.size()), rng))
      batch.push_back(domain[i]);
    if (uses_coreset(config.variant) && !replay.empty())
      for (std::size_t i : sample_without_replacement(replay.size(), std::min(config.replay_batch, replay.size()), rng))
        exemplars.push_back(replay[i]);
    ObjectiveTerms terms = make_terms(config.variant, std::move(batch), std::move(exemplars), eta, importance);
    terms.mode = Mode::train;
    terms.dropout_seed = derive_seed(config.seed, 0x64726f70ULL + it);
    const StepInfo info = sam_step(params.values(), make_objective(params, terms), config.learning_rate, eps);
    trace.push_back({it, info.loss, info.grad_norm});
  }
  return trace;
}

inline std::string trace_csv(std::span<const TraceRow> trace) {
  std::string out = "iteration,loss,grad_norm\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.iteration, r.loss, r.grad_norm);
    out += buf;
  }
  return out;
}

/// Appends rows to <path>, writing the header only when the file is new.
inline void append_trace(const std::filesystem::path& path, std::span<const TraceRow> trace) {
  std::string body = trace_csv(trace);
  if (std::filesystem::exists(path)) {
    body.erase(0, body.find('\n') + 1);
    body = io::read_file(path) + body;
  }
  io::write_file_atomic(path, body);
}

}  // namespace edgecl
