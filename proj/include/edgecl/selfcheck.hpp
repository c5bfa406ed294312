#pragma once

// The ten acceptance criteria as runnable checks, shared by the acceptance test binary
// and `edgecl check`. Each oracle is computed on a route independent of the code it
// judges: finite differences for gradients, exhaustive search for selection, direct
// summation of scattering gains for the preprocessing property.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "edgecl/edgecl.hpp"

namespace edgecl::selfcheck {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;  // 0: no hard limit
  bool within_limit = true;
};

inline std::string format(const CriterionResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "(%.2f s", r.seconds);
  std::string timing = buf;
  if (r.limit_seconds > 0.0) {
    std::snprintf(buf, sizeof buf, ", limit %.0f s", r.limit_seconds);
    timing += buf;
  }
  timing += ")";
  return concat("criterion ", r.id, " ", r.passed ? "PASS" : "FAIL", "  ", r.name, ": ", r.detail, " ", timing);
}

// ---------------------------------------------------------------------------------------
// 1. reverse-mode gradients against central finite differences

struct GradientCheckStats {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_width = 4;
  c.encoder_hidden = 16;
  c.width = 8;
  c.heads = 2;
  c.blocks = 1;
  c.classes = 2;
  c.dropout = 0.1;
  return c;
}

/// Objective: one current-domain item plus one exemplar through g_eta, dropout active
/// with fixed masks, so the function is deterministic and piecewise smooth.
inline GradientCheckStats gradient_check(std::uint64_t seed, std::size_t n_rows = 3, double step = 1e-5) {
  const ModelConfig c = tiny_config();
  ModelParams params = init_params(c, seed);
  Rng rng = make_rng(seed, 0x6664ULL);
  std::normal_distribution<double> normal;
  // Non-zero biases so every parameter block is exercised away from its initial symmetry.
  for (auto& v : params.values()) v += 0.05 * normal(rng);
  PreprocessedSequence x1(n_rows, c.input_width), x2(n_rows, c.input_width);
  for (Eigen::Index i = 0; i < x1.size(); ++i) {
    x1.data()[i] = normal(rng);
    x2.data()[i] = normal(rng);
  }
  const std::vector<double> hard = {1.0, 0.0};
  const double p = uniform(rng, 0.1, 0.9);
  const std::vector<double> soft = {p, 1.0 - p};
  ObjectiveTerms terms;
  terms.batch = {{&x1, hard}};
  terms.replay = {{&x2, soft}};
  terms.replay_eta = 2.0;
  terms.mode = Mode::train;
  terms.dropout_seed = derive_seed(seed, 0x6d61736bULL);
  const Objective f = make_objective(params, terms);

  const GradientResult g = gradient(f, params.values());
  ParamVector theta = params.values();
  std::vector<double> scratch(theta.size());
  GradientCheckStats stats;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + step;
    const double up = f(theta, scratch);
    theta[i] = orig - step;
    const double down = f(theta, scratch);
    theta[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    stats.max_relative_error = std::max(stats.max_relative_error, relative_error(g.gradient[i], fd));
    ++stats.coordinates;
  }
  return stats;
}

inline CriterionResult check_gradient_oracle() {
  CriterionResult r{1, "gradient oracle"};
  r.limit_seconds = 30;
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t m = 0; m < 20; ++m) {
    const auto s = gradient_check(1000 + m);
    worst = std::max(worst, s.max_relative_error);
    coords += s.coordinates;
  }
  r.passed = worst < 1e-4;
  r.detail = concat("20 tiny models, ", coords, " coordinates, max relative error ", worst, " (< 1e-4)");
  return r;
}

// ---------------------------------------------------------------------------------------
// 2. sharpness-aware step in closed form

inline Objective half_square_norm() {
  return [](std::span<const double> theta, std::span<double> grad) {
    double v = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v += 0.5 * theta[i] * theta[i];
      grad[i] = theta[i];
    }
    return v;
  };
}

inline CriterionResult check_sam_closed_form() {
  CriterionResult r{2, "SAM closed form"};
  r.limit_seconds = 1;
  std::vector<double> theta = {3.0, 4.0};
  sam_step(theta, half_square_norm(), 0.1, 0.5);
  const double err = std::max(std::abs(theta[0] - 2.67), std::abs(theta[1] - 3.56));

  std::vector<double> a = {3.0, 4.0, -1.25, 0.5};
  std::vector<double> b = a;
  sam_step(a, half_square_norm(), 0.1, 0.0);
  for (double& v : b) v = v - 0.1 * v;  // plain gradient descent, gradient = theta
  const bool bitwise = std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;

  r.passed = err <= 1e-12 && bitwise;
  r.detail = concat("theta = (", theta[0], ", ", theta[1], "), |error| ", err, " (<= 1e-12); eps=0 bitwise SGD: ",
                    bitwise ? "yes" : "no");
  return r;
}

// ---------------------------------------------------------------------------------------
// 3. k-means selection against exhaustive member-pair search

/// Unit-square corners under a seeded rotation, translation and order shuffle.
inline Matrix unit_square_instance(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x737175ULL);
  const double angle = uniform(rng, 0.0, 2.0 * kPi);
  const double tx = uniform(rng, -5.0, 5.0), ty = uniform(rng, -5.0, 5.0);
  std::vector<std::array<double, 2>> pts = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  std::shuffle(pts.begin(), pts.end(), rng);
  Matrix F(4, 2);
  for (int i = 0; i < 4; ++i) {
    F(i, 0) = std::cos(angle) * pts[i][0] - std::sin(angle) * pts[i][1] + tx;
    F(i, 1) = std::sin(angle) * pts[i][0] + std::cos(angle) * pts[i][1] + ty;
  }
  return F;
}

/// Minimum of the clustering objective over every m-subset of members.
inline double exhaustive_member_optimum(const Matrix& F, std::size_t m) {
  const auto n = static_cast<std::size_t>(F.rows());
  std::vector<bool> mask(n, false);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(m), true);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        double d = 0.0;
        for (Eigen::Index k = 0; k < F.cols(); ++k) {
          const double diff = F(static_cast<Eigen::Index>(i), k) - F(static_cast<Eigen::Index>(j), k);
          d += diff * diff;
        }
        nearest = std::min(nearest, d);
      }
      total += nearest;
    }
    best = std::min(best, total);
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return best;
}

inline bool non_increasing(const std::vector<double>& h, double tol = 1e-12) {
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[i - 1] + tol * std::max(1.0, std::abs(h[i - 1]))) return false;
  return true;
}

inline CriterionResult check_clustering_oracle() {
  CriterionResult r{3, "clustering oracle"};
  r.limit_seconds = 5;
  std::size_t optimal = 0;
  bool monotone = true;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Matrix F = unit_square_instance(s);
    KMeansResult diag;
    const auto picks = kmeans_select(F, 2, s, &diag);
    const double got = member_objective(F, picks);
    const double best = exhaustive_member_optimum(F, 2);
    if (std::abs(got - best) <= 1e-9 * std::max(1.0, best)) ++optimal;
    monotone = monotone && non_increasing(diag.objective_history);
  }
  // Lloyd monotonicity on less symmetric data as well.
  std::size_t lloyd_runs = 30;
  for (std::uint64_t s = 0; s < 30; ++s) {
    Rng rng = make_rng(s, 0x6c6c6f7964ULL);
    std::normal_distribution<double> normal;
    Matrix F(50, 4);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = normal(rng) + (i % 3 == 0 ? 4.0 : 0.0);
    monotone = monotone && non_increasing(kmeans_cluster(F, 5, s).objective_history);
  }
  r.passed = optimal >= 28 && monotone;
  r.detail = concat(optimal, "/30 unit-square instances at the exhaustive optimum (>= 28); Lloyd objective non-increasing in all ",
                    30 + lloyd_runs, " runs: ", monotone ? "yes" : "no");
  return r;
}

// ---------------------------------------------------------------------------------------
// 4. herding against exhaustive per-step minimization

inline CriterionResult check_herding_oracle() {
  CriterionResult r{4, "herding oracle"};
  r.limit_seconds = 5;
  std::size_t steps = 0, matched = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng = make_rng(s, 0x68657264ULL);
    std::normal_distribution<double> normal;
    Matrix F(30, 6);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = normal(rng);
    const std::size_t n_fixed = s % 4;
    const auto fixed = sample_without_replacement(30, n_fixed, rng);
    const std::size_t m = 10 - n_fixed;
    std::vector<HerdingStep> trace;
    const auto picks = herding_select(F, fixed, m, HerdingForm::running_mean, &trace);

    // Oracle: recompute every candidate's running mean from scratch at each step.
    std::vector<std::size_t> chosen(fixed.begin(), fixed.end());
    std::vector<double> mean(6, 0.0);
    for (Eigen::Index i = 0; i < 30; ++i)
      for (int k = 0; k < 6; ++k) mean[k] += F(i, k) / 30.0;
    for (std::size_t step = 0; step < m; ++step) {
      std::size_t best = 30;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t cand = 0; cand < 30; ++cand) {
        if (std::find(chosen.begin(), chosen.end(), cand) != chosen.end()) continue;
        double d2 = 0.0;
        for (int k = 0; k < 6; ++k) {
          double sum = F(static_cast<Eigen::Index>(cand), k);
          for (std::size_t c : chosen) sum += F(static_cast<Eigen::Index>(c), k);
          const double diff = sum / static_cast<double>(chosen.size() + 1) - mean[k];
          d2 += diff * diff;
        }
        if (d2 < best_d) {
          best_d = d2;
          best = cand;
        }
      }
      ++steps;
      if (picks[step] == best) ++matched;
      chosen.push_back(picks[step]);  // follow the implementation so later steps are comparable
    }
  }
  r.passed = steps > 0 && matched == steps;
  r.detail = concat(matched, "/", steps, " greedy steps over 100 instances match exhaustive minimization (exact)");
  return r;
}

// ---------------------------------------------------------------------------------------
// 5. preprocessing: phase-error invariance and the Proposition-1 correlation

inline double max_abs_diff_relative(const PreprocessedSequence& a, const PreprocessedSequence& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(a.cwiseAbs().maxCoeff(), 1e-300);
}

/// |sum a conj(b)| / sqrt(sum |a|^2 sum |b|^2).
inline double complex_correlation(std::span<const cplx> a, std::span<const cplx> b) {
  cplx num = 0.0;
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * std::conj(b[i]);
    na += std::norm(a[i]);
    nb += std::norm(b[i]);
  }
  return std::abs(num) / std::sqrt(na * nb);
}

struct PreprocessCheck {
  double phase_invariance = 0.0;      // simulator-level: phase errors on vs off
  double injected_invariance = 0.0;   // per-packet phasors applied to an existing sequence
  double min_correlation = 1.0;       // over subcarriers
};

inline PreprocessCheck preprocess_properties(std::uint64_t seed = 11) {
  PreprocessCheck out;
  SceneOptions so;
  SceneConfig with_phase = make_scene(so);
  SceneConfig without_phase = with_phase;
  without_phase.phase_error_enabled = false;
  const UserProfile user = make_user_profile(3);
  const AntennaLayout layout = AntennaLayout::of(with_phase);
  for (std::size_t activity = 0; activity < user.n_classes(); ++activity) {
    const CsiSequence a = simulate_sequence(with_phase, user, activity, derive_seed(seed, activity));
    const CsiSequence b = simulate_sequence(without_phase, user, activity, derive_seed(seed, activity));
    out.phase_invariance = std::max(out.phase_invariance, max_abs_diff_relative(preprocess_sequence(a, layout, 3.0),
                                                                                preprocess_sequence(b, layout, 3.0)));
    CsiSequence c = b;
    Rng rng = make_rng(seed, 0x70686173ULL + activity);
    for (auto& h : c.samples) {
      const cplx ph = std::polar(1.0, uniform(rng, 0.0, 2.0 * kPi));
      for (auto& v : h) v *= ph;
    }
    out.injected_invariance = std::max(out.injected_invariance, max_abs_diff_relative(preprocess_sequence(b, layout, 3.0),
                                                                                      preprocess_sequence(c, layout, 3.0)));
  }

  // Dominant static gain, no environment paths, no noise; phase errors stay on.
  so.static_scale = 100.0;
  so.n_env_paths = 0;
  SceneConfig scene = make_scene(so);
  scene.noise_std = 0.0;
  const auto paths = user.paths_for(6);
  const auto times = sample_packet_times(scene.duration, 100.0, seed);
  Rng rng = make_rng(seed, 0x70726f70ULL);
  std::vector<std::vector<cplx>> x(scene.n_subcarriers), hu1(scene.n_subcarriers), hu2(scene.n_subcarriers);
  for (double t : times) {
    const double phase = uniform(rng, 0.0, 2.0 * kPi);
    std::vector<cplx> h(scene.sample_length());
    for (std::size_t k = 0; k < scene.n_subcarriers; ++k) {
      const double f = scene.subcarrier_frequency(k);
      for (std::size_t rx = 0; rx < 2; ++rx) {
        h[scene.link_index(k, 0, rx)] = channel_gain(scene, paths, {0, rx}, f, t, phase, rng);
        // Oracle: the user's contribution summed straight from the scattering model.
        cplx u = 0.0;
        for (const auto& p : paths)
          u += scattering_gain(f, p.gain, p.rcs, scene.tx_positions[0], scene.rx_positions[rx], p.trajectory.at(t));
        (rx == 0 ? hu1 : hu2)[k].push_back(u);
      }
    }
    const auto conj = conjugate_multiply(h, layout);
    for (std::size_t k = 0; k < scene.n_subcarriers; ++k) x[k].push_back(conj[layout.conj_index(k, 0, 0)]);
  }
  for (std::size_t k = 0; k < scene.n_subcarriers; ++k) {
    const auto xn = normalize(x[k]);
    const cplx beta = scene.static_gain[scene.link_index(k, 0, 1)] / std::conj(scene.static_gain[scene.link_index(k, 0, 0)]);
    std::vector<cplx> dx, rhs;
    for (std::size_t n = 1; n < xn.size(); ++n) {
      dx.push_back(xn[n] - xn[n - 1]);
      rhs.push_back((hu2[k][n] - hu2[k][n - 1]) + beta * std::conj(hu1[k][n] - hu1[k][n - 1]));
    }
    out.min_correlation = std::min(out.min_correlation, complex_correlation(dx, rhs));
  }
  return out;
}

inline CriterionResult check_preprocess_invariance() {
  CriterionResult r{5, "preprocessing invariance"};
  r.limit_seconds = 10;
  const PreprocessCheck p = preprocess_properties();
  r.passed = p.phase_invariance < 1e-9 && p.injected_invariance < 1e-9 && p.min_correlation > 0.99;
  r.detail = concat("phase errors on/off relative change ", p.phase_invariance, ", injected phasors ",
                    p.injected_invariance, " (< 1e-9); min correlation over subcarriers ", p.min_correlation,
                    " (> 0.99)");
  return r;
}

// ---------------------------------------------------------------------------------------
// 6. variation-rate scaling with distance

inline CriterionResult check_variation_scaling() {
  CriterionResult r{6, "variation scaling"};
  r.limit_seconds = 30;
  const SceneConfig scene = make_scene();
  const std::vector<double> ds = {5.0, 10.0, 20.0};
  double worst = 0.0;
  for (const auto& p : verify_variation_scaling(scene, ds))
    worst = std::max(worst, std::abs(p.relative_derivative - p.expected) / std::abs(p.expected));
  double worst_ratio = 0.0;
  const std::vector<std::pair<double, double>> pairs = {{0.5, 2.0}, {0.5, 4.0}, {1.0, 3.0}, {2.0, 1.0}};
  for (const auto& [du, de] : pairs) {
    const double ratio = variation_rate_ratio(scene.carrier_frequency, du, de);
    const double expected = de / du;
    worst_ratio = std::max(worst_ratio, std::abs(ratio - expected) / expected);
  }
  r.passed = worst < 0.10 && worst_ratio < 0.15;
  r.detail = concat("relative derivative vs -1/d at d = 5, 10, 20 m: worst deviation ", 100.0 * worst,
                    "% (< 10%); user/env variation ratio vs (d_U/d_E)^-1: worst deviation ", 100.0 * worst_ratio,
                    "% (< 15%)");
  return r;
}

// ---------------------------------------------------------------------------------------
// 7. confidence downscaling

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline CriterionResult check_distillation() {
  CriterionResult r{7, "distillation properties"};
  r.limit_seconds = 10;
  ModelConfig c;
  c.input_width = 64;
  bool identical = true, monotone = true;
  double shift_err = 0.0;
  const std::vector<double> etas = {1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 100.0};
  for (std::uint64_t s = 0; s < 100; ++s) {
    const ModelParams params = init_params(c, 500 + s / 10);
    Rng rng = make_rng(s, 0x64697374ULL);
    std::normal_distribution<double> normal;
    PreprocessedSequence x(8 + s % 13, c.input_width);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * normal(rng);
    const auto plain = forward(params.view(), x, Mode::eval).probabilities;
    const auto scaled = forward_downscaled(params, x, 1.0);
    identical = identical && std::memcmp(plain.data(), scaled.data(), plain.size() * sizeof(double)) == 0;
    double prev = -1.0;
    for (double eta : etas) {
      const double h = entropy(forward_downscaled(params, x, eta));
      monotone = monotone && h >= prev - 1e-12;
      prev = h;
    }
    std::vector<double> logits(10);
    for (auto& v : logits) v = 5.0 * normal(rng);
    std::vector<double> shifted = logits;
    const double k = 50.0 * normal(rng);
    for (auto& v : shifted) v += k;
    const auto p1 = softmax(logits), p2 = softmax(shifted);
    for (std::size_t j = 0; j < p1.size(); ++j) shift_err = std::max(shift_err, std::abs(p1[j] - p2[j]));
  }
  r.passed = identical && monotone && shift_err < 1e-9;
  r.detail = concat("eta=1 bitwise equal to forward: ", identical ? "yes" : "no",
                    "; entropy non-decreasing in eta on 100 inputs: ", monotone ? "yes" : "no",
                    "; softmax shift error ", shift_err, " (< 1e-9)");
  return r;
}

// ---------------------------------------------------------------------------------------
// 8 and 10. end-to-end ordering and determinism

/// Desk-scale experiment: K=4 synthetic domains, 30 sequences per class, I=300, 5 trials.
inline ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.domains = 4;
  c.n_per_class = 30;
  c.train.iterations = 300;
  c.n_trials = 5;
  c.variants = {Variant::proposed, Variant::bl_ft, Variant::bl_cumulative, Variant::er_kmeans, Variant::er_herding};
  return c;
}

struct EndToEndOutcome {
  SuiteResult suite;
  double seconds = 0.0;
};

inline CriterionResult check_end_to_end(const SuiteResult& s, double seconds) {
  CriterionResult r{8, "end-to-end ordering"};
  r.seconds = seconds;
  r.limit_seconds = 0;
  for (const auto& v : s.variants)
    if (v.error) {
      r.detail = concat(to_string(v.variant), " failed: ", *v.error);
      return r;
    }
  const auto& prop = s.get(Variant::proposed);
  const auto& ft = s.get(Variant::bl_ft);
  const auto& cum = s.get(Variant::bl_cumulative);
  const double er_best = std::max(s.get(Variant::er_kmeans).mean_accuracy(), s.get(Variant::er_herding).mean_accuracy());
  const bool c1 = prop.mean_forgetting() <= 0.5 * ft.mean_forgetting();
  const bool c2 = prop.mean_accuracy() >= ft.mean_accuracy() + 0.05;
  const bool c3 = cum.mean_accuracy() >= prop.mean_accuracy();
  const bool c4 = prop.mean_accuracy() >= er_best - 0.02;
  r.passed = c1 && c2 && c3 && c4;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "forgetting proposed %.4f vs 0.5*bl_ft %.4f [%s]; accuracy proposed %.4f vs bl_ft+0.05 %.4f [%s]; "
                "bl_cumulative %.4f >= proposed [%s]; proposed >= best ER %.4f - 0.02 [%s]; %.0f s (target 1800 s)",
                prop.mean_forgetting(), 0.5 * ft.mean_forgetting(), c1 ? "ok" : "no", prop.mean_accuracy(),
                ft.mean_accuracy() + 0.05, c2 ? "ok" : "no", cum.mean_accuracy(), c3 ? "ok" : "no", er_best,
                c4 ? "ok" : "no", seconds);
  r.detail = buf;
  return r;
}

/// The first trial of a suite as a standalone one-trial bundle.
inline SuiteResult first_trial(const SuiteResult& s) {
  SuiteResult out;
  out.config = s.config;
  out.config.n_trials = 1;
  for (const auto& v : s.variants) {
    VariantResult vr;
    vr.variant = v.variant;
    vr.error = v.error;
    if (!v.trials.empty()) vr.trials.push_back(v.trials.front());
    out.variants.push_back(std::move(vr));
  }
  return out;
}

inline CriterionResult check_determinism(const ExperimentConfig& config, const SuiteResult& reference,
                                         const DomainStore& store, std::size_t threads, const std::filesystem::path& dir,
                                         const Logger& log) {
  CriterionResult r{10, "determinism"};
  ExperimentConfig one = config;
  one.n_trials = 1;
  const SuiteResult again = run_benchmark_suite(one, log, &store, threads);
  export_results(first_trial(reference), dir / "first");
  export_results(again, dir / "repeat");
  const std::string a = io::read_file(dir / "first" / "results.json");
  const std::string b = io::read_file(dir / "repeat" / "results.json");
  r.passed = a == b;
  r.detail = concat("results.json of the repeated first trial ", r.passed ? "is" : "is NOT", " byte-identical (",
                    a.size(), " bytes, hash ", io::hex64(hash_bytes(a)), ")");
  return r;
}

// ---------------------------------------------------------------------------------------
// 9. memory accounting

inline CriterionResult check_memory_accounting() {
  CriterionResult r{9, "memory accounting"};
  r.limit_seconds = 1;
  KnowledgeCoreSet empty;
  const MemoryReport paper = memory_report(empty, 1, 3013, 60, 32, 10, 10);
  const bool ratio_exact = paper.ratio_vs_cumulative == 100.0 / 3013.0;
  const bool ratio_rounded = std::abs(paper.ratio_vs_cumulative - 0.0332) < 5e-5;
  bool floats_ok = true;
  for (std::size_t k : {1, 4, 8}) {
    const double expect = static_cast<double>(k) * (60.0 * 32.0 + 10.0) * 100.0;
    floats_ok = floats_ok && memory_report(empty, k, 3013, 60, 32, 10, 10).paper_model_floats == expect;
  }
  const bool k1 = paper.paper_model_floats == 193000.0;
  r.passed = ratio_exact && ratio_rounded && floats_ok && k1 && paper.stored_bytes == 0;
  r.detail = concat("ratio C*E/M = ", paper.ratio_vs_cumulative, " (0.0332); k(N*L_H + C)*C*E for k = 1, 4, 8: ",
                    floats_ok ? "exact" : "mismatch", " (k=1: ", paper.paper_model_floats, ")");
  return r;
}

// ---------------------------------------------------------------------------------------

template <typename F>
CriterionResult timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r = f();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.limit_seconds > 0.0) {
    r.within_limit = r.seconds < r.limit_seconds;
    r.passed = r.passed && r.within_limit;
  }
  return r;
}

/// Runs the requested criteria in order; 8 and 10 share one desk-scale suite.
inline std::vector<CriterionResult> run(const std::vector<int>& ids, const Logger& log = {},
                                        std::filesystem::path work_dir = {}) {
  auto wants = [&](int id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); };
  std::vector<CriterionResult> out;
  auto emit = [&](CriterionResult r) { out.push_back(std::move(r)); };
  if (wants(1)) emit(timed(check_gradient_oracle));
  if (wants(2)) emit(timed(check_sam_closed_form));
  if (wants(3)) emit(timed(check_clustering_oracle));
  if (wants(4)) emit(timed(check_herding_oracle));
  if (wants(5)) emit(timed(check_preprocess_invariance));
  if (wants(6)) emit(timed(check_variation_scaling));
  if (wants(7)) emit(timed(check_distillation));
  if (wants(9)) emit(timed(check_memory_accounting));
  if (wants(8) || wants(10)) {
    const ExperimentConfig config = desk_config();
    const std::size_t threads = threads_from_env();
    const DomainStore store(config);
    const auto t0 = std::chrono::steady_clock::now();
    const SuiteResult suite = run_benchmark_suite(config, log, &store, threads);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (work_dir.empty()) work_dir = std::filesystem::temp_directory_path() / "edgecl-acceptance";
    export_results(suite, work_dir / "suite");
    if (wants(8)) emit(check_end_to_end(suite, secs));
    if (wants(10)) emit(timed([&] { return check_determinism(config, suite, store, threads, work_dir, log); }));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace edgecl::selfcheck
