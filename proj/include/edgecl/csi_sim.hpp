#pragma once

// Synthetic CSI generation from a single-scattering multipath channel model.
//
// A CSI sample holds one complex gain per (subcarrier, tx, rx) link. Each gain is
//   (h_static(f) + h_env(f,t) + h_user(f,t) + noise) * exp(i*phi)
// where h_env and h_user are sums over moving point scatterers and phi is a
// per-packet oscillator phase shared by every Rx chain of one Tx chain.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgecl/common.hpp"

namespace edgecl {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double distance(Vec3 a, Vec3 b) { return (a - b).norm(); }

/// Piecewise-linear keyframe path. Positions are held constant outside the keyframe span.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec3> points;

  static Trajectory stationary(Vec3 p) { return {{0.0}, {p}}; }

  Vec3 at(double t) const {
    if (t <= times.front()) return points.front();
    if (t >= times.back()) return points.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - times[lo]) / (times[hi] - times[lo]);
    return points[lo] + w * (points[hi] - points[lo]);
  }

  void validate() const {
    require(!times.empty() && times.size() == points.size(), "trajectory needs matching non-empty keyframes");
    require(times.front() <= 0.0, "trajectory must start at or before t=0");
    for (std::size_t i = 1; i < times.size(); ++i)
      require(times[i] > times[i - 1], "trajectory keyframe times must be strictly increasing");
  }
};

struct DynamicPath {
  double gain = 1.0;  // antenna gain G, linear
  double rcs = 1.0;   // radar cross section alpha, m^2
  Trajectory trajectory;

  void validate() const {
    require(gain > 0.0 && rcs > 0.0, "dynamic path needs positive gain and rcs");
    trajectory.validate();
  }
};

/// Gain of one single-scattering path for a given Tx/Rx/scatterer placement.
inline cplx scattering_gain(double frequency, double gain, double rcs, Vec3 tx, Vec3 rx, Vec3 scatterer) {
  const double lambda = kSpeedOfLight / frequency;
  const double d_tx = distance(tx, scatterer);
  const double d_rx = distance(rx, scatterer);
  const double amplitude = lambda * std::sqrt(gain * rcs) / (std::pow(4.0 * kPi, 1.5) * d_tx * d_rx);
  return std::polar(amplitude, -2.0 * kPi * (d_tx + d_rx) / lambda);
}

struct Link {
  std::size_t tx = 0;
  std::size_t rx = 0;
};

struct SceneConfig {
  double carrier_frequency = 5.28e9;
  double bandwidth = 40e6;
  std::size_t n_subcarriers = 16;
  std::size_t n_tx_antennas = 1;
  std::size_t n_rx_antennas = 2;
  std::vector<Vec3> tx_positions;
  std::vector<Vec3> rx_positions;
  std::vector<cplx> static_gain;  // indexed by link_index(subcarrier, tx, rx)
  std::vector<DynamicPath> env_dynamic_paths;
  double noise_std = 0.0;
  bool phase_error_enabled = true;
  double duration = 3.0;
  double packet_rate = 20.0;

  std::size_t sample_length() const { return n_subcarriers * n_tx_antennas * n_rx_antennas; }

  std::size_t link_index(std::size_t subcarrier, std::size_t tx, std::size_t rx) const {
    return (subcarrier * n_tx_antennas + tx) * n_rx_antennas + rx;
  }

  double subcarrier_frequency(std::size_t k) const {
    const double spacing = bandwidth / static_cast<double>(n_subcarriers);
    return carrier_frequency - 0.5 * bandwidth + (static_cast<double>(k) + 0.5) * spacing;
  }

  void validate() const {
    require(n_rx_antennas >= 2, "scene needs at least two Rx antennas");
    require(n_subcarriers >= 1 && n_tx_antennas >= 1, "antenna and subcarrier counts must be >= 1");
    require(bandwidth > 0.0 && carrier_frequency > 0.0, "bandwidth and carrier must be positive");
    require(noise_std >= 0.0, "noise_std must be non-negative");
    require(duration > 0.0 && packet_rate >= 0.0, "duration must be positive and packet_rate non-negative");
    require(tx_positions.size() == n_tx_antennas, "tx_positions size mismatch");
    require(rx_positions.size() == n_rx_antennas, "rx_positions size mismatch");
    require(static_gain.size() == sample_length(), "static_gain must have one entry per link");
    for (const auto& p : env_dynamic_paths) p.validate();
  }
};

/// Per-user distortion of every scatterer trajectory: this is what makes users distinct domains.
struct GeometryPerturbation {
  Vec3 offset;
  double amplitude_scale = 1.0;
  double speed_scale = 1.0;
};

struct UserProfile {
  std::uint64_t user_id = 0;
  std::vector<std::vector<DynamicPath>> body_scatterers;  // templates, one set per class
  GeometryPerturbation geometry_perturbation;
  double motion_end = 2.0;
  double duration = 3.0;

  std::size_t n_classes() const { return body_scatterers.size(); }

  std::vector<DynamicPath> paths_for(std::size_t activity) const;
};

namespace detail {

inline Trajectory warp_trajectory(const Trajectory& base, const GeometryPerturbation& g, double motion_end,
                                  double duration) {
  constexpr double kStep = 0.02;
  const Vec3 origin = base.at(0.0);
  Trajectory out;
  auto sample = [&](double t) {
    const double tau = std::min(std::min(t, motion_end) * g.speed_scale, motion_end);
    const Vec3 displaced = base.at(tau) - origin;
    out.times.push_back(t);
    out.points.push_back(origin + g.offset + g.amplitude_scale * displaced);
  };
  const auto steps = static_cast<std::size_t>(std::ceil(motion_end / kStep));
  for (std::size_t i = 0; i <= steps; ++i) sample(std::min(static_cast<double>(i) * kStep, motion_end));
  if (duration > motion_end) sample(duration);
  return out;
}

}  // namespace detail

inline std::vector<DynamicPath> UserProfile::paths_for(std::size_t activity) const {
  require(activity < body_scatterers.size(), "activity ", activity, " out of range");
  std::vector<DynamicPath> out = body_scatterers[activity];
  for (auto& p : out) p.trajectory = detail::warp_trajectory(p.trajectory, geometry_perturbation, motion_end, duration);
  return out;
}

// Hand-authored activity trajectories. Each class drives a "hand" and a "torso"
// scatterer during the motion window and holds them afterwards.
struct BodyGeometry {
  Vec3 hand{0.20, 0.05, 1.00};
  Vec3 torso{0.35, 0.10, 1.00};
  double hand_rcs = 0.1;
  double torso_rcs = 0.5;
  double motion_end = 2.0;
  double duration = 3.0;
};

inline const std::array<const char*, 10>& activity_names() {
  static const std::array<const char*, 10> names = {"bend",      "jump",  "rotate", "walk",   "push_pull",
                                                    "sweep",     "circle", "zigzag", "typing", "hand_shake"};
  return names;
}

namespace detail {

struct Displacement {
  Vec3 hand;
  Vec3 torso;
};

// u in [0, 1] is the motion progress; `pattern` selects one of the ten base motions.
inline Displacement activity_displacement(std::size_t pattern, double u) {
  const double s1 = std::sin(2.0 * kPi * u);
  const double c1 = std::cos(2.0 * kPi * u);
  switch (pattern) {
    case 0: {  // bend: torso leans forward and down, hand follows
      const double a = std::sin(kPi * u);
      const Vec3 t{-0.12 * a, 0.0, -0.25 * a};
      return {t, t};
    }
    case 1: {  // jump: two hops
      const Vec3 t{0.0, 0.0, 0.15 * std::abs(std::sin(2.0 * kPi * u))};
      return {t, t};
    }
    case 2:  // rotate: torso and hand orbit the body axis
      return {{0.20 * (c1 - 1.0), 0.20 * s1, 0.0}, {0.12 * (c1 - 1.0), 0.12 * s1, 0.0}};
    case 3: {  // walk: sideways translation with arm swing
      const Vec3 t{0.02 * std::sin(8.0 * kPi * u), 0.6 * u, 0.0};
      return {t + Vec3{0.05 * std::sin(4.0 * kPi * u), 0.0, 0.0}, t};
    }
    case 4: {  // push_pull towards the device, twice
      const double a = std::sin(2.0 * kPi * u);
      return {{-0.10 * a * a, 0.0, 0.0}, {}};
    }
    case 5:  // sweep left/right
      return {{0.0, 0.15 * s1, 0.0}, {}};
    case 6:  // draw a circle
      return {{0.06 * (c1 - 1.0), 0.06 * s1, 0.0}, {}};
    case 7: {  // zigzag: sideways drift with vertical triangle wave
      const double phase = std::fmod(6.0 * u, 2.0);
      const double tri = phase < 1.0 ? phase : 2.0 - phase;
      return {{0.0, 0.2 * u, 0.04 * tri}, {}};
    }
    case 8:  // typing: small fast taps
      return {{0.0, 0.0, 0.01 * std::sin(16.0 * kPi * u)}, {}};
    default:  // hand_shake
      return {{0.0, 0.0, 0.04 * std::sin(8.0 * kPi * u)}, {}};
  }
}

}  // namespace detail

/// Template scatterers for `n_classes` activities. Classes beyond the ten base motions
/// reuse a base pattern played at a higher rate.
inline std::vector<std::vector<DynamicPath>> activity_library(std::size_t n_classes, const BodyGeometry& body = {}) {
  constexpr double kStep = 0.025;
  std::vector<std::vector<DynamicPath>> lib(n_classes);
  const auto steps = static_cast<std::size_t>(std::ceil(body.motion_end / kStep));
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t pattern = c % 10;
    const double rate = 1.0 + static_cast<double>(c / 10) * 0.5;
    Trajectory hand, torso;
    for (std::size_t i = 0; i <= steps; ++i) {
      const double t = std::min(static_cast<double>(i) * kStep, body.motion_end);
      const double u = std::fmod(t / body.motion_end * rate, 1.0 + 1e-12);
      const auto d = detail::activity_displacement(pattern, std::min(u, 1.0));
      hand.times.push_back(t);
      hand.points.push_back(body.hand + d.hand);
      torso.times.push_back(t);
      torso.points.push_back(body.torso + d.torso);
    }
    lib[c] = {DynamicPath{1.0, body.hand_rcs, std::move(hand)}, DynamicPath{1.0, body.torso_rcs, std::move(torso)}};
  }
  return lib;
}

struct UserOptions {
  std::size_t n_classes = 10;
  double max_offset = 0.1;
  double min_amplitude_scale = 0.7;
  double max_amplitude_scale = 1.3;
  double min_speed_scale = 0.8;
  double max_speed_scale = 1.2;
  BodyGeometry body;
};

inline GeometryPerturbation draw_perturbation(Rng& rng, double max_offset, double amp_lo, double amp_hi,
                                              double speed_lo, double speed_hi) {
  GeometryPerturbation g;
  // Uniform inside a ball of radius max_offset.
  do {
    g.offset = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
  } while (g.offset.norm() > 1.0);
  g.offset = max_offset * g.offset;
  g.amplitude_scale = uniform(rng, amp_lo, amp_hi);
  g.speed_scale = uniform(rng, speed_lo, speed_hi);
  return g;
}

inline UserProfile make_user_profile(std::uint64_t user_id, const UserOptions& opts = {}) {
  require(opts.n_classes >= 1, "need at least one activity class");
  UserProfile user;
  user.user_id = user_id;
  user.body_scatterers = activity_library(opts.n_classes, opts.body);
  user.motion_end = opts.body.motion_end;
  user.duration = opts.body.duration;
  Rng rng = make_rng(user_id, 0x75736572ULL);
  user.geometry_perturbation = draw_perturbation(rng, opts.max_offset, opts.min_amplitude_scale,
                                                 opts.max_amplitude_scale, opts.min_speed_scale, opts.max_speed_scale);
  return user;
}

struct SceneOptions {
  std::size_t n_subcarriers = 16;
  std::size_t n_tx = 1;
  std::size_t n_rx = 2;
  double carrier_frequency = 5.28e9;
  double bandwidth = 40e6;
  double packet_rate = 20.0;
  double duration = 3.0;
  double snr_db = 20.0;  // relative to the mean static gain
  std::size_t n_env_paths = 2;
  double static_scale = 1.0;
  double rx_distance = 3.0;
  bool phase_error_enabled = true;
  std::uint64_t seed = 7;
};

/// Builds the default room: Tx (the user device) at the origin plane, an Rx array
/// `rx_distance` away, a line-of-sight plus one wall reflection as static paths and
/// slowly wandering far-away scatterers as environment dynamics.
inline SceneConfig make_scene(const SceneOptions& o = {}) {
  SceneConfig s;
  s.carrier_frequency = o.carrier_frequency;
  s.bandwidth = o.bandwidth;
  s.n_subcarriers = o.n_subcarriers;
  s.n_tx_antennas = o.n_tx;
  s.n_rx_antennas = o.n_rx;
  s.duration = o.duration;
  s.packet_rate = o.packet_rate;
  s.phase_error_enabled = o.phase_error_enabled;
  const double half_lambda = 0.5 * kSpeedOfLight / o.carrier_frequency;
  for (std::size_t t = 0; t < o.n_tx; ++t) s.tx_positions.push_back({0.0, 0.0, 1.0 + half_lambda * static_cast<double>(t)});
  for (std::size_t r = 0; r < o.n_rx; ++r)
    s.rx_positions.push_back({o.rx_distance, half_lambda * static_cast<double>(r), 1.0});

  s.static_gain.resize(s.sample_length());
  double mean_abs = 0.0;
  for (std::size_t k = 0; k < o.n_subcarriers; ++k) {
    const double f = s.subcarrier_frequency(k);
    const double lambda = kSpeedOfLight / f;
    for (std::size_t t = 0; t < o.n_tx; ++t) {
      for (std::size_t r = 0; r < o.n_rx; ++r) {
        const Vec3 tx = s.tx_positions[t];
        const Vec3 rx = s.rx_positions[r];
        const double d_los = distance(tx, rx);
        const Vec3 image{tx.x, -4.0 - tx.y, tx.z};  // mirror source for a wall at y = -2
        const double d_ref = distance(image, rx);
        const cplx los = std::polar(lambda / (4.0 * kPi * d_los), -2.0 * kPi * d_los / lambda);
        const cplx ref = std::polar(0.5 * lambda / (4.0 * kPi * d_ref), -2.0 * kPi * d_ref / lambda);
        const cplx g = o.static_scale * (los + ref);
        s.static_gain[s.link_index(k, t, r)] = g;
        mean_abs += std::abs(g);
      }
    }
  }
  mean_abs /= static_cast<double>(s.sample_length());
  s.noise_std = mean_abs * std::pow(10.0, -o.snr_db / 20.0);

  Rng rng = make_rng(o.seed, 0x656e76ULL);
  for (std::size_t p = 0; p < o.n_env_paths; ++p) {
    const double angle = uniform(rng, 0.0, 2.0 * kPi);
    const double radius = uniform(rng, 3.0, 5.0);
    const Vec3 start{radius * std::cos(angle), radius * std::sin(angle), 1.0};
    const double heading = uniform(rng, 0.0, 2.0 * kPi);
    const double speed = uniform(rng, 0.1, 0.4);
    const Vec3 end = start + (speed * o.duration) * Vec3{std::cos(heading), std::sin(heading), 0.0};
    s.env_dynamic_paths.push_back(DynamicPath{1.0, 0.5, Trajectory{{0.0, o.duration}, {start, end}}});
  }
  return s;
}

/// Gain of one (subcarrier frequency, link) at time t. `packet_phase` is the oscillator
/// phase for this packet's Tx chain; it is ignored when phase errors are disabled.
/// Only the noise term consumes `rng`.
inline cplx channel_gain(const SceneConfig& scene, std::span<const DynamicPath> user_paths, Link link, double f,
                         double t, double packet_phase, Rng& rng) {
  require(std::abs(f - scene.carrier_frequency) <= 0.5 * scene.bandwidth * (1.0 + 1e-12),
          "frequency ", f, " outside the scene band");
  require(t >= 0.0 && t <= scene.duration, "time ", t, " outside [0, ", scene.duration, "]");
  require(link.tx < scene.n_tx_antennas && link.rx < scene.n_rx_antennas, "link index out of range");

  // Static gain is tabulated per subcarrier; pick the nearest subcarrier to f.
  const double spacing = scene.bandwidth / static_cast<double>(scene.n_subcarriers);
  const double pos = (f - (scene.carrier_frequency - 0.5 * scene.bandwidth)) / spacing - 0.5;
  const auto k = static_cast<std::size_t>(
      std::clamp(std::lround(pos), 0L, static_cast<long>(scene.n_subcarriers) - 1));

  const Vec3 tx = scene.tx_positions[link.tx];
  const Vec3 rx = scene.rx_positions[link.rx];
  cplx h = scene.static_gain[scene.link_index(k, link.tx, link.rx)];
  for (const auto& p : scene.env_dynamic_paths) h += scattering_gain(f, p.gain, p.rcs, tx, rx, p.trajectory.at(t));
  for (const auto& p : user_paths) h += scattering_gain(f, p.gain, p.rcs, tx, rx, p.trajectory.at(t));
  if (scene.noise_std > 0.0) {
    std::normal_distribution<double> gauss(0.0, scene.noise_std / std::sqrt(2.0));
    const double re = gauss(rng);
    const double im = gauss(rng);
    h += cplx(re, im);
  }
  if (scene.phase_error_enabled) h *= std::polar(1.0, packet_phase);
  return h;
}

inline cplx channel_gain(const SceneConfig& scene, const UserProfile& user, std::size_t activity, Link link,
                         double f, double t, double packet_phase, Rng& rng) {
  const auto paths = user.paths_for(activity);
  return channel_gain(scene, paths, link, f, t, packet_phase, rng);
}

/// Homogeneous Poisson arrivals on [0, T], strictly increasing.
inline std::vector<double> sample_packet_times(double duration, double rate, std::uint64_t seed) {
  require(duration > 0.0, "duration must be positive");
  require(rate >= 0.0, "packet rate must be non-negative");
  std::vector<double> times;
  if (rate == 0.0) return times;
  Rng rng(seed);
  std::exponential_distribution<double> gap(rate);
  double t = 0.0;
  while (true) {
    t += gap(rng);
    if (t > duration) break;
    if (times.empty() || t > times.back()) times.push_back(t);
  }
  return times;
}

struct CsiSequence {
  std::vector<double> timestamps;
  std::vector<std::vector<cplx>> samples;  // one vector of length L_H per timestamp
  std::optional<std::size_t> label;       // 0-based class index

  std::size_t length() const { return timestamps.size(); }

  void validate(double duration, std::size_t sample_length) const {
    require(timestamps.size() >= 2, "a CSI sequence needs at least two samples");
    require(timestamps.size() == samples.size(), "timestamp/sample count mismatch");
    for (std::size_t n = 0; n < timestamps.size(); ++n) {
      require(timestamps[n] >= 0.0 && timestamps[n] <= duration, "timestamp outside [0, T]");
      require(n == 0 || timestamps[n] > timestamps[n - 1], "timestamps must be strictly increasing");
      require(samples[n].size() == sample_length, "CSI sample length mismatch");
    }
  }
};

struct DomainEntry {
  CsiSequence sequence;
  std::size_t label = 0;
};

struct DomainDataset {
  std::uint64_t domain_id = 0;
  std::size_t n_classes = 0;
  std::size_t sample_length = 0;
  std::uint64_t seed = 0;
  std::uint64_t user_id = 0;
  std::uint64_t scene_hash = 0;
  std::vector<DomainEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

inline std::vector<double> one_hot(std::size_t label, std::size_t n_classes) {
  require(label < n_classes, "label ", label, " out of range for ", n_classes, " classes");
  std::vector<double> v(n_classes, 0.0);
  v[label] = 1.0;
  return v;
}

inline std::uint64_t scene_hash(const SceneConfig& s) {
  std::ostringstream oss;
  oss.precision(17);
  oss << s.carrier_frequency << ' ' << s.bandwidth << ' ' << s.n_subcarriers << ' ' << s.n_tx_antennas << ' '
      << s.n_rx_antennas << ' ' << s.noise_std << ' ' << s.phase_error_enabled << ' ' << s.duration << ' '
      << s.packet_rate;
  for (const auto& p : s.tx_positions) oss << ' ' << p.x << ' ' << p.y << ' ' << p.z;
  for (const auto& p : s.rx_positions) oss << ' ' << p.x << ' ' << p.y << ' ' << p.z;
  for (const auto& g : s.static_gain) oss << ' ' << g.real() << ' ' << g.imag();
  for (const auto& p : s.env_dynamic_paths) {
    oss << ' ' << p.gain << ' ' << p.rcs;
    for (std::size_t i = 0; i < p.trajectory.times.size(); ++i)
      oss << ' ' << p.trajectory.times[i] << ' ' << p.trajectory.points[i].x << ' ' << p.trajectory.points[i].y
          << ' ' << p.trajectory.points[i].z;
  }
  return hash_bytes(oss.str());
}

/// Within-user variation between repetitions of the same activity.
struct InstanceJitter {
  double max_offset = 0.01;
  double amplitude_spread = 0.1;
  double speed_spread = 0.05;
};

/// Simulates one recording of `activity`; `seed` fixes packet times, jitter, phases and noise.
inline CsiSequence simulate_sequence(const SceneConfig& scene, const UserProfile& user, std::size_t activity,
                                     std::uint64_t seed, const InstanceJitter& jitter = {}) {
  Rng rng = make_rng(seed, 1);
  auto paths = user.paths_for(activity);
  const GeometryPerturbation g =
      draw_perturbation(rng, jitter.max_offset, 1.0 - jitter.amplitude_spread, 1.0 + jitter.amplitude_spread,
                        1.0 - jitter.speed_spread, 1.0 + jitter.speed_spread);
  for (auto& p : paths) p.trajectory = detail::warp_trajectory(p.trajectory, g, user.motion_end, scene.duration);

  CsiSequence seq;
  seq.label = activity;
  for (std::uint64_t attempt = 0; seq.timestamps.size() < 2; ++attempt) {
    require(attempt < 1000, "packet rate too low to draw two packets");
    seq.timestamps = sample_packet_times(scene.duration, scene.packet_rate, derive_seed(seed, 100 + attempt));
  }
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
  std::vector<double> phases(scene.n_tx_antennas);
  seq.samples.reserve(seq.timestamps.size());
  for (double t : seq.timestamps) {
    for (auto& ph : phases) ph = phase_dist(rng);
    std::vector<cplx> h(scene.sample_length());
    for (std::size_t k = 0; k < scene.n_subcarriers; ++k) {
      const double f = scene.subcarrier_frequency(k);
      for (std::size_t tx = 0; tx < scene.n_tx_antennas; ++tx)
        for (std::size_t rx = 0; rx < scene.n_rx_antennas; ++rx)
          h[scene.link_index(k, tx, rx)] = channel_gain(scene, paths, {tx, rx}, f, t, phases[tx], rng);
    }
    seq.samples.push_back(std::move(h));
  }
  return seq;
}

/// C * n_per_class labelled sequences, ordered class-major. Sequence i uses the
/// stream derive_seed(seed, i), so generation is a pure function of the inputs.
inline DomainDataset generate_domain(const SceneConfig& scene, const UserProfile& user, std::size_t n_per_class,
                                     std::uint64_t seed, const InstanceJitter& jitter = {}) {
  scene.validate();
  DomainDataset ds;
  ds.domain_id = user.user_id;
  ds.n_classes = user.n_classes();
  ds.sample_length = scene.sample_length();
  ds.seed = seed;
  ds.user_id = user.user_id;
  ds.scene_hash = scene_hash(scene);
  ds.entries.reserve(ds.n_classes * n_per_class);
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::uint64_t index = c * n_per_class + i;
      ds.entries.push_back({simulate_sequence(scene, user, c, derive_seed(seed, index), jitter), c});
    }
  }
  return ds;
}

struct VariationScalingPoint {
  double distance = 0;
  double relative_derivative = 0;  // (d/dd |dh/dt|) / |dh/dt|
  double expected = 0;             // -1/d
};

struct VariationProbe {
  double rx_distance = 3.0;
  double speed = 0.5;          // scatterer speed towards the Tx, m/s
  double time_step = 1e-6;     // central difference in t
  double distance_step = 1e-3; // central difference in d
};

/// Sweeps the Tx-scatterer distance of a single path and estimates the relative
/// sensitivity of the CSI variation rate by nested central differences. The scatterer
/// moves towards the Tx, perpendicular to its line to the Rx, so the Rx distance is
/// stationary at the probe instant.
inline std::vector<VariationScalingPoint> verify_variation_scaling(const SceneConfig& scene,
                                                                   std::span<const double> d_values,
                                                                   const VariationProbe& probe = {}) {
  const double f = scene.carrier_frequency;
  const double lambda = kSpeedOfLight / f;
  auto rate = [&](double d) {
    const Vec3 tx{0.0, d, 0.0};
    const Vec3 rx{probe.rx_distance, 0.0, 0.0};
    auto h = [&](double t) { return scattering_gain(f, 1.0, 1.0, tx, rx, Vec3{0.0, probe.speed * t, 0.0}); };
    return std::abs(h(probe.time_step) - h(-probe.time_step)) / (2.0 * probe.time_step);
  };
  std::vector<VariationScalingPoint> out;
  for (double d : d_values) {
    require(d >= 10.0 * lambda, "distance ", d, " m is not in the far field (needs >= 10 wavelengths)");
    require(d >= 1e3 * probe.speed * probe.time_step && d > 10.0 * probe.distance_step,
            "distance ", d, " m is too small for the probe step sizes");
    const double r0 = rate(d);
    const double deriv = (rate(d + probe.distance_step) - rate(d - probe.distance_step)) / (2.0 * probe.distance_step);
    out.push_back({d, deriv / r0, -1.0 / d});
  }
  return out;
}

/// Mean |Δh| of a user path over mean |Δh| of an environment path when both follow the
/// same oscillating velocity profile at Tx distances d_user and d_env (matched Rx distance).
inline double variation_rate_ratio(double frequency, double d_user, double d_env, double rx_distance = 3.0,
                                   double amplitude = 0.01, std::size_t n_steps = 600, double duration = 3.0) {
  require(d_user > 0.0 && d_env > 0.0, "distances must be positive");
  auto mean_delta = [&](double d) {
    const Vec3 tx{0.0, d, 0.0};
    const Vec3 rx{rx_distance, 0.0, 0.0};
    double acc = 0.0;
    cplx prev;
    for (std::size_t n = 0; n <= n_steps; ++n) {
      const double t = duration * static_cast<double>(n) / static_cast<double>(n_steps);
      const Vec3 s{0.0, amplitude * std::sin(2.0 * kPi * t / duration * 3.0), 0.0};
      const cplx h = scattering_gain(frequency, 1.0, 1.0, tx, rx, s);
      if (n > 0) acc += std::abs(h - prev);
      prev = h;
    }
    return acc / static_cast<double>(n_steps);
  };
  return mean_delta(d_user) / mean_delta(d_env);
}

}  // namespace edgecl
