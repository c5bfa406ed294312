#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "edgecl/csi_sim.hpp"
#include "edgecl/dataset_io.hpp"
#include "edgecl/model.hpp"
#include "edgecl/preprocess.hpp"

using namespace edgecl;

namespace {

SceneConfig quiet_scene() {
  SceneOptions o;
  o.n_env_paths = 0;
  o.phase_error_enabled = false;
  SceneConfig s = make_scene(o);
  s.noise_std = 0.0;
  return s;
}

}  // namespace

TEST(ChannelGain, StaticOnlyIsConstantInTime) {
  const SceneConfig s = quiet_scene();
  Rng rng(1);
  const double f = s.subcarrier_frequency(3);
  const cplx h0 = channel_gain(s, {}, {0, 1}, f, 0.0, 0.0, rng);
  for (double t : {0.5, 1.7, 3.0}) EXPECT_EQ(channel_gain(s, {}, {0, 1}, f, t, 1.3, rng), h0);
  EXPECT_EQ(h0, s.static_gain[s.link_index(3, 0, 1)]);
}

TEST(ChannelGain, SingleScatteringPathByHand) {
  const double f = 5.28e9;
  const double lambda = kSpeedOfLight / f;
  // Scatterer 2 m from Tx and 3 m from Rx on a line.
  const cplx g = scattering_gain(f, 1.0, 1.0, {0, 0, 0}, {5, 0, 0}, {2, 0, 0});
  const double amp = lambda / (std::pow(4.0 * kPi, 1.5) * 6.0);
  EXPECT_NEAR(std::abs(g), amp, 1e-15);
  const double expected_phase = std::remainder(-2.0 * kPi * 5.0 / lambda, 2.0 * kPi);
  EXPECT_NEAR(std::remainder(std::arg(g) - expected_phase, 2.0 * kPi), 0.0, 1e-6);
}

TEST(ChannelGain, PhaseErrorKeepsModulus) {
  SceneConfig on = make_scene();
  SceneConfig off = on;
  off.phase_error_enabled = false;
  const UserProfile u = make_user_profile(2);
  const auto paths = u.paths_for(4);
  for (double t : {0.1, 1.0, 2.5}) {
    Rng r1(9), r2(9);
    const double f = on.subcarrier_frequency(5);
    EXPECT_NEAR(std::abs(channel_gain(on, paths, {0, 0}, f, t, 2.2, r1)),
                std::abs(channel_gain(off, paths, {0, 0}, f, t, 2.2, r2)), 1e-15);
  }
}

TEST(ChannelGain, RejectsOutOfBandAndOutOfRange) {
  const SceneConfig s = make_scene();
  Rng rng(1);
  EXPECT_THROW(channel_gain(s, {}, {0, 0}, s.carrier_frequency + s.bandwidth, 1.0, 0.0, rng), InvalidArgument);
  EXPECT_THROW(channel_gain(s, {}, {0, 0}, s.carrier_frequency, 3.5, 0.0, rng), InvalidArgument);
  EXPECT_THROW(channel_gain(s, {}, {0, 0}, s.carrier_frequency, -0.1, 0.0, rng), InvalidArgument);
}

TEST(PacketTimes, ZeroRateIsEmpty) { EXPECT_TRUE(sample_packet_times(3.0, 0.0, 1).empty()); }

TEST(PacketTimes, PoissonCountAndOrdering) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto t = sample_packet_times(3.0, 100.0, seed);
    total += static_cast<double>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      ASSERT_GE(t[i], 0.0);
      ASSERT_LE(t[i], 3.0);
      if (i) ASSERT_GT(t[i], t[i - 1]);
    }
  }
  EXPECT_NEAR(total / 1000.0, 300.0, 10.0);
}

TEST(PacketTimes, Deterministic) { EXPECT_EQ(sample_packet_times(3.0, 20.0, 5), sample_packet_times(3.0, 20.0, 5)); }

TEST(GenerateDomain, Counts) {
  const SceneConfig s = make_scene();
  const UserProfile u = make_user_profile(1);
  EXPECT_TRUE(generate_domain(s, u, 0, 1).empty());
  const DomainDataset ds = generate_domain(s, u, 30, 1);
  ASSERT_EQ(ds.size(), 300u);
  std::vector<std::size_t> per(10, 0);
  for (const auto& e : ds.entries) {
    ++per[e.label];
    e.sequence.validate(s.duration, s.sample_length());
    EXPECT_EQ(e.sequence.label, e.label);
  }
  for (auto n : per) EXPECT_EQ(n, 30u);
}

TEST(GenerateDomain, DeterministicGivenSeed) {
  const SceneConfig s = make_scene();
  const UserProfile u = make_user_profile(4);
  const auto a = generate_domain(s, u, 2, 11);
  const auto b = generate_domain(s, u, 2, 11);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries[i].sequence.timestamps, b.entries[i].sequence.timestamps);
    EXPECT_EQ(a.entries[i].sequence.samples, b.entries[i].sequence.samples);
  }
}

TEST(GenerateDomain, UsersAreDistinctDomains) {
  const SceneConfig s = make_scene();
  const AntennaLayout layout = AntennaLayout::of(s);
  ModelConfig mc;
  mc.input_width = preprocessed_width(layout);
  const ModelParams enc = init_params(mc, 3);
  auto class_mean = [&](std::uint64_t user, std::size_t cls) {
    const auto ds = generate_domain(s, make_user_profile(user), 8, 21);
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(mc.width));
    for (const auto& e : ds.entries)
      if (e.label == cls) acc += extract_feature(enc, preprocess_sequence(e.sequence, layout, s.duration));
    return Vector(acc / 8.0);
  };
  for (std::size_t cls : {0u, 5u}) EXPECT_GT((class_mean(1, cls) - class_mean(2, cls)).norm(), 1e-3);
}

TEST(GenerateDomain, MotionHoldsDuringRest) {
  const UserProfile u = make_user_profile(1);
  for (std::size_t c = 0; c < u.n_classes(); ++c)
    for (const auto& p : u.paths_for(c)) {
      const Vec3 a = p.trajectory.at(2.0), b = p.trajectory.at(2.7), e = p.trajectory.at(3.0);
      EXPECT_EQ(a, b);
      EXPECT_EQ(a, e);
    }
}

TEST(Users, PerturbationDeterministicAndBounded) {
  const auto a = make_user_profile(17), b = make_user_profile(17);
  EXPECT_EQ(a.geometry_perturbation.offset, b.geometry_perturbation.offset);
  EXPECT_LE(a.geometry_perturbation.offset.norm(), 0.1 + 1e-12);
  EXPECT_GE(a.geometry_perturbation.amplitude_scale, 0.7);
  EXPECT_LE(a.geometry_perturbation.amplitude_scale, 1.3);
  EXPECT_GE(a.geometry_perturbation.speed_scale, 0.8);
  EXPECT_LE(a.geometry_perturbation.speed_scale, 1.2);
}

TEST(Scene, PhaseDrawSharedAcrossRx) {
  // With no noise and only the static term, the per-packet ratio h_rx1 / h_rx0 equals the
  // static ratio exactly only if both chains saw the same phase.
  SceneOptions o;
  o.n_env_paths = 0;
  SceneConfig s = make_scene(o);
  s.noise_std = 0.0;
  UserProfile u = make_user_profile(1);
  for (auto& c : u.body_scatterers) c.clear();
  const CsiSequence seq = simulate_sequence(s, u, 0, 3);
  const cplx ref = s.static_gain[s.link_index(0, 0, 1)] / s.static_gain[s.link_index(0, 0, 0)];
  for (const auto& h : seq.samples)
    EXPECT_NEAR(std::abs(h[s.link_index(0, 0, 1)] / h[s.link_index(0, 0, 0)] - ref), 0.0, 1e-12);
}

TEST(Scene, ValidateRejectsSingleRx) {
  SceneOptions o;
  o.n_rx = 1;
  EXPECT_THROW(make_scene(o).validate(), InvalidArgument);
}

TEST(VariationScaling, InverseDistanceLaw) {
  const SceneConfig s = make_scene();
  const std::vector<double> ds = {5.0, 10.0, 20.0};
  const auto pts = verify_variation_scaling(s, ds);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_NEAR(pts[0].relative_derivative, -0.2, 0.02);
  EXPECT_NEAR(pts[1].relative_derivative, -0.1, 0.01);
  EXPECT_NEAR(pts[1].relative_derivative / pts[2].relative_derivative, 2.0, 0.2);
}

TEST(VariationScaling, NearFieldIsFlagged) {
  const std::vector<double> ds = {0.1};
  EXPECT_THROW(verify_variation_scaling(make_scene(), ds), InvalidArgument);
}

TEST(VariationScaling, UserEnvironmentRatio) {
  const double f = 5.28e9;
  for (auto [du, de] : std::vector<std::pair<double, double>>{{0.5, 2.0}, {1.0, 4.0}, {3.0, 1.5}})
    EXPECT_NEAR(variation_rate_ratio(f, du, de), de / du, 0.15 * de / du);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "edgecl-test-ds";
  std::filesystem::remove_all(dir);
  const auto ds = generate_domain(make_scene(), make_user_profile(3), 2, 4);
  write_dataset(dir, ds);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.n_classes, ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.entries[i].label, ds.entries[i].label);
    EXPECT_EQ(back.entries[i].sequence.timestamps.size(), ds.entries[i].sequence.timestamps.size());
  }
  std::filesystem::remove_all(dir);
}
