#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "edgecl/model.hpp"
#include "edgecl/selfcheck.hpp"

using namespace edgecl;

namespace {

PreprocessedSequence random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  PreprocessedSequence X(rows, cols);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
  return X;
}

}  // namespace

TEST(InitParams, DeterministicAndBounded) {
  const ModelConfig c;
  const auto a = init_params(c, 4), b = init_params(c, 4);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), init_params(c, 5).values());
  const auto& l = a.layout();
  auto check = [&](const DenseSlot& s) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    EXPECT_LE(a.view().weight(s).cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(a.view().bias(s).cwiseAbs().maxCoeff(), 0.0);
  };
  check(l.fc1);
  check(l.fc2);
  check(l.predictor);
  for (const auto& b : l.blocks) {
    check(b.ff1);
    check(b.ff2);
  }
}

TEST(InitParams, UniformVarianceOfLargeBlock) {
  ModelConfig c;
  c.encoder_hidden = 128;
  c.input_width = 64;
  const auto p = init_params(c, 9);
  const auto W = p.view().weight(p.layout().fc1);
  ASSERT_EQ(W.rows(), 128);
  ASSERT_EQ(W.cols(), 64);
  const double range = std::sqrt(6.0 / (128.0 + 64.0));
  const double mean = W.mean();
  const double var = (W.array() - mean).square().mean();
  EXPECT_NEAR(var, range * range / 3.0, 0.2 * range * range / 3.0);
}

TEST(Layout, SizeIsSumOfComponents) {
  const ModelConfig c;
  const std::size_t d = c.head_width();
  const std::size_t expect = (128 * 64 + 128) + (64 * 128 + 64) + c.blocks * (c.heads * 3 * d * d + 2 * (64 * 64 + 64)) +
                             (10 * 64 + 10);
  EXPECT_EQ(ParamLayout::build(c).size, expect);
  ModelParams p(c);
  p.values()[p.layout().predictor.bias] = 3.5;
  EXPECT_EQ(p.view().bias(p.layout().predictor)(0), 3.5);
}

TEST(Config, RejectsIndivisibleHeads) {
  ModelConfig c;
  c.heads = 7;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Forward, ZeroPredictorGivesUniform) {
  const ModelConfig c;
  auto p = init_params(c, 1);
  const auto& pr = p.layout().predictor;
  std::fill(p.values().begin() + static_cast<std::ptrdiff_t>(pr.weight),
            p.values().begin() + static_cast<std::ptrdiff_t>(pr.bias + pr.out), 0.0);
  const auto out = forward(p, random_input(7, 64, 2), Mode::eval);
  for (double v : out.probabilities) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(Forward, ProbabilitiesAreADistribution) {
  const ModelConfig c;
  const auto p = init_params(c, 2);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto out = forward(p, random_input(5 + i, 64, i), Mode::train, &rng);
    double s = 0.0;
    for (double v : out.probabilities) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, AttentionRowsSumToOne) {
  const ModelConfig c;
  const auto p = init_params(c, 3);
  ForwardCache cache;
  forward(p, random_input(3, 64, 4), Mode::eval, nullptr, &cache);
  for (std::size_t b = 0; b < c.blocks; ++b)
    for (std::size_t a = 0; a < c.heads; ++a) {
      const Matrix& A = cache.attention(b, a);
      ASSERT_EQ(A.rows(), 3);
      for (Eigen::Index r = 0; r < 3; ++r) EXPECT_NEAR(A.row(r).sum(), 1.0, 1e-14);
    }
}

TEST(Forward, EvalModeIsDeterministic) {
  const auto p = init_params(ModelConfig{}, 5);
  const auto X = random_input(12, 64, 6);
  const auto a = forward(p, X, Mode::eval), b = forward(p, X, Mode::eval);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Forward, TrainModeDropoutChangesOutput) {
  const auto p = init_params(ModelConfig{}, 5);
  const auto X = random_input(12, 64, 6);
  Rng rng(1);
  EXPECT_NE(forward(p, X, Mode::train, &rng).probabilities, forward(p, X, Mode::eval).probabilities);
  EXPECT_THROW(forward(p, X, Mode::train, nullptr), InvalidArgument);
}

TEST(Forward, RejectsWidthMismatch) {
  EXPECT_THROW(forward(init_params(ModelConfig{}, 1), random_input(3, 63, 1), Mode::eval), InvalidArgument);
}

TEST(Forward, OnlyFirstRowReachesPredictor) {
  const auto p = init_params(ModelConfig{}, 6);
  const Matrix enc = encode_sequence(p, random_input(9, 64, 7), Mode::eval, nullptr);
  Matrix perm = enc;
  for (Eigen::Index r = 1; r < perm.rows(); ++r) perm.row(r) = enc.row(perm.rows() - r);
  EXPECT_EQ(predictor_logits(p, enc), predictor_logits(p, perm));
}

TEST(Downscaled, EtaOneEqualsForward) {
  const auto p = init_params(ModelConfig{}, 7);
  const auto X = random_input(6, 64, 8);
  EXPECT_EQ(forward_downscaled(p, X, 1.0), forward(p, X, Mode::eval).probabilities);
}

TEST(Downscaled, HugeEtaIsNearUniform) {
  const auto p = init_params(ModelConfig{}, 7);
  for (double v : forward_downscaled(p, random_input(6, 64, 8), 1e6)) EXPECT_NEAR(v, 0.1, 1e-3);
}

TEST(Downscaled, RejectsEtaBelowOne) {
  EXPECT_THROW(forward_downscaled(init_params(ModelConfig{}, 1), random_input(3, 64, 1), 0.5), InvalidArgument);
}

TEST(Downscaled, EntropyNonDecreasing) {
  const auto p = init_params(ModelConfig{}, 11);
  for (int i = 0; i < 20; ++i) {
    const auto X = random_input(4 + i, 64, 100 + i);
    double prev = 0.0;
    for (double eta : {1.0, 2.0, 4.0, 8.0}) {
      const double h = selfcheck::entropy(forward_downscaled(p, X, eta));
      EXPECT_GE(h, prev - 1e-12);
      prev = h;
    }
  }
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> y(10);
    for (auto& v : y) v = uniform(rng, -20, 20);
    auto z = y;
    const double k = uniform(rng, -500, 500);
    for (auto& v : z) v += k;
    const auto a = softmax(y), b = softmax(z);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-9);
  }
}

TEST(ExtractFeature, ConsistentWithPredictor) {
  const auto p = init_params(ModelConfig{}, 8);
  const auto X = random_input(10, 64, 9);
  const Vector f = extract_feature(p, X);
  EXPECT_EQ(f.size(), 64);
  EXPECT_EQ(f, extract_feature(p, X));
  const Vector logits = p.view().weight(p.layout().predictor) * f + p.view().bias(p.layout().predictor);
  EXPECT_EQ(logits, forward(p, X, Mode::eval).logits);
}

TEST(Backward, MatchesFiniteDifferencesOnTinyModels) {
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_LT(selfcheck::gradient_check(77 + s).max_relative_error, 1e-4);
}

TEST(Backward, MatchesFiniteDifferencesOnLongerSequences) {
  EXPECT_LT(selfcheck::gradient_check(5, 7).max_relative_error, 1e-4);
}

TEST(Norm, StandardizesEachRow) {
  ModelConfig c = selfcheck::tiny_config();
  const auto p = init_params(c, 2);
  const Matrix h = detail::norm_dense_forward(random_input(5, c.input_width, 3), p, p.layout().fc1, nullptr);
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    EXPECT_NEAR(h.row(r).mean(), 0.0, 1e-12);
    const double var = (h.row(r).array() - h.row(r).mean()).square().mean();
    if (var > 0) EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  const auto dir = std::filesystem::temp_directory_path() / "edgecl-test-ckpt";
  std::filesystem::remove_all(dir);
  ModelConfig c;
  c.dropout = 0.25;
  const auto p = init_params(c, 3);
  save_checkpoint(dir, p);
  const auto q = load_checkpoint(dir);
  EXPECT_EQ(q.config(), c);
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(q.values()[i], static_cast<double>(static_cast<float>(p.values()[i])));
  std::filesystem::remove_all(dir);
}

TEST(Complexity, AttentionIsQuadraticInSequenceLength) {
  const ModelConfig c;
  const auto p = init_params(c, 1);
  const BlockSlots& slots = p.layout().blocks[0];
  auto time_at = [&](std::size_t n) {
    const Matrix z = random_input(n, c.width, n);
    double best = 1e300, sink = 0.0;
    for (int rep = 0; rep < 7; ++rep) {
      const int inner = static_cast<int>(std::max<std::size_t>(1, 65536 / (n * n)));
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < inner; ++i) {
        sink += detail::multi_head_attention(p, slots, z, nullptr)(0, 0);
      }
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / inner);
    }
    EXPECT_TRUE(std::isfinite(sink));
    return best;
  };
  // Below N = 256 the linear projection cost keeps the doubling ratio under 4.
  const double t256 = time_at(256), t512 = time_at(512), t1024 = time_at(1024);
  std::printf("attention time ratios: 512/256 = %.2f, 1024/512 = %.2f\n", t512 / t256, t1024 / t512);
  EXPECT_GT(t512 / t256, 3.5);
  EXPECT_LT(t512 / t256, 4.5);
  EXPECT_GT(t1024 / t512, 3.5);
  EXPECT_LT(t1024 / t512, 4.5);
}
