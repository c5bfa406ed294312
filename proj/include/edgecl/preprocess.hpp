#pragma once

// Raw CSI sequence -> real matrix X (N x L_P) consumed by the model.
// Row n is [temporal embedding (L_T) | |x| (L_x) | cos(arg x) (L_x) | sin(arg x) (L_x)],
// where x are normalized conjugate products against the first Rx chain.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "edgecl/common.hpp"
#include "edgecl/csi_sim.hpp"

namespace edgecl {

using PreprocessedSequence = Eigen::MatrixXd;

inline constexpr std::size_t kDefaultTemporalLength = 16;

struct AntennaLayout {
  std::size_t n_subcarriers = 16;
  std::size_t n_tx = 1;
  std::size_t n_rx = 2;

  static AntennaLayout of(const SceneConfig& s) { return {s.n_subcarriers, s.n_tx_antennas, s.n_rx_antennas}; }

  std::size_t sample_length() const { return n_subcarriers * n_tx * n_rx; }
  std::size_t conj_length() const { return n_subcarriers * n_tx * (n_rx - 1); }
  std::size_t index(std::size_t sc, std::size_t tx, std::size_t rx) const { return (sc * n_tx + tx) * n_rx + rx; }
  std::size_t conj_index(std::size_t sc, std::size_t tx, std::size_t r) const {
    return (sc * n_tx + tx) * (n_rx - 1) + r;
  }
};

inline std::size_t preprocessed_width(const AntennaLayout& layout, std::size_t temporal_length = kDefaultTemporalLength) {
  return temporal_length + 3 * layout.conj_length();
}

/// Element j (1-based) is sin(t / T^(j/L_T)) for even j and cos(t / T^((j-1)/L_T)) for odd j.
inline std::vector<double> temporal_embed(double t, double duration, std::size_t temporal_length) {
  require(temporal_length >= 2 && temporal_length % 2 == 0, "temporal length must be even and >= 2");
  require(duration > 0.0, "duration must be positive");
  require(t >= 0.0 && t <= duration, "time ", t, " outside [0, ", duration, "]");
  std::vector<double> tau(temporal_length);
  const double L = static_cast<double>(temporal_length);
  for (std::size_t j = 1; j <= temporal_length; ++j) {
    const double jd = static_cast<double>(j);
    tau[j - 1] = (j % 2 == 0) ? std::sin(t / std::pow(duration, jd / L)) : std::cos(t / std::pow(duration, (jd - 1.0) / L));
  }
  return tau;
}

/// h_{r+1} * conj(h_1) for every (subcarrier, tx) and r = 1..n_rx-1.
inline std::vector<cplx> conjugate_multiply(std::span<const cplx> h, const AntennaLayout& layout) {
  require(layout.n_rx >= 2, "conjugate multiplication needs at least two Rx antennas");
  require(h.size() == layout.sample_length(), "sample length ", h.size(), " does not match layout ",
          layout.sample_length());
  std::vector<cplx> out(layout.conj_length());
  for (std::size_t sc = 0; sc < layout.n_subcarriers; ++sc) {
    for (std::size_t tx = 0; tx < layout.n_tx; ++tx) {
      const cplx ref = std::conj(h[layout.index(sc, tx, 0)]);
      for (std::size_t r = 1; r < layout.n_rx; ++r) out[layout.conj_index(sc, tx, r - 1)] = h[layout.index(sc, tx, r)] * ref;
    }
  }
  return out;
}

/// Subtracts the complex mean, then divides by the largest remaining modulus.
/// A constant series has nothing left after detrending and maps to zeros.
inline std::vector<cplx> normalize(std::span<const cplx> series) {
  require(series.size() >= 2, "normalization needs at least two samples");
  cplx mean = 0.0;
  for (const cplx& v : series) mean += v;
  mean /= static_cast<double>(series.size());
  std::vector<cplx> out(series.begin(), series.end());
  double peak = 0.0;
  for (auto& v : out) {
    v -= mean;
    peak = std::max(peak, std::abs(v));
  }
  if (!(peak > 0.0) || !std::isfinite(peak)) {
    std::fill(out.begin(), out.end(), cplx(0.0));
    return out;
  }
  for (auto& v : out) v /= peak;
  return out;
}

/// (|x|, cos arg x, sin arg x); zero maps to (0, 1, 0).
inline std::array<double, 3> complex_to_real(cplx x) {
  const double m = std::abs(x);
  if (m == 0.0) return {0.0, 1.0, 0.0};
  return {m, x.real() / m, x.imag() / m};
}

inline PreprocessedSequence preprocess_sequence(const CsiSequence& seq, const AntennaLayout& layout, double duration,
                                                std::size_t temporal_length = kDefaultTemporalLength) {
  seq.validate(duration, layout.sample_length());
  const std::size_t N = seq.length();
  const std::size_t Lx = layout.conj_length();
  PreprocessedSequence X(N, preprocessed_width(layout, temporal_length));

  std::vector<std::vector<cplx>> channels(Lx, std::vector<cplx>(N));
  for (std::size_t n = 0; n < N; ++n) {
    const auto tau = temporal_embed(seq.timestamps[n], duration, temporal_length);
    for (std::size_t j = 0; j < temporal_length; ++j) X(n, j) = tau[j];
    const auto x = conjugate_multiply(seq.samples[n], layout);
    for (std::size_t c = 0; c < Lx; ++c) channels[c][n] = x[c];
  }
  for (std::size_t c = 0; c < Lx; ++c) {
    const auto normed = normalize(channels[c]);
    for (std::size_t n = 0; n < N; ++n) {
      const auto r = complex_to_real(normed[n]);
      X(n, temporal_length + c) = r[0];
      X(n, temporal_length + Lx + c) = r[1];
      X(n, temporal_length + 2 * Lx + c) = r[2];
    }
  }
  return X;
}

inline std::vector<PreprocessedSequence> preprocess_dataset(const DomainDataset& ds, const AntennaLayout& layout,
                                                            double duration,
                                                            std::size_t temporal_length = kDefaultTemporalLength) {
  std::vector<PreprocessedSequence> out;
  out.reserve(ds.entries.size());
  for (const auto& e : ds.entries) out.push_back(preprocess_sequence(e.sequence, layout, duration, temporal_length));
  return out;
}

}  // namespace edgecl
