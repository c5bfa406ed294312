#pragma once

// Transformer-based CSI sequence discriminator.
//
//   X (N x L_P) -> FC(L_P -> H) -> FC(H -> L)            MLP encoder, applied per row
//              -> n_blocks x [Z += MHSA(Z); Z += FF(Z)]  transformer encoder
//              -> row 0 -> linear (L -> C) -> softmax     probability predictor
//
// FC(x) = Norm(ReLU(W x + b)); Norm standardizes each row over its features with no
// affine parameters. MHSA splits the L columns into A heads of width L/A, each with
// its own (L/A x L/A) query/key/value matrices. FF is two FC layers of width L.
//
// All parameters live in one flat vector; ParamLayout records where each tensor sits.
// `backward` is an exact reverse-mode pass over the activations cached by `forward`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "edgecl/common.hpp"
#include "edgecl/dataset_io.hpp"

namespace edgecl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstVectorMap = Eigen::Map<const Vector>;
using VectorMap = Eigen::Map<Vector>;
// Parameter-shaped buffers are 64-byte aligned so vectorized kernels over slot maps
// see the same alignment, and hence the same summation order, at every address.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

inline constexpr double kNormEpsilon = 1e-5;

struct ModelConfig {
  std::size_t input_width = 64;      // L_P
  std::size_t encoder_hidden = 128;  // first MLP encoder layer
  std::size_t width = 64;            // L
  std::size_t heads = 8;             // A
  std::size_t blocks = 2;
  std::size_t classes = 10;  // C
  double dropout = 0.1;

  std::size_t head_width() const { return width / heads; }

  void validate() const {
    require(input_width >= 1 && encoder_hidden >= 1 && width >= 1 && classes >= 1, "model widths must be >= 1");
    require(heads >= 1 && width % heads == 0, "width ", width, " must be divisible by heads ", heads);
    require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseSlot {
  std::size_t weight = 0;  // offset of the (out x in) row-major matrix
  std::size_t bias = 0;
  std::size_t out = 0;
  std::size_t in = 0;
};

struct HeadSlot {
  std::size_t query = 0;
  std::size_t key = 0;
  std::size_t value = 0;
};

struct BlockSlots {
  std::vector<HeadSlot> heads;
  DenseSlot ff1;
  DenseSlot ff2;
};

struct ParamLayout {
  DenseSlot fc1;
  DenseSlot fc2;
  std::vector<BlockSlots> blocks;
  DenseSlot predictor;
  std::size_t size = 0;

  static ParamLayout build(const ModelConfig& c) {
    c.validate();
    ParamLayout l;
    std::size_t at = 0;
    auto dense = [&](std::size_t out, std::size_t in) {
      DenseSlot s{at, at + out * in, out, in};
      at += out * in + out;
      return s;
    };
    l.fc1 = dense(c.encoder_hidden, c.input_width);
    l.fc2 = dense(c.width, c.encoder_hidden);
    const std::size_t d = c.head_width();
    for (std::size_t b = 0; b < c.blocks; ++b) {
      BlockSlots bs;
      for (std::size_t a = 0; a < c.heads; ++a) {
        bs.heads.push_back({at, at + d * d, at + 2 * d * d});
        at += 3 * d * d;
      }
      bs.ff1 = dense(c.width, c.width);
      bs.ff2 = dense(c.width, c.width);
      l.blocks.push_back(std::move(bs));
    }
    l.predictor = dense(c.classes, c.width);
    l.size = at;
    return l;
  }
};

/// Non-owning view of a parameter vector together with its structure.
struct ParamView {
  const ModelConfig* config = nullptr;
  const ParamLayout* layout = nullptr;
  std::span<const double> theta;

  ConstMatrixMap matrix(std::size_t offset, std::size_t rows, std::size_t cols) const {
    return ConstMatrixMap(theta.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap weight(const DenseSlot& s) const { return matrix(s.weight, s.out, s.in); }
  ConstVectorMap bias(const DenseSlot& s) const {
    return ConstVectorMap(theta.data() + s.bias, static_cast<Eigen::Index>(s.out));
  }
  ConstMatrixMap head(std::size_t offset) const { return matrix(offset, config->head_width(), config->head_width()); }
};

/// Mutable structured view over a gradient (or parameter) buffer with the same layout.
struct GradView {
  const ModelConfig* config = nullptr;
  const ParamLayout* layout = nullptr;
  std::span<double> values;

  MatrixMap matrix(std::size_t offset, std::size_t rows, std::size_t cols) const {
    return MatrixMap(values.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  MatrixMap weight(const DenseSlot& s) const { return matrix(s.weight, s.out, s.in); }
  VectorMap bias(const DenseSlot& s) const { return VectorMap(values.data() + s.bias, static_cast<Eigen::Index>(s.out)); }
  MatrixMap head(std::size_t offset) const { return matrix(offset, config->head_width(), config->head_width()); }
};

/// theta in R^V with its structured layout; flat and structured views share storage.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelConfig& config)
      : config_(config), layout_(ParamLayout::build(config)), theta_(layout_.size, 0.0) {}

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return theta_.size(); }

  ParamVector& values() { return theta_; }
  const ParamVector& values() const { return theta_; }

  ParamView view() const { return {&config_, &layout_, theta_}; }
  ParamView view(std::span<const double> theta) const {
    require(theta.size() == theta_.size(), "parameter vector length mismatch");
    return {&config_, &layout_, theta};
  }
  GradView structured() { return {&config_, &layout_, theta_}; }
  GradView structured(std::span<double> buffer) const {
    require(buffer.size() == theta_.size(), "gradient buffer length mismatch");
    return {&config_, &layout_, buffer};
  }

  operator ParamView() const { return view(); }  // NOLINT(google-explicit-constructor)

 private:
  ModelConfig config_;
  ParamLayout layout_;
  ParamVector theta_;
};

/// Xavier-uniform weights, zero biases.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  Rng rng = make_rng(seed, 0x696e6974ULL);
  auto& theta = params.values();
  auto fill = [&](std::size_t offset, std::size_t fan_out, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) theta[offset + i] = dist(rng);
  };
  const auto& l = params.layout();
  auto dense = [&](const DenseSlot& s) { fill(s.weight, s.out, s.in); };
  dense(l.fc1);
  dense(l.fc2);
  const std::size_t d = config.head_width();
  for (const auto& b : l.blocks) {
    for (const auto& h : b.heads) {
      fill(h.query, d, d);
      fill(h.key, d, d);
      fill(h.value, d, d);
    }
    dense(b.ff1);
    dense(b.ff2);
  }
  dense(l.predictor);
  return params;
}

enum class Mode { train, eval };

/// softmax(logits / eta) with max subtraction.
inline std::vector<double> softmax(std::span<const double> logits, double eta = 1.0) {
  require(!logits.empty(), "softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / eta);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

namespace detail {

struct NormDenseCache {
  Matrix input;
  Matrix pre;  // W x + b, before ReLU
  Matrix out;  // normalized output
  Vector inv_std;
};

inline Matrix norm_dense_forward(const Matrix& in, const ParamView& p, const DenseSlot& s, NormDenseCache* cache) {
  Matrix pre = in * p.weight(s).transpose();
  pre.rowwise() += p.bias(s).transpose();
  Matrix out = pre.cwiseMax(0.0);
  Vector inv_std(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double mean = row.mean();
    row.array() -= mean;
    const double var = row.squaredNorm() / static_cast<double>(row.size());
    inv_std(i) = 1.0 / std::sqrt(var + kNormEpsilon);
    row *= inv_std(i);
  }
  if (cache) {
    cache->input = in;
    cache->pre = std::move(pre);
    cache->out = out;
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

// Returns d(input); accumulates weight/bias gradients.
inline Matrix norm_dense_backward(const Matrix& dout, const NormDenseCache& c, const ParamView& p, const GradView& g,
                                  const DenseSlot& s) {
  const double width = static_cast<double>(dout.cols());
  Matrix dpre(dout.rows(), dout.cols());
  for (Eigen::Index i = 0; i < dout.rows(); ++i) {
    const auto dy = dout.row(i);
    const auto y = c.out.row(i);
    const double mean_dy = dy.sum() / width;
    const double mean_dyy = dy.dot(y) / width;
    dpre.row(i) = c.inv_std(i) * (dy.array() - mean_dy - y.array() * mean_dyy).matrix();
  }
  dpre = (c.pre.array() > 0.0).select(dpre, 0.0);
  g.weight(s).noalias() += dpre.transpose() * c.input;
  g.bias(s) += dpre.colwise().sum().transpose();
  return dpre * p.weight(s);
}

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : 0.0;
  return mask;
}

struct HeadCache {
  Matrix q, k, v, attn;
};

struct BlockCache {
  Matrix input;
  std::vector<HeadCache> heads;
  Matrix attn_mask;  // empty when dropout is inactive
  NormDenseCache ff1, ff2;
  Matrix ff_mask;
};

// exp runs over the whole contiguous buffer so it vectorizes.
inline void row_softmax_inplace(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i).array() -= s.row(i).maxCoeff();
  Eigen::Map<Eigen::ArrayXd> flat(s.data(), s.size());
  flat = flat.exp();
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) /= s.row(i).sum();
}

inline constexpr Eigen::Index kAttentionRowBlock = 32;

/// MHSA(z): per head a, softmax(z_a W_Q (z_a W_K)^T / sqrt(L/A)) z_a W_V, concatenated.
inline Matrix multi_head_attention(const ParamView& p, const BlockSlots& slots, const Matrix& z, BlockCache* bc) {
  const auto d = static_cast<Eigen::Index>(p.config->head_width());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix mhsa(z.rows(), z.cols());
  for (std::size_t a = 0; a < slots.heads.size(); ++a) {
    const auto za = z.middleCols(static_cast<Eigen::Index>(a) * d, d);
    Matrix q = za * p.head(slots.heads[a].query);
    Matrix k = za * p.head(slots.heads[a].key);
    Matrix v = za * p.head(slots.heads[a].value);
    if (bc) {
      Matrix attn = (q * k.transpose()) * scale;
      row_softmax_inplace(attn);
      mhsa.middleCols(static_cast<Eigen::Index>(a) * d, d).noalias() = attn * v;
      bc->heads[a] = {std::move(q), std::move(k), std::move(v), std::move(attn)};
      continue;
    }
    // Without a cache, score rows are formed a block at a time so the working set stays small.
    const Matrix kt = k.transpose() * scale;
    Matrix s;
    for (Eigen::Index r0 = 0; r0 < z.rows(); r0 += kAttentionRowBlock) {
      const Eigen::Index rows = std::min(kAttentionRowBlock, z.rows() - r0);
      s.noalias() = q.middleRows(r0, rows) * kt;
      row_softmax_inplace(s);
      mhsa.block(r0, static_cast<Eigen::Index>(a) * d, rows, d).noalias() = s * v;
    }
  }
  return mhsa;
}

}  // namespace detail

/// Activations kept by a forward pass for the backward pass.
struct ForwardCache {
  detail::NormDenseCache fc1, fc2;
  Matrix encoder_mask;
  std::vector<detail::BlockCache> blocks;
  Matrix encoded;  // final sequence entering the predictor
  Vector logits;
  std::vector<double> probabilities;
  double eta = 1.0;

  /// Attention weights of head `a` in block `b` (rows sum to one).
  const Matrix& attention(std::size_t b, std::size_t a) const { return blocks.at(b).heads.at(a).attn; }
};

/// Runs the MLP and transformer encoders; returns the N x L sequence before the predictor.
inline Matrix encode_sequence(const ParamView& p, const Matrix& X, Mode mode, Rng* rng, ForwardCache* cache = nullptr) {
  const ModelConfig& c = *p.config;
  const ParamLayout& l = *p.layout;
  require(static_cast<std::size_t>(X.cols()) == c.input_width, "input width ", X.cols(), " != ", c.input_width);
  require(X.rows() >= 1, "empty input sequence");
  const bool drop = mode == Mode::train && c.dropout > 0.0;
  require(!drop || rng != nullptr, "train-mode dropout needs an rng");

  Matrix h = detail::norm_dense_forward(X, p, l.fc1, cache ? &cache->fc1 : nullptr);
  Matrix z = detail::norm_dense_forward(h, p, l.fc2, cache ? &cache->fc2 : nullptr);
  if (drop) {
    Matrix mask = detail::dropout_mask(z.rows(), z.cols(), c.dropout, *rng);
    z.array() *= mask.array();
    if (cache) cache->encoder_mask = std::move(mask);
  }
  if (cache) cache->blocks.assign(l.blocks.size(), {});

  for (std::size_t b = 0; b < l.blocks.size(); ++b) {
    const BlockSlots& slots = l.blocks[b];
    detail::BlockCache* bc = cache ? &cache->blocks[b] : nullptr;
    if (bc) {
      bc->input = z;
      bc->heads.resize(slots.heads.size());
    }
    Matrix mhsa = detail::multi_head_attention(p, slots, z, bc);
    if (drop) {
      Matrix mask = detail::dropout_mask(mhsa.rows(), mhsa.cols(), c.dropout, *rng);
      mhsa.array() *= mask.array();
      if (bc) bc->attn_mask = std::move(mask);
    }
    z += mhsa;
    Matrix f = detail::norm_dense_forward(z, p, slots.ff1, bc ? &bc->ff1 : nullptr);
    f = detail::norm_dense_forward(f, p, slots.ff2, bc ? &bc->ff2 : nullptr);
    if (drop) {
      Matrix mask = detail::dropout_mask(f.rows(), f.cols(), c.dropout, *rng);
      f.array() *= mask.array();
      if (bc) bc->ff_mask = std::move(mask);
    }
    z += f;
  }
  if (cache) cache->encoded = z;
  return z;
}

/// Predictor logits from the first row of an encoded sequence; other rows are ignored.
inline Vector predictor_logits(const ParamView& p, const Matrix& encoded) {
  require(static_cast<std::size_t>(encoded.cols()) == p.config->width, "encoded width mismatch");
  return p.weight(p.layout->predictor) * encoded.row(0).transpose() + p.bias(p.layout->predictor);
}

struct ForwardOutput {
  Vector logits;
  std::vector<double> probabilities;
};

/// g(X; theta), or g_eta when eta > 1. Train mode draws dropout masks from `rng`.
inline ForwardOutput forward(const ParamView& p, const Matrix& X, Mode mode, Rng* rng = nullptr,
                             ForwardCache* cache = nullptr, double eta = 1.0) {
  require(eta > 0.0, "temperature must be positive");
  const Matrix encoded = encode_sequence(p, X, mode, rng, cache);
  ForwardOutput out;
  out.logits = predictor_logits(p, encoded);
  out.probabilities = softmax(std::span<const double>(out.logits.data(), static_cast<std::size_t>(out.logits.size())), eta);
  if (cache) {
    cache->logits = out.logits;
    cache->probabilities = out.probabilities;
    cache->eta = eta;
  }
  return out;
}

/// Eval-mode prediction with logits divided by eta >= 1 before the softmax.
inline std::vector<double> forward_downscaled(const ParamView& p, const Matrix& X, double eta) {
  require(eta >= 1.0, "confidence downscaling factor must be >= 1, got ", eta);
  return forward(p, X, Mode::eval, nullptr, nullptr, eta).probabilities;
}

/// Encoder output consumed by the predictor (row 0 of the final sequence), eval mode.
inline Vector extract_feature(const ParamView& p, const Matrix& X) {
  return encode_sequence(p, X, Mode::eval, nullptr).row(0).transpose();
}

/// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(logits) for the cached pass.
inline void backward(const ParamView& p, const ForwardCache& cache, const Vector& dlogits, std::span<double> grad) {
  const ModelConfig& c = *p.config;
  const ParamLayout& l = *p.layout;
  require(grad.size() == l.size, "gradient buffer length mismatch");
  require(static_cast<std::size_t>(dlogits.size()) == c.classes, "dlogits length mismatch");
  const GradView g{p.config, p.layout, grad};

  const Vector z0 = cache.encoded.row(0).transpose();
  g.weight(l.predictor).noalias() += dlogits * z0.transpose();
  g.bias(l.predictor) += dlogits;
  Matrix dz = Matrix::Zero(cache.encoded.rows(), cache.encoded.cols());
  dz.row(0) = (p.weight(l.predictor).transpose() * dlogits).transpose();

  const auto d = static_cast<Eigen::Index>(c.head_width());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t bi = l.blocks.size(); bi-- > 0;) {
    const BlockSlots& slots = l.blocks[bi];
    const detail::BlockCache& bc = cache.blocks[bi];

    // z_out = z_mid + drop(FF(z_mid))
    Matrix df = dz;
    if (bc.ff_mask.size() > 0) df.array() *= bc.ff_mask.array();
    df = detail::norm_dense_backward(df, bc.ff2, p, g, slots.ff2);
    df = detail::norm_dense_backward(df, bc.ff1, p, g, slots.ff1);
    dz += df;

    // z_mid = z_in + drop(MHSA(z_in))
    Matrix dm = dz;
    if (bc.attn_mask.size() > 0) dm.array() *= bc.attn_mask.array();
    for (std::size_t a = 0; a < slots.heads.size(); ++a) {
      const detail::HeadCache& hc = bc.heads[a];
      const HeadSlot& hs = slots.heads[a];
      const auto cols = static_cast<Eigen::Index>(a) * d;
      const auto za = bc.input.middleCols(cols, d);
      const Matrix dout = dm.middleCols(cols, d);
      const Matrix dattn = dout * hc.v.transpose();
      const Matrix dv = hc.attn.transpose() * dout;
      Matrix ds = hc.attn.cwiseProduct(dattn);
      const Vector rowdot = ds.rowwise().sum();
      ds = hc.attn.array() * (dattn.array().colwise() - rowdot.array());
      ds *= scale;
      const Matrix dq = ds * hc.k;
      const Matrix dk = ds.transpose() * hc.q;
      g.head(hs.query).noalias() += za.transpose() * dq;
      g.head(hs.key).noalias() += za.transpose() * dk;
      g.head(hs.value).noalias() += za.transpose() * dv;
      dz.middleCols(cols, d).noalias() += dq * p.head(hs.query).transpose() + dk * p.head(hs.key).transpose() +
                                          dv * p.head(hs.value).transpose();
    }
  }
  if (cache.encoder_mask.size() > 0) dz.array() *= cache.encoder_mask.array();
  Matrix dh = detail::norm_dense_backward(dz, cache.fc2, p, g, l.fc2);
  detail::norm_dense_backward(dh, cache.fc1, p, g, l.fc1);
}

// Checkpoint: model.bin = u32 header [L_P, H, L, A, blocks, C, dropout (f32 bits)]
// followed by V little-endian f32 parameters; model.json mirrors the header.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params) {
  const ModelConfig& c = params.config();
  std::string bin;
  for (std::size_t v : {c.input_width, c.encoder_hidden, c.width, c.heads, c.blocks, c.classes})
    io::put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(v));
  io::put_le<std::uint32_t>(bin, std::bit_cast<std::uint32_t>(static_cast<float>(c.dropout)));
  for (double v : params.values()) io::put_le<float>(bin, static_cast<float>(v));
  nlohmann::ordered_json j;
  j["input_width"] = c.input_width;
  j["encoder_hidden"] = c.encoder_hidden;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["blocks"] = c.blocks;
  j["classes"] = c.classes;
  j["dropout"] = static_cast<float>(c.dropout);
  j["parameter_count"] = params.size();
  io::write_file_atomic(dir / "model.bin", bin);
  io::write_file_atomic(dir / "model.json", j.dump(2) + "\n");
}

inline ModelParams load_checkpoint(const std::filesystem::path& dir) {
  io::ByteReader r(io::read_file(dir / "model.bin"));
  ModelConfig c;
  c.input_width = r.get<std::uint32_t>();
  c.encoder_hidden = r.get<std::uint32_t>();
  c.width = r.get<std::uint32_t>();
  c.heads = r.get<std::uint32_t>();
  c.blocks = r.get<std::uint32_t>();
  c.classes = r.get<std::uint32_t>();
  c.dropout = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
  ModelParams params(c);
  for (auto& v : params.values()) v = static_cast<double>(r.get<float>());
  require<IoError>(r.done(), "trailing bytes in model.bin");
  return params;
}

}  // namespace edgecl
