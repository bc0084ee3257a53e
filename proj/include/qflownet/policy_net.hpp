// Copyright 2026 The QFlowNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forward policy network: a hybrid convolution / self-attention encoder of
// the 2 x d x d residual tensor followed by an MLP producing action logits.
//
//   2 x d x d  --1x1 conv-->  d1 x d x d  (+ fixed 2D sinusoidal encoding)
//              --attention stage (depth, heads)-->  d1 x d x d
//              --2x2 stride-2 conv-->  d2 x d/2 x d/2
//              --attention stage (depth, heads)-->  d2 x d/2 x d/2
//              --1x1 conv-->  d_emb x d/2 x d/2  --mean over tokens-->  d_emb
//   d_emb --linear--> mlp_hidden --ReLU--> --linear--> |A| logits
//
// Each attention layer is pre-norm: x += MHA(LN(x)); x += FFN(LN(x)) with a
// GELU feed-forward of width 4C. Tokens are the spatial grid flattened
// row-major. All activations are row-major (tokens x channels) matrices and
// a batch of B states is stacked as B consecutive token blocks.
//
// Gradients are computed by explicit reverse-mode passes over a forward
// cache (see PolicyNetwork::backward).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qflownet/errors.hpp"
#include "qflownet/gate_algebra.hpp"

namespace qflownet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

struct EncoderConfig {
  int d1 = 64;
  int d2 = 128;
  int d_emb = 256;
  int attn_depth = 4;
  int attn_heads = 8;
  int mlp_hidden = 128;
  int ffn_expansion = 4;

  /// Small first-class configuration for desk experiments and gradient checks.
  static EncoderConfig reduced() { return {8, 16, 16, 1, 2, 16, 4}; }

  void validate() const {
    if (d1 <= 0 || d2 <= 0 || d_emb <= 0 || attn_depth < 0 || attn_heads <= 0 ||
        mlp_hidden <= 0 || ffn_expansion <= 0) {
      throw ConfigError("encoder dimensions must be positive");
    }
    if (d1 % attn_heads != 0 || d2 % attn_heads != 0) {
      throw ConfigError("d1 and d2 must be divisible by attn_heads");
    }
    if (d1 % 4 != 0) {
      throw ConfigError("d1 must be divisible by 4 for the 2D positional encoding");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// y = x W^T + b, with W of shape (out x in).
struct Dense {
  Matrix weight;
  RowVector bias;
};

struct LayerNormParams {
  RowVector gain;
  RowVector bias;
};

struct AttentionLayerParams {
  LayerNormParams norm1;
  Dense qkv;  // C -> 3C, column blocks [Q | K | V], heads contiguous within each
  Dense out;  // C -> C
  LayerNormParams norm2;
  Dense ff_in;   // C -> expansion*C
  Dense ff_out;  // expansion*C -> C
};

/// All learnable tensors plus the scalar log partition function.
struct PolicyParameters {
  Dense stem;  // 1x1 conv 2 -> d1: weight (d1 x 2)
  std::vector<AttentionLayerParams> stage1;
  /// 2x2 stride-2 conv d1 -> d2: weight (d2 x 4*d1), input column index
  /// (dy*2 + dx)*d1 + c for kernel offset (dy, dx) and channel c.
  Dense down;
  std::vector<AttentionLayerParams> stage2;
  Dense proj;  // 1x1 conv d2 -> d_emb
  Dense head_hidden;
  Dense head_out;
  double log_z = 0.0;

  /// Visits (name, tensor) for every tensor in a fixed order; log_z is not
  /// included. Works for const and non-const instances.
  template <class Self, class F>
  static void for_each_tensor(Self& self, F&& f) {
    auto dense = [&](const std::string& prefix, auto& d) {
      f(prefix + ".weight", d.weight);
      f(prefix + ".bias", d.bias);
    };
    auto norm = [&](const std::string& prefix, auto& n) {
      f(prefix + ".gain", n.gain);
      f(prefix + ".bias", n.bias);
    };
    auto stage = [&](const std::string& prefix, auto& layers) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = prefix + "." + std::to_string(l);
        norm(p + ".norm1", layers[l].norm1);
        dense(p + ".qkv", layers[l].qkv);
        dense(p + ".out", layers[l].out);
        norm(p + ".norm2", layers[l].norm2);
        dense(p + ".ff_in", layers[l].ff_in);
        dense(p + ".ff_out", layers[l].ff_out);
      }
    };
    dense("stem", self.stem);
    stage("stage1", self.stage1);
    dense("down", self.down);
    stage("stage2", self.stage2);
    dense("proj", self.proj);
    dense("head_hidden", self.head_hidden);
    dense("head_out", self.head_out);
  }

  template <class F>
  void for_each_tensor(F&& f) {
    for_each_tensor(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for_each_tensor(*this, std::forward<F>(f));
  }

  PolicyParameters zeros_like() const {
    PolicyParameters z = *this;
    z.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
    z.log_z = 0.0;
    return z;
  }

  std::size_t num_scalars() const {
    std::size_t n = 1;
    for_each_tensor([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = std::isfinite(log_z);
    for_each_tensor([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  std::size_t num_actions() const { return static_cast<std::size_t>(head_out.weight.rows()); }
};

/// 2 x d x d real tensor: channel 0 = real parts, channel 1 = imaginary
/// parts, each row-major.
struct StateTensor {
  int dim = 0;
  std::vector<double> values;

  double at(int channel, int row, int col) const {
    return values[static_cast<std::size_t>((channel * dim + row) * dim + col)];
  }
};

inline StateTensor to_state_tensor(const UnitaryMatrix& u) {
  const int d = static_cast<int>(u.dim());
  StateTensor t{d, std::vector<double>(static_cast<std::size_t>(2 * d * d))};
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      t.values[static_cast<std::size_t>(r * d + c)] = u(r, c).real();
      t.values[static_cast<std::size_t>(d * d + r * d + c)] = u(r, c).imag();
    }
  }
  return t;
}

inline Eigen::MatrixXcd from_state_tensor(const StateTensor& t) {
  Eigen::MatrixXcd m(t.dim, t.dim);
  for (int r = 0; r < t.dim; ++r) {
    for (int c = 0; c < t.dim; ++c) m(r, c) = Complex(t.at(0, r, c), t.at(1, r, c));
  }
  return m;
}

/// Fixed 2D sinusoidal encoding for a side x side grid: channels [0, C/2)
/// encode the row index, [C/2, C) the column index, each as interleaved
/// sin/cos pairs with frequencies 10000^(-2i/(C/2)).
inline Matrix positional_encoding_2d(int side, int channels) {
  const int half = channels / 2;
  Matrix pe(side * side, channels);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int token = r * side + c;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        pe(token, 2 * i) = std::sin(r * freq);
        pe(token, 2 * i + 1) = std::cos(r * freq);
        pe(token, half + 2 * i) = std::sin(c * freq);
        pe(token, half + 2 * i + 1) = std::cos(c * freq);
      }
    }
  }
  return pe;
}

namespace detail {

inline Dense init_dense(int out, int in, Rng& rng, double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Dense d{Matrix(out, in), RowVector::Zero(out)};
  for (Eigen::Index k = 0; k < d.weight.size(); ++k) d.weight.data()[k] = u(rng);
  return d;
}

inline LayerNormParams init_norm(int channels) {
  return {RowVector::Ones(channels), RowVector::Zero(channels)};
}

inline AttentionLayerParams init_layer(int c, int expansion, Rng& rng) {
  AttentionLayerParams l;
  l.norm1 = init_norm(c);
  l.qkv = init_dense(3 * c, c, rng);
  l.out = init_dense(c, c, rng);
  l.norm2 = init_norm(c);
  l.ff_in = init_dense(expansion * c, c, rng);
  l.ff_out = init_dense(c, expansion * c, rng);
  return l;
}

// GELU in its tanh form, written as x * sigmoid(2u) so that it vectorizes
// through exp. The sigmoid is kept for the backward pass.
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline void gelu_forward(const Matrix& x, Matrix& y, Matrix& sig) {
  const auto xa = x.array();
  sig = (1.0 + (-2.0 * kGeluC * (xa + kGeluA * xa.cube())).exp()).inverse().matrix();
  y = (xa * sig.array()).matrix();
}

inline void gelu_backward(Matrix& dy, const Matrix& x, const Matrix& sig) {
  const auto xa = x.array();
  const auto sa = sig.array();
  dy.array() *= sa + xa * sa * (1.0 - sa) * (2.0 * kGeluC) * (1.0 + 3.0 * kGeluA * xa.square());
}

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace detail

/// Output-layer weights are drawn at 1/10 of the fan-in bound so a fresh
/// policy starts close to uniform.
inline constexpr double kHeadOutInitScale = 0.1;

/// Fan-in-scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero
/// biases, unit norm gains, log_z = 0. Deterministic given the generator.
inline PolicyParameters init_params(const EncoderConfig& cfg, std::size_t num_actions, Rng& rng) {
  cfg.validate();
  if (num_actions == 0) throw ConfigError("action space is empty");
  PolicyParameters p;
  p.stem = detail::init_dense(cfg.d1, 2, rng);
  for (int l = 0; l < cfg.attn_depth; ++l) p.stage1.push_back(detail::init_layer(cfg.d1, cfg.ffn_expansion, rng));
  p.down = detail::init_dense(cfg.d2, 4 * cfg.d1, rng);
  for (int l = 0; l < cfg.attn_depth; ++l) p.stage2.push_back(detail::init_layer(cfg.d2, cfg.ffn_expansion, rng));
  p.proj = detail::init_dense(cfg.d_emb, cfg.d2, rng);
  p.head_hidden = detail::init_dense(cfg.mlp_hidden, cfg.d_emb, rng);
  p.head_out = detail::init_dense(static_cast<int>(num_actions), cfg.mlp_hidden, rng, kHeadOutInitScale);
  p.log_z = 0.0;
  return p;
}

inline PolicyParameters init_params(const EncoderConfig& cfg, const ActionSpace& space, Rng& rng) {
  return init_params(cfg, space.size(), rng);
}

/// Batched forward/backward engine. Stateless apart from the cache objects
/// it fills; parameters are passed explicitly.
class PolicyNetwork {
 public:
  struct LayerCache {
    Matrix input;
    Matrix norm1_hat;
    RowVector norm1_inv_std;
    Matrix norm1_out;
    Matrix qkv;
    Matrix attn_probs;  // (B*heads*T) x T
    Matrix attn_concat;
    Matrix mid;
    Matrix norm2_hat;
    RowVector norm2_inv_std;
    Matrix norm2_out;
    Matrix ff_pre;
    Matrix ff_act;
    Matrix ff_sig;
  };

  struct Cache {
    int batch = 0;
    int side1 = 0;
    int side2 = 0;
    Matrix input;
    std::vector<LayerCache> stage1;
    Matrix stage1_out;
    Matrix down_in;
    std::vector<LayerCache> stage2;
    Matrix stage2_out;
    Matrix pooled;
    Matrix hidden_pre;
    Matrix hidden;
  };

  /// Token matrix (B*d*d x 2) from residuals.
  static Matrix tokens_from_states(std::span<const UnitaryMatrix> states) {
    if (states.empty()) return Matrix(0, 2);
    const Eigen::Index d = states.front().dim();
    Matrix x(static_cast<Eigen::Index>(states.size()) * d * d, 2);
    for (std::size_t b = 0; b < states.size(); ++b) {
      if (states[b].dim() != d) throw ValidationError("mixed dimensions in batch");
      const Eigen::MatrixXcd& m = states[b].matrix();
      for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
          const Eigen::Index row = static_cast<Eigen::Index>(b) * d * d + r * d + c;
          x(row, 0) = m(r, c).real();
          x(row, 1) = m(r, c).imag();
        }
      }
    }
    return x;
  }

  static Matrix tokens_from_tensors(std::span<const StateTensor> tensors) {
    if (tensors.empty()) return Matrix(0, 2);
    const int d = tensors.front().dim;
    Matrix x(static_cast<Eigen::Index>(tensors.size()) * d * d, 2);
    for (std::size_t b = 0; b < tensors.size(); ++b) {
      if (tensors[b].dim != d) throw ValidationError("mixed dimensions in batch");
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) {
          const Eigen::Index row = static_cast<Eigen::Index>(b) * d * d + r * d + c;
          x(row, 0) = tensors[b].at(0, r, c);
          x(row, 1) = tensors[b].at(1, r, c);
        }
      }
    }
    return x;
  }

  /// Encoder: tokens (B*d*d x 2) -> embeddings (B x d_emb).
  static Matrix encode(const Matrix& tokens, int side, const PolicyParameters& p,
                       const EncoderConfig& cfg, Cache& cache) {
    if (side < 2 || side % 2 != 0) {
      throw ConfigError("encoder needs an even matrix side >= 2, got " + std::to_string(side));
    }
    if (p.stage1.size() != static_cast<std::size_t>(cfg.attn_depth) ||
        p.stem.weight.rows() != cfg.d1 || p.down.weight.rows() != cfg.d2 ||
        p.proj.weight.rows() != cfg.d_emb) {
      throw ConfigError("parameters do not match the encoder configuration");
    }
    const int t1 = side * side;
    const int side2 = side / 2;
    const int t2 = side2 * side2;
    const int batch = static_cast<int>(tokens.rows() / t1);
    cache.batch = batch;
    cache.side1 = side;
    cache.side2 = side2;
    cache.input = tokens;

    Matrix h = dense_forward(tokens, p.stem);
    const Matrix pe = positional_encoding_2d(side, cfg.d1);
    for (int b = 0; b < batch; ++b) h.middleRows(static_cast<Eigen::Index>(b) * t1, t1) += pe;

    cache.stage1.resize(p.stage1.size());
    for (std::size_t l = 0; l < p.stage1.size(); ++l) {
      h = layer_forward(h, batch, t1, cfg.attn_heads, p.stage1[l], cache.stage1[l]);
    }
    cache.stage1_out = h;

    cache.down_in = gather_2x2(h, batch, side, cfg.d1);
    h = dense_forward(cache.down_in, p.down);

    cache.stage2.resize(p.stage2.size());
    for (std::size_t l = 0; l < p.stage2.size(); ++l) {
      h = layer_forward(h, batch, t2, cfg.attn_heads, p.stage2[l], cache.stage2[l]);
    }
    cache.stage2_out = h;

    const Matrix e = dense_forward(h, p.proj);
    Matrix pooled(batch, cfg.d_emb);
    for (int b = 0; b < batch; ++b) {
      pooled.row(b) = e.middleRows(static_cast<Eigen::Index>(b) * t2, t2).colwise().mean();
    }
    cache.pooled = pooled;
    return pooled;
  }

  /// Policy head: embeddings (B x d_emb) -> logits (B x |A|).
  static Matrix head(const Matrix& z, const PolicyParameters& p, Cache& cache) {
    cache.hidden_pre = dense_forward(z, p.head_hidden);
    cache.hidden = cache.hidden_pre.cwiseMax(0.0);
    return dense_forward(cache.hidden, p.head_out);
  }

  static Matrix logits(std::span<const UnitaryMatrix> states, const PolicyParameters& p,
                       const EncoderConfig& cfg, Cache& cache) {
    if (states.empty()) return Matrix(0, p.head_out.weight.rows());
    const int side = static_cast<int>(states.front().dim());
    return head(encode(tokens_from_states(states), side, p, cfg, cache), p, cache);
  }

  static Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
      out.row(r) = logits.row(r).array() - lse;
    }
    return out;
  }

  /// Accumulates into `grad` the gradient of a scalar whose derivative with
  /// respect to the logits is `d_logits`.
  static void backward(const Matrix& d_logits, const PolicyParameters& p, const EncoderConfig& cfg,
                       const Cache& cache, PolicyParameters& grad) {
    const int batch = cache.batch;
    const int t1 = cache.side1 * cache.side1;
    const int t2 = cache.side2 * cache.side2;

    Matrix d_hidden = dense_backward(d_logits, cache.hidden, p.head_out, grad.head_out);
    d_hidden.array() *= (cache.hidden_pre.array() > 0.0).cast<double>();
    const Matrix d_pooled = dense_backward(d_hidden, cache.pooled, p.head_hidden, grad.head_hidden);

    Matrix d_e(static_cast<Eigen::Index>(batch) * t2, cfg.d_emb);
    for (int b = 0; b < batch; ++b) {
      d_e.middleRows(static_cast<Eigen::Index>(b) * t2, t2).rowwise() = d_pooled.row(b) / t2;
    }
    Matrix d_h = dense_backward(d_e, cache.stage2_out, p.proj, grad.proj);

    for (std::size_t l = p.stage2.size(); l-- > 0;) {
      d_h = layer_backward(d_h, batch, t2, cfg.attn_heads, p.stage2[l], cache.stage2[l], grad.stage2[l]);
    }
    const Matrix d_down_in = dense_backward(d_h, cache.down_in, p.down, grad.down);
    d_h = scatter_2x2(d_down_in, batch, cache.side1, cfg.d1);

    for (std::size_t l = p.stage1.size(); l-- > 0;) {
      d_h = layer_backward(d_h, batch, t1, cfg.attn_heads, p.stage1[l], cache.stage1[l], grad.stage1[l]);
    }
    // Positional encoding is constant; the stem input gradient is not needed.
    accumulate_dense_grad(d_h, cache.input, grad.stem);
  }

 private:
  static Matrix dense_forward(const Matrix& x, const Dense& d) {
    Matrix y(x.rows(), d.weight.rows());
    y.noalias() = x * d.weight.transpose();
    y.rowwise() += d.bias;
    return y;
  }

  static void accumulate_dense_grad(const Matrix& dy, const Matrix& x, Dense& g) {
    g.weight.noalias() += dy.transpose() * x;
    g.bias += dy.colwise().sum();
  }

  static Matrix dense_backward(const Matrix& dy, const Matrix& x, const Dense& d, Dense& g) {
    accumulate_dense_grad(dy, x, g);
    Matrix dx(dy.rows(), d.weight.cols());
    dx.noalias() = dy * d.weight;
    return dx;
  }

  static Matrix norm_forward(const Matrix& x, const LayerNormParams& n, Matrix& hat, RowVector& inv_std) {
    const Eigen::Index c = x.cols();
    hat.resize(x.rows(), c);
    inv_std.resize(x.rows());
    Matrix y(x.rows(), c);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      const double var = (x.row(r).array() - mean).square().mean();
      const double is = 1.0 / std::sqrt(var + detail::kLayerNormEps);
      inv_std(r) = is;
      hat.row(r) = (x.row(r).array() - mean) * is;
      y.row(r) = hat.row(r).cwiseProduct(n.gain) + n.bias;
    }
    return y;
  }

  static Matrix norm_backward(const Matrix& dy, const Matrix& hat, const RowVector& inv_std,
                              const LayerNormParams& n, LayerNormParams& g) {
    g.gain += (dy.array() * hat.array()).colwise().sum().matrix();
    g.bias += dy.colwise().sum();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const RowVector dhat = dy.row(r).cwiseProduct(n.gain);
      const double mean_dhat = dhat.mean();
      const double mean_dhat_hat = dhat.cwiseProduct(hat.row(r)).mean();
      dx.row(r) = inv_std(r) * (dhat.array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
    }
    return dx;
  }

  static Matrix layer_forward(const Matrix& x, int batch, int tokens, int heads,
                              const AttentionLayerParams& p, LayerCache& c) {
    const Eigen::Index ch = x.cols();
    const Eigen::Index dh = ch / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.input = x;
    c.norm1_out = norm_forward(x, p.norm1, c.norm1_hat, c.norm1_inv_std);
    c.qkv = dense_forward(c.norm1_out, p.qkv);
    c.attn_probs.resize(static_cast<Eigen::Index>(batch) * heads * tokens, tokens);
    c.attn_concat.resize(x.rows(), ch);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(r0, h * dh, tokens, dh);
        const auto k = c.qkv.block(r0, ch + h * dh, tokens, dh);
        const auto v = c.qkv.block(r0, 2 * ch + h * dh, tokens, dh);
        auto probs = c.attn_probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * tokens, tokens);
        probs.noalias() = q * k.transpose();
        probs *= scale;
        for (int r = 0; r < tokens; ++r) {
          const double m = probs.row(r).maxCoeff();
          probs.row(r) = (probs.row(r).array() - m).exp();
          probs.row(r) /= probs.row(r).sum();
        }
        c.attn_concat.block(r0, h * dh, tokens, dh).noalias() = probs * v;
      }
    }
    c.mid = x + dense_forward(c.attn_concat, p.out);
    c.norm2_out = norm_forward(c.mid, p.norm2, c.norm2_hat, c.norm2_inv_std);
    c.ff_pre = dense_forward(c.norm2_out, p.ff_in);
    detail::gelu_forward(c.ff_pre, c.ff_act, c.ff_sig);
    return c.mid + dense_forward(c.ff_act, p.ff_out);
  }

  static Matrix layer_backward(const Matrix& dy, int batch, int tokens, int heads,
                               const AttentionLayerParams& p, const LayerCache& c,
                               AttentionLayerParams& g) {
    const Eigen::Index ch = dy.cols();
    const Eigen::Index dh = ch / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Feed-forward branch.
    Matrix d_act = dense_backward(dy, c.ff_act, p.ff_out, g.ff_out);
    detail::gelu_backward(d_act, c.ff_pre, c.ff_sig);
    const Matrix d_norm2 = dense_backward(d_act, c.norm2_out, p.ff_in, g.ff_in);
    Matrix d_mid = dy + norm_backward(d_norm2, c.norm2_hat, c.norm2_inv_std, p.norm2, g.norm2);

    // Attention branch.
    const Matrix d_concat = dense_backward(d_mid, c.attn_concat, p.out, g.out);
    Matrix d_qkv(c.qkv.rows(), c.qkv.cols());
    Matrix d_probs(tokens, tokens);
    Matrix d_scores(tokens, tokens);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(r0, h * dh, tokens, dh);
        const auto k = c.qkv.block(r0, ch + h * dh, tokens, dh);
        const auto v = c.qkv.block(r0, 2 * ch + h * dh, tokens, dh);
        const auto probs = c.attn_probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * tokens, tokens);
        const auto d_out = d_concat.block(r0, h * dh, tokens, dh);
        d_probs.noalias() = d_out * v.transpose();
        d_qkv.block(r0, 2 * ch + h * dh, tokens, dh).noalias() = probs.transpose() * d_out;
        for (int r = 0; r < tokens; ++r) {
          const double dot = d_probs.row(r).dot(probs.row(r));
          d_scores.row(r) = probs.row(r).array() * (d_probs.row(r).array() - dot) * scale;
        }
        d_qkv.block(r0, h * dh, tokens, dh).noalias() = d_scores * k;
        d_qkv.block(r0, ch + h * dh, tokens, dh).noalias() = d_scores.transpose() * q;
      }
    }
    const Matrix d_norm1 = dense_backward(d_qkv, c.norm1_out, p.qkv, g.qkv);
    return d_mid + norm_backward(d_norm1, c.norm1_hat, c.norm1_inv_std, p.norm1, g.norm1);
  }

  static Matrix gather_2x2(const Matrix& h, int batch, int side, int channels) {
    const int side2 = side / 2;
    Matrix out(static_cast<Eigen::Index>(batch) * side2 * side2, 4 * channels);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < side2; ++i) {
        for (int j = 0; j < side2; ++j) {
          const Eigen::Index orow = (static_cast<Eigen::Index>(b) * side2 + i) * side2 + j;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index irow =
                  static_cast<Eigen::Index>(b) * side * side + (2 * i + dy) * side + (2 * j + dx);
              out.block(orow, (dy * 2 + dx) * channels, 1, channels) = h.row(irow);
            }
          }
        }
      }
    }
    return out;
  }

  static Matrix scatter_2x2(const Matrix& d_out, int batch, int side, int channels) {
    const int side2 = side / 2;
    Matrix d_h(static_cast<Eigen::Index>(batch) * side * side, channels);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < side2; ++i) {
        for (int j = 0; j < side2; ++j) {
          const Eigen::Index orow = (static_cast<Eigen::Index>(b) * side2 + i) * side2 + j;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index irow =
                  static_cast<Eigen::Index>(b) * side * side + (2 * i + dy) * side + (2 * j + dx);
              d_h.row(irow) = d_out.block(orow, (dy * 2 + dx) * channels, 1, channels);
            }
          }
        }
      }
    }
    return d_h;
  }
};

// ---------------------------------------------------------------------------
// Single-state convenience API

inline Eigen::VectorXd encode(const StateTensor& x, const PolicyParameters& p, const EncoderConfig& cfg) {
  PolicyNetwork::Cache cache;
  const Matrix z = PolicyNetwork::encode(PolicyNetwork::tokens_from_tensors(std::span(&x, 1)), x.dim, p, cfg, cache);
  return z.row(0).transpose();
}

inline Eigen::VectorXd policy_logits(const Eigen::VectorXd& z, const PolicyParameters& p,
                                     const EncoderConfig& cfg, std::size_t num_actions) {
  if (z.size() != cfg.d_emb) {
    throw ConfigError("embedding has length " + std::to_string(z.size()) + ", expected " +
                      std::to_string(cfg.d_emb));
  }
  if (p.num_actions() != num_actions) {
    throw ConfigError("policy head emits " + std::to_string(p.num_actions()) +
                      " logits but the action space has " + std::to_string(num_actions));
  }
  PolicyNetwork::Cache cache;
  const Matrix zin = z.transpose();
  return PolicyNetwork::head(zin, p, cache).row(0).transpose();
}

inline Eigen::VectorXd policy_logits(const Eigen::VectorXd& z, const PolicyParameters& p,
                                     const EncoderConfig& cfg, const ActionSpace& space) {
  return policy_logits(z, p, cfg, space.size());
}

/// Softmax distribution over the action space for one residual.
inline Eigen::VectorXd forward(const UnitaryMatrix& residual, const PolicyParameters& p,
                               const EncoderConfig& cfg, const ActionSpace& space) {
  const Eigen::VectorXd logits = policy_logits(encode(to_state_tensor(residual), p, cfg), p, cfg, space);
  const Matrix lp = PolicyNetwork::log_softmax(logits.transpose());
  return lp.row(0).transpose().array().exp();
}

/// Adapts parameters + config to the ForwardPolicy concept. Evaluates in
/// chunks to bound cache memory.
class NetworkPolicy {
 public:
  NetworkPolicy(const PolicyParameters& params, const EncoderConfig& cfg, std::size_t chunk = 128)
      : params_(&params), cfg_(cfg), chunk_(std::max<std::size_t>(1, chunk)) {}

  std::size_t num_actions() const { return params_->num_actions(); }

  Eigen::MatrixXd log_probabilities(std::span<const UnitaryMatrix> states) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(num_actions()));
    for (std::size_t start = 0; start < states.size(); start += chunk_) {
      const std::size_t count = std::min(chunk_, states.size() - start);
      PolicyNetwork::Cache cache;
      const Matrix logits = PolicyNetwork::logits(states.subspan(start, count), *params_, cfg_, cache);
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
          PolicyNetwork::log_softmax(logits);
    }
    return out;
  }

 private:
  const PolicyParameters* params_;
  EncoderConfig cfg_;
  std::size_t chunk_;
};

}  // namespace qflownet
