#pragma once

// Convolutional policy/value network on 3-plane state images.
//
// Trunk: `conv_layers` blocks of (k x k same-padded conv, batch norm, ReLU).
// Policy head: 1x1 conv to 2 channels, batch norm, ReLU, dense to
// `policy_size` logits, softmax. Value head: 1x1 conv to 1 channel, batch
// norm, ReLU, dense to `value_hidden`, ReLU, dense to 1, tanh.
// The Q head variant keeps the policy head's layers but exposes the raw
// logits as per-action values and drops the value head.
//
// All trainable parameters live in one flat vector, so optimizers, L2
// regularization, checkpoints and finite-difference checks address them
// uniformly. Batch-norm running statistics live in a separate buffer vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrl/binary_io.hpp"
#include "seqrl/game.hpp"
#include "seqrl/rng.hpp"

namespace seqrl::net {

enum class Head : std::uint32_t { kPolicyValue = 0, kQValues = 1 };

struct NetworkConfig {
  int rows = 1;  // image rows (Kp)
  int cols = 1;  // image columns (Np)
  int conv_layers = 6;
  int filters = 64;
  int kernel = 3;
  int policy_size = 2;  // 2^ell
  int value_hidden = 64;
  Head head = Head::kPolicyValue;
  double l2 = 1e-4;
  double learning_rate = 1e-4;
  double momentum = 0.0;
  double bn_decay = 0.99;

  void validate() const {
    auto fail = [](const std::string& field) {
      throw std::invalid_argument("net: invalid " + field);
    };
    if (rows < 1 || cols < 1) fail("image dims");
    if (conv_layers < 1) fail("conv_layers");
    if (filters < 1) fail("filters");
    if (kernel < 1 || kernel % 2 == 0) fail("kernel (must be odd)");
    if (policy_size < 2) fail("policy_size");
    if (head == Head::kPolicyValue && value_hidden < 1) fail("value_hidden");
    if (!(l2 >= 0)) fail("l2");
    if (!(learning_rate > 0)) fail("learning_rate");
    if (!(momentum >= 0 && momentum < 1)) fail("momentum");
    if (!(bn_decay >= 0 && bn_decay < 1)) fail("bn_decay");
  }

  static NetworkConfig for_game(const GameConfig& game, const FeatureSpec& spec) {
    NetworkConfig c;
    c.rows = spec.rows;
    c.cols = spec.cols;
    c.policy_size = game.move_count();
    return c;
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct Prediction {
  std::vector<double> P;
  double value = 0;
};

// One training example. `pi` is used by the policy/value loss, `action` by the
// Q loss.
struct Example {
  std::vector<double> features;  // 3 * rows * cols, plane-major
  std::vector<double> pi;
  double reward = 0;
  int action = -1;
};

using Batch = std::vector<Example>;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

constexpr double kBnEps = 1e-5;

struct ConvSlot {
  int in = 0, out = 0, k = 1;
  std::size_t w = 0, gamma = 0, beta = 0;  // parameter offsets
  std::size_t mean = 0, var = 0;           // buffer offsets
};

struct DenseSlot {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;
};

struct Layout {
  std::vector<ConvSlot> trunk;
  ConvSlot policy_conv;
  DenseSlot policy_fc;
  ConvSlot value_conv;
  DenseSlot value_fc1, value_fc2;
  std::size_t params = 0;
  std::size_t buffers = 0;

  explicit Layout(const NetworkConfig& c) {
    int in = 3;
    for (int l = 0; l < c.conv_layers; ++l) {
      trunk.push_back(conv(in, c.filters, c.kernel));
      in = c.filters;
    }
    const int px = c.rows * c.cols;
    policy_conv = conv(c.filters, 2, 1);
    policy_fc = dense(2 * px, c.policy_size);
    if (c.head == Head::kPolicyValue) {
      value_conv = conv(c.filters, 1, 1);
      value_fc1 = dense(px, c.value_hidden);
      value_fc2 = dense(c.value_hidden, 1);
    }
  }

 private:
  ConvSlot conv(int in, int out, int k) {
    ConvSlot s{in, out, k};
    s.w = take(static_cast<std::size_t>(in) * out * k * k);
    s.gamma = take(out);
    s.beta = take(out);
    s.mean = buffers;
    s.var = buffers + out;
    buffers += 2 * static_cast<std::size_t>(out);
    return s;
  }
  DenseSlot dense(int in, int out) {
    DenseSlot s{in, out};
    s.w = take(static_cast<std::size_t>(in) * out);
    s.b = take(out);
    return s;
  }
  std::size_t take(std::size_t n) {
    const std::size_t at = params;
    params += n;
    return at;
  }
};

// Tensors are [batch][channel][row][col] in flat vectors.
struct Shape {
  int b, c, h, w;
  std::size_t size() const { return static_cast<std::size_t>(b) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

inline void conv_forward(const double* in, const Shape& s, const double* w, int out_c, int k,
                         double* out) {
  const int pad = k / 2;
  const std::size_t plane = s.plane();
  std::fill(out, out + static_cast<std::size_t>(s.b) * out_c * plane, 0.0);
  for (int b = 0; b < s.b; ++b) {
    for (int o = 0; o < out_c; ++o) {
      double* dst = out + (static_cast<std::size_t>(b) * out_c + o) * plane;
      for (int c = 0; c < s.c; ++c) {
        const double* src = in + (static_cast<std::size_t>(b) * s.c + c) * plane;
        const double* wk = w + (static_cast<std::size_t>(o) * s.c + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - pad;
          const int y0 = std::max(0, -dy), y1 = std::min(s.h, s.h - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - pad;
            const int x0 = std::max(0, -dx), x1 = std::min(s.w, s.w - dx);
            const double wv = wk[ky * k + kx];
            if (wv == 0.0) continue;
            for (int y = y0; y < y1; ++y) {
              double* drow = dst + static_cast<std::size_t>(y) * s.w;
              const double* srow = src + static_cast<std::size_t>(y + dy) * s.w + dx;
              for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
  }
}

// Accumulates dW and (if din != nullptr) writes din.
inline void conv_backward(const double* in, const Shape& s, const double* w, int out_c, int k,
                          const double* dout, double* dw, double* din) {
  const int pad = k / 2;
  const std::size_t plane = s.plane();
  if (din) std::fill(din, din + s.size(), 0.0);
  for (int b = 0; b < s.b; ++b) {
    for (int o = 0; o < out_c; ++o) {
      const double* g = dout + (static_cast<std::size_t>(b) * out_c + o) * plane;
      for (int c = 0; c < s.c; ++c) {
        const double* src = in + (static_cast<std::size_t>(b) * s.c + c) * plane;
        double* dsrc = din ? din + (static_cast<std::size_t>(b) * s.c + c) * plane : nullptr;
        const std::size_t widx = (static_cast<std::size_t>(o) * s.c + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - pad;
          const int y0 = std::max(0, -dy), y1 = std::min(s.h, s.h - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - pad;
            const int x0 = std::max(0, -dx), x1 = std::min(s.w, s.w - dx);
            const double wv = w[widx + ky * k + kx];
            double acc = 0;
            for (int y = y0; y < y1; ++y) {
              const double* grow = g + static_cast<std::size_t>(y) * s.w;
              const double* srow = src + static_cast<std::size_t>(y + dy) * s.w + dx;
              double* dsrow = dsrc ? dsrc + static_cast<std::size_t>(y + dy) * s.w + dx : nullptr;
              for (int x = x0; x < x1; ++x) {
                acc += grow[x] * srow[x];
                if (dsrow) dsrow[x] += wv * grow[x];
              }
            }
            dw[widx + ky * k + kx] += acc;
          }
        }
      }
    }
  }
}

struct BnCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;  // per channel
  std::vector<double> mean, var;
};

// Training-mode batch norm (batch statistics) followed by ReLU, in place on
// `z`. Stores what the backward pass needs; `pre` keeps the pre-ReLU values.
inline void bn_relu_train(std::vector<double>& z, const Shape& s, const double* gamma,
                          const double* beta, BnCache& cache, std::vector<double>& pre) {
  const std::size_t plane = s.plane();
  const double m = static_cast<double>(s.b) * plane;
  cache.xhat.resize(z.size());
  cache.inv_std.assign(s.c, 0.0);
  cache.mean.assign(s.c, 0.0);
  cache.var.assign(s.c, 0.0);
  pre.resize(z.size());
  for (int c = 0; c < s.c; ++c) {
    double sum = 0;
    for (int b = 0; b < s.b; ++b) {
      const double* p = z.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0;
    for (int b = 0; b < s.b; ++b) {
      const double* p = z.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / m;
    const double inv = 1.0 / std::sqrt(var + kBnEps);
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.inv_std[c] = inv;
    for (int b = 0; b < s.b; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (z[off + i] - mean) * inv;
        cache.xhat[off + i] = xh;
        const double y = gamma[c] * xh + beta[c];
        pre[off + i] = y;
        z[off + i] = y > 0 ? y : 0.0;
      }
    }
  }
}

// Backward through ReLU then batch norm. `g` holds dL/d(output) on entry and
// dL/dz on exit.
inline void bn_relu_backward(std::vector<double>& g, const Shape& s, const double* gamma,
                             const BnCache& cache, const std::vector<double>& pre, double* dgamma,
                             double* dbeta) {
  const std::size_t plane = s.plane();
  const double m = static_cast<double>(s.b) * plane;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (pre[i] <= 0) g[i] = 0.0;
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int b = 0; b < s.b; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[off + i];
        sum_dy_xhat += g[off + i] * cache.xhat[off + i];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const double scale = gamma[c] * cache.inv_std[c] / m;
    for (int b = 0; b < s.b; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        g[off + i] = scale * (m * g[off + i] - sum_dy - cache.xhat[off + i] * sum_dy_xhat);
    }
  }
}

inline void bn_relu_infer(std::vector<double>& z, const Shape& s, const double* gamma,
                          const double* beta, const double* mean, const double* var) {
  const std::size_t plane = s.plane();
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(var[c] + kBnEps);
      const double a = gamma[c] * inv, shift = beta[c] - gamma[c] * mean[c] * inv;
      double* p = z.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double y = a * p[i] + shift;
        p[i] = y > 0 ? y : 0.0;
      }
    }
}

inline void dense_forward(const double* x, int batch, const DenseSlot& d, const double* params,
                          double* out) {
  const double* w = params + d.w;
  const double* bias = params + d.b;
  for (int b = 0; b < batch; ++b) {
    const double* xb = x + static_cast<std::size_t>(b) * d.in;
    for (int o = 0; o < d.out; ++o) {
      const double* wr = w + static_cast<std::size_t>(o) * d.in;
      double acc = bias[o];
      for (int i = 0; i < d.in; ++i) acc += wr[i] * xb[i];
      out[static_cast<std::size_t>(b) * d.out + o] = acc;
    }
  }
}

inline void dense_backward(const double* x, int batch, const DenseSlot& d, const double* params,
                           const double* dout, double* grad, double* dx) {
  const double* w = params + d.w;
  if (dx) std::fill(dx, dx + static_cast<std::size_t>(batch) * d.in, 0.0);
  for (int b = 0; b < batch; ++b) {
    const double* xb = x + static_cast<std::size_t>(b) * d.in;
    for (int o = 0; o < d.out; ++o) {
      const double g = dout[static_cast<std::size_t>(b) * d.out + o];
      if (g == 0.0) continue;
      grad[d.b + o] += g;
      double* gw = grad + d.w + static_cast<std::size_t>(o) * d.in;
      const double* wr = w + static_cast<std::size_t>(o) * d.in;
      for (int i = 0; i < d.in; ++i) gw[i] += g * xb[i];
      if (dx) {
        double* dxb = dx + static_cast<std::size_t>(b) * d.in;
        for (int i = 0; i < d.in; ++i) dxb[i] += g * wr[i];
      }
    }
  }
}

inline void log_softmax(const double* z, int n, double* out) {
  const double mx = *std::max_element(z, z + n);
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - mx);
  const double lse = mx + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = z[i] - lse;
}

}  // namespace detail

struct LossParts {
  double total = 0;
  double value = 0;   // mean squared reward error
  double policy = 0;  // mean cross entropy (policy/value head)
  double l2 = 0;
};

class Network {
 public:
  static Network init_random(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network n(cfg);
    Engine eng = make_engine(seed);
    const auto& L = n.layout_;
    auto he = [&](std::size_t off, std::size_t count, int fan_in) {
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t i = 0; i < count; ++i) n.params_[off + i] = g(eng);
    };
    auto init_conv = [&](const detail::ConvSlot& s) {
      he(s.w, static_cast<std::size_t>(s.in) * s.out * s.k * s.k, s.in * s.k * s.k);
      for (int c = 0; c < s.out; ++c) {
        n.params_[s.gamma + c] = 1.0;
        n.buffers_[s.var + c] = 1.0;
      }
    };
    auto init_dense = [&](const detail::DenseSlot& d, double gain) {
      std::normal_distribution<double> g(0.0, gain * std::sqrt(1.0 / d.in));
      for (std::size_t i = 0; i < static_cast<std::size_t>(d.in) * d.out; ++i)
        n.params_[d.w + i] = g(eng);
    };
    for (const auto& s : L.trunk) init_conv(s);
    init_conv(L.policy_conv);
    init_dense(L.policy_fc, 1.0);
    if (cfg.head == Head::kPolicyValue) {
      init_conv(L.value_conv);
      init_dense(L.value_fc1, std::sqrt(2.0));
      init_dense(L.value_fc2, 1.0);
    }
    return n;
  }

  const NetworkConfig& config() const { return cfg_; }
  std::uint64_t version() const { return version_; }
  std::span<const double> parameters() const { return params_; }
  std::span<const double> buffers() const { return buffers_; }
  std::size_t parameter_count() const { return params_.size(); }
  int input_size() const { return 3 * cfg_.rows * cfg_.cols; }

  // Raw head outputs in inference mode: logits (or Q values) and the
  // pre-clamp value estimate.
  struct Outputs {
    std::vector<double> logits;
    double value = 0;
  };

  std::vector<Outputs> forward(std::span<const FeatureImage> images) const {
    const int batch = static_cast<int>(images.size());
    std::vector<double> x(static_cast<std::size_t>(batch) * input_size());
    for (int b = 0; b < batch; ++b) {
      check_image(images[b]);
      std::copy(images[b].data.begin(), images[b].data.end(),
                x.begin() + static_cast<std::ptrdiff_t>(b) * input_size());
    }
    return forward_raw(x, batch);
  }

  Prediction predict(const FeatureImage& image) const {
    return predict_batch(std::span<const FeatureImage>(&image, 1)).front();
  }

  std::vector<Prediction> predict_batch(std::span<const FeatureImage> images) const {
    if (cfg_.head != Head::kPolicyValue) throw std::logic_error("net: predict needs a policy/value head");
    auto outs = forward(images);
    std::vector<Prediction> preds(outs.size());
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const int n = cfg_.policy_size;
      preds[i].P.resize(n);
      detail::log_softmax(outs[i].logits.data(), n, preds[i].P.data());
      for (auto& p : preds[i].P) p = std::exp(p);
      preds[i].value = std::clamp(outs[i].value, -1.0, 1.0);
    }
    return preds;
  }

  std::vector<double> q_values(const FeatureImage& image) const {
    if (cfg_.head != Head::kQValues) throw std::logic_error("net: q_values needs a Q head");
    return forward(std::span<const FeatureImage>(&image, 1)).front().logits;
  }

  // Training-mode loss and gradient (batch statistics in every batch norm).
  // The policy/value loss is mean_b[(R - v)^2 - pi . log P] + l2 * |theta|^2;
  // the Q loss is mean_b (R - Q(s, a))^2 + l2 * |theta|^2.
  // `batch_stats`, when given, receives the batch mean/var per buffer slot.
  LossParts loss_and_gradient(const Batch& batch, std::vector<double>* grad,
                              std::vector<double>* batch_stats = nullptr) const;

  LossParts loss(const Batch& batch) const { return loss_and_gradient(batch, nullptr); }

  // Mutation is only available to the trainer-side owner of a working copy.
  std::span<double> mutable_parameters() { return params_; }
  std::span<double> mutable_buffers() { return buffers_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  void save(const std::string& path) const;
  static Network load(const std::string& path, const NetworkConfig* expected = nullptr);

 private:
  explicit Network(const NetworkConfig& cfg)
      : cfg_(cfg), layout_(cfg), params_(layout_.params, 0.0), buffers_(layout_.buffers, 0.0) {}

  void check_image(const FeatureImage& img) const {
    if (img.rows != cfg_.rows || img.cols != cfg_.cols ||
        static_cast<int>(img.data.size()) != input_size())
      throw std::invalid_argument("net: image is " + std::to_string(img.rows) + "x" +
                                  std::to_string(img.cols) + ", network expects " +
                                  std::to_string(cfg_.rows) + "x" + std::to_string(cfg_.cols));
  }

  std::vector<Outputs> forward_raw(const std::vector<double>& x, int batch) const;

  NetworkConfig cfg_;
  detail::Layout layout_;
  std::vector<double> params_;
  std::vector<double> buffers_;
  std::uint64_t version_ = 0;
};

using NetworkSnapshot = std::shared_ptr<const Network>;

inline NetworkSnapshot init_random(const NetworkConfig& cfg, std::uint64_t seed) {
  return std::make_shared<const Network>(Network::init_random(cfg, seed));
}

inline std::vector<Network::Outputs> Network::forward_raw(const std::vector<double>& x,
                                                          int batch) const {
  using detail::Shape;
  const int h = cfg_.rows, w = cfg_.cols;
  const double* p = params_.data();
  const double* buf = buffers_.data();
  std::vector<double> act = x, next;
  int channels = 3;
  for (const auto& s : layout_.trunk) {
    const Shape shape{batch, channels, h, w};
    next.resize(static_cast<std::size_t>(batch) * s.out * h * w);
    detail::conv_forward(act.data(), shape, p + s.w, s.out, s.k, next.data());
    detail::bn_relu_infer(next, Shape{batch, s.out, h, w}, p + s.gamma, p + s.beta, buf + s.mean,
                          buf + s.var);
    act.swap(next);
    channels = s.out;
  }
  const Shape trunk_shape{batch, channels, h, w};
  std::vector<Outputs> outs(batch);

  const auto& pc = layout_.policy_conv;
  std::vector<double> ph(static_cast<std::size_t>(batch) * pc.out * h * w);
  detail::conv_forward(act.data(), trunk_shape, p + pc.w, pc.out, 1, ph.data());
  detail::bn_relu_infer(ph, Shape{batch, pc.out, h, w}, p + pc.gamma, p + pc.beta, buf + pc.mean,
                        buf + pc.var);
  std::vector<double> logits(static_cast<std::size_t>(batch) * cfg_.policy_size);
  detail::dense_forward(ph.data(), batch, layout_.policy_fc, p, logits.data());
  for (int b = 0; b < batch; ++b)
    outs[b].logits.assign(logits.begin() + static_cast<std::ptrdiff_t>(b) * cfg_.policy_size,
                          logits.begin() + static_cast<std::ptrdiff_t>(b + 1) * cfg_.policy_size);

  if (cfg_.head == Head::kPolicyValue) {
    const auto& vc = layout_.value_conv;
    std::vector<double> vh(static_cast<std::size_t>(batch) * h * w);
    detail::conv_forward(act.data(), trunk_shape, p + vc.w, 1, 1, vh.data());
    detail::bn_relu_infer(vh, Shape{batch, 1, h, w}, p + vc.gamma, p + vc.beta, buf + vc.mean,
                          buf + vc.var);
    std::vector<double> hidden(static_cast<std::size_t>(batch) * cfg_.value_hidden);
    detail::dense_forward(vh.data(), batch, layout_.value_fc1, p, hidden.data());
    for (auto& v : hidden) v = v > 0 ? v : 0.0;
    std::vector<double> v(batch);
    detail::dense_forward(hidden.data(), batch, layout_.value_fc2, p, v.data());
    for (int b = 0; b < batch; ++b) outs[b].value = std::tanh(v[b]);
  }
  return outs;
}

inline LossParts Network::loss_and_gradient(const Batch& batch, std::vector<double>* grad,
                                            std::vector<double>* batch_stats) const {
  using detail::Shape;
  const int nb = static_cast<int>(batch.size());
  if (nb < 1) throw std::invalid_argument("net: empty batch");
  const int h = cfg_.rows, w = cfg_.cols, px = h * w;
  const double* p = params_.data();
  const bool pv = cfg_.head == Head::kPolicyValue;

  std::vector<double> x(static_cast<std::size_t>(nb) * input_size());
  for (int b = 0; b < nb; ++b) {
    const auto& ex = batch[b];
    if (static_cast<int>(ex.features.size()) != input_size())
      throw std::invalid_argument("net: example feature size mismatch");
    if (pv && static_cast<int>(ex.pi.size()) != cfg_.policy_size)
      throw std::invalid_argument("net: example policy size mismatch");
    if (!pv && (ex.action < 0 || ex.action >= cfg_.policy_size))
      throw std::invalid_argument("net: example action out of range");
    std::copy(ex.features.begin(), ex.features.end(),
              x.begin() + static_cast<std::ptrdiff_t>(b) * input_size());
  }
  if (batch_stats) batch_stats->assign(buffers_.size(), 0.0);
  auto record = [&](const detail::ConvSlot& s, const detail::BnCache& c) {
    if (!batch_stats) return;
    for (int i = 0; i < s.out; ++i) {
      (*batch_stats)[s.mean + i] = c.mean[i];
      (*batch_stats)[s.var + i] = c.var[i];
    }
  };

  // Forward with caches.
  const std::size_t depth = layout_.trunk.size();
  std::vector<std::vector<double>> acts(depth + 1), pres(depth);
  std::vector<detail::BnCache> caches(depth);
  acts[0] = x;
  int channels = 3;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& s = layout_.trunk[l];
    acts[l + 1].resize(static_cast<std::size_t>(nb) * s.out * px);
    detail::conv_forward(acts[l].data(), Shape{nb, channels, h, w}, p + s.w, s.out, s.k,
                         acts[l + 1].data());
    detail::bn_relu_train(acts[l + 1], Shape{nb, s.out, h, w}, p + s.gamma, p + s.beta, caches[l],
                          pres[l]);
    record(s, caches[l]);
    channels = s.out;
  }
  const std::vector<double>& top = acts[depth];
  const Shape trunk_shape{nb, channels, h, w};

  const auto& pc = layout_.policy_conv;
  std::vector<double> ph(static_cast<std::size_t>(nb) * pc.out * px), ph_pre;
  detail::BnCache pcache;
  detail::conv_forward(top.data(), trunk_shape, p + pc.w, pc.out, 1, ph.data());
  detail::bn_relu_train(ph, Shape{nb, pc.out, h, w}, p + pc.gamma, p + pc.beta, pcache, ph_pre);
  record(pc, pcache);
  const int na = cfg_.policy_size;
  std::vector<double> logits(static_cast<std::size_t>(nb) * na);
  detail::dense_forward(ph.data(), nb, layout_.policy_fc, p, logits.data());

  std::vector<double> vh, vh_pre, hidden, vout;
  detail::BnCache vcache;
  const auto& vc = layout_.value_conv;
  if (pv) {
    vh.resize(static_cast<std::size_t>(nb) * px);
    detail::conv_forward(top.data(), trunk_shape, p + vc.w, 1, 1, vh.data());
    detail::bn_relu_train(vh, Shape{nb, 1, h, w}, p + vc.gamma, p + vc.beta, vcache, vh_pre);
    record(vc, vcache);
    hidden.resize(static_cast<std::size_t>(nb) * cfg_.value_hidden);
    detail::dense_forward(vh.data(), nb, layout_.value_fc1, p, hidden.data());
    for (auto& v : hidden) v = v > 0 ? v : 0.0;
    vout.resize(nb);
    detail::dense_forward(hidden.data(), nb, layout_.value_fc2, p, vout.data());
    for (auto& v : vout) v = std::tanh(v);
  }

  // Loss and head gradients.
  LossParts parts;
  std::vector<double> dlogits(static_cast<std::size_t>(nb) * na, 0.0), dv(pv ? nb : 0, 0.0);
  std::vector<double> logp(na);
  for (int b = 0; b < nb; ++b) {
    const double* z = logits.data() + static_cast<std::size_t>(b) * na;
    double* dz = dlogits.data() + static_cast<std::size_t>(b) * na;
    const auto& ex = batch[b];
    if (pv) {
      detail::log_softmax(z, na, logp.data());
      double ce = 0, pi_sum = 0;
      for (int a = 0; a < na; ++a) {
        ce -= ex.pi[a] * logp[a];
        pi_sum += ex.pi[a];
      }
      parts.policy += ce / nb;
      for (int a = 0; a < na; ++a) dz[a] = (pi_sum * std::exp(logp[a]) - ex.pi[a]) / nb;
      const double err = vout[b] - ex.reward;
      parts.value += err * err / nb;
      dv[b] = 2.0 * err / nb * (1.0 - vout[b] * vout[b]);
    } else {
      const double err = z[ex.action] - ex.reward;
      parts.value += err * err / nb;
      dz[ex.action] = 2.0 * err / nb;
    }
  }
  double sq = 0;
  for (double v : params_) sq += v * v;
  parts.l2 = cfg_.l2 * sq;
  parts.total = parts.value + parts.policy + parts.l2;
  if (!std::isfinite(parts.total))
    throw NumericalError("net: non-finite loss (value " + std::to_string(parts.value) +
                         ", policy " + std::to_string(parts.policy) + ", l2 " +
                         std::to_string(parts.l2) + ")");
  if (!grad) return parts;

  // Backward.
  grad->assign(params_.size(), 0.0);
  double* g = grad->data();
  std::vector<double> dtop(top.size(), 0.0), tmp(top.size());

  std::vector<double> dph(ph.size());
  detail::dense_backward(ph.data(), nb, layout_.policy_fc, p, dlogits.data(), g, dph.data());
  detail::bn_relu_backward(dph, Shape{nb, pc.out, h, w}, p + pc.gamma, pcache, ph_pre, g + pc.gamma,
                           g + pc.beta);
  detail::conv_backward(top.data(), trunk_shape, p + pc.w, pc.out, 1, dph.data(), g + pc.w,
                        tmp.data());
  for (std::size_t i = 0; i < dtop.size(); ++i) dtop[i] += tmp[i];

  if (pv) {
    std::vector<double> dhidden(hidden.size());
    detail::dense_backward(hidden.data(), nb, layout_.value_fc2, p, dv.data(), g, dhidden.data());
    for (std::size_t i = 0; i < hidden.size(); ++i)
      if (hidden[i] <= 0) dhidden[i] = 0.0;
    std::vector<double> dvh(vh.size());
    detail::dense_backward(vh.data(), nb, layout_.value_fc1, p, dhidden.data(), g, dvh.data());
    detail::bn_relu_backward(dvh, Shape{nb, 1, h, w}, p + vc.gamma, vcache, vh_pre, g + vc.gamma,
                             g + vc.beta);
    detail::conv_backward(top.data(), trunk_shape, p + vc.w, 1, 1, dvh.data(), g + vc.w,
                          tmp.data());
    for (std::size_t i = 0; i < dtop.size(); ++i) dtop[i] += tmp[i];
  }

  std::vector<double> dcur = std::move(dtop), dprev;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& s = layout_.trunk[l];
    const int in_c = l == 0 ? 3 : layout_.trunk[l - 1].out;
    detail::bn_relu_backward(dcur, Shape{nb, s.out, h, w}, p + s.gamma, caches[l], pres[l],
                             g + s.gamma, g + s.beta);
    dprev.resize(acts[l].size());
    detail::conv_backward(acts[l].data(), Shape{nb, in_c, h, w}, p + s.w, s.out, s.k, dcur.data(),
                          g + s.w, l == 0 ? nullptr : dprev.data());
    dcur.swap(dprev);
  }
  for (std::size_t i = 0; i < params_.size(); ++i) g[i] += 2.0 * cfg_.l2 * params_[i];
  return parts;
}

// --- Training -------------------------------------------------------------------

// Owns the single mutable working copy of the parameters and publishes
// immutable snapshots. Plain SGD unless `momentum` > 0.
class Learner {
 public:
  explicit Learner(const Network& start) : net_(start), velocity_(start.parameter_count(), 0.0) {}

  LossParts step(const Batch& batch) {
    std::vector<double> grad, stats;
    const LossParts parts = net_.loss_and_gradient(batch, &grad, &stats);
    for (double v : grad)
      if (!std::isfinite(v)) throw NumericalError("net: non-finite gradient");
    const auto& cfg = net_.config();
    auto params = net_.mutable_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (cfg.momentum > 0) {
        velocity_[i] = cfg.momentum * velocity_[i] + grad[i];
        params[i] -= cfg.learning_rate * velocity_[i];
      } else {
        params[i] -= cfg.learning_rate * grad[i];
      }
    }
    auto buf = net_.mutable_buffers();
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = cfg.bn_decay * buf[i] + (1.0 - cfg.bn_decay) * stats[i];
    net_.bump_version();
    return parts;
  }

  NetworkSnapshot publish() const { return std::make_shared<const Network>(net_); }
  const Network& working() const { return net_; }
  const std::vector<double>& velocity() const { return velocity_; }
  void restore_velocity(std::vector<double> v) {
    if (v.size() != velocity_.size()) throw std::invalid_argument("net: velocity size mismatch");
    velocity_ = std::move(v);
  }

 private:
  Network net_;
  std::vector<double> velocity_;
};

// One SGD step from a published snapshot; the input snapshot is untouched.
inline NetworkSnapshot train_step(const NetworkSnapshot& snap, const Batch& batch,
                                  LossParts* loss = nullptr) {
  Learner learner(*snap);
  const LossParts parts = learner.step(batch);
  if (loss) *loss = parts;
  return learner.publish();
}

// --- Checkpoint container ----------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "SEQRLNET";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_config(ByteWriter& w, const NetworkConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.rows));
  w.u32(static_cast<std::uint32_t>(c.cols));
  w.u32(static_cast<std::uint32_t>(c.conv_layers));
  w.u32(static_cast<std::uint32_t>(c.filters));
  w.u32(static_cast<std::uint32_t>(c.kernel));
  w.u32(static_cast<std::uint32_t>(c.policy_size));
  w.u32(static_cast<std::uint32_t>(c.value_hidden));
  w.u32(static_cast<std::uint32_t>(c.head));
  w.f64(c.l2);
  w.f64(c.learning_rate);
  w.f64(c.momentum);
  w.f64(c.bn_decay);
}

inline NetworkConfig read_config(ByteReader& r) {
  NetworkConfig c;
  c.rows = static_cast<int>(r.u32());
  c.cols = static_cast<int>(r.u32());
  c.conv_layers = static_cast<int>(r.u32());
  c.filters = static_cast<int>(r.u32());
  c.kernel = static_cast<int>(r.u32());
  c.policy_size = static_cast<int>(r.u32());
  c.value_hidden = static_cast<int>(r.u32());
  c.head = static_cast<Head>(r.u32());
  c.l2 = r.f64();
  c.learning_rate = r.f64();
  c.momentum = r.f64();
  c.bn_decay = r.f64();
  return c;
}

inline void Network::save(const std::string& path) const {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  write_config(w, cfg_);
  w.u64(version_);
  w.f64s(params_);
  w.f64s(buffers_);
  w.save(path);
}

inline Network Network::load(const std::string& path, const NetworkConfig* expected) {
  ByteReader r = ByteReader::load(path);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
    throw FormatError(path + ": not a network checkpoint");
  const std::uint32_t ver = r.u32();
  if (ver != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(ver));
  const NetworkConfig cfg = read_config(r);
  if (expected && !(cfg == *expected))
    throw ConfigMismatch(path + ": checkpoint config does not match the requested network");
  cfg.validate();
  Network n(cfg);
  n.version_ = r.u64();
  auto params = r.f64s();
  auto buffers = r.f64s();
  if (params.size() != n.params_.size() || buffers.size() != n.buffers_.size())
    throw FormatError(path + ": parameter count does not match config");
  if (!r.at_end()) throw FormatError(path + ": trailing bytes");
  n.params_ = std::move(params);
  n.buffers_ = std::move(buffers);
  return n;
}

}  // namespace seqrl::net
