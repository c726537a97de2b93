#pragma once

// Small layer zoo: named parameter registry plus the building blocks the
// encoder composes (linear, convolution wrappers, batch/layer norm,
// multi-head self-attention, transformer layer, dropout).

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "eegdwt/autograd.hpp"
#include "eegdwt/errors.hpp"
#include "eegdwt/rng.hpp"
#include "eegdwt/tensor.hpp"

namespace eegdwt::nn {

// Ordered, named registry of learnable parameters and non-learnable buffers
// (batch-norm running stats). Registration order is fixed by construction
// order, which keeps the optimizer and checkpoints deterministic.
class ParamStore {
 public:
  ag::Var param(const std::string& name, Tensor init) {
    check_fresh(name);
    ag::Var v = ag::parameter(std::move(init));
    params_.emplace_back(name, v);
    return v;
  }

  std::shared_ptr<Tensor> buffer(const std::string& name, Tensor init) {
    check_fresh(name);
    auto t = std::make_shared<Tensor>(std::move(init));
    buffers_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, ag::Var>>& params() const {
    return params_;
  }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& buffers()
      const {
    return buffers_;
  }

  ag::Var find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw LookupError(detail::str("no parameter named '", name, "'"));
  }

  bool has(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return true;
    for (const auto& [n, t] : buffers_)
      if (n == name) return true;
    return false;
  }

  // Overwrites a parameter or buffer value; shape must match.
  void set(const std::string& name, const Tensor& value) {
    for (auto& [n, v] : params_) {
      if (n != name) continue;
      if (v.value().shape() != value.shape()) {
        throw ArgumentError(detail::str("parameter '", name, "' has shape ",
                                        shape_str(v.value().shape()),
                                        ", refusing ", shape_str(value.shape())));
      }
      v.mutable_value() = value;
      return;
    }
    for (auto& [n, t] : buffers_) {
      if (n != name) continue;
      if (t->shape() != value.shape()) {
        throw ArgumentError(detail::str("buffer '", name, "' has shape ",
                                        shape_str(t->shape()), ", refusing ",
                                        shape_str(value.shape())));
      }
      *t = value;
      return;
    }
    throw LookupError(detail::str("no parameter or buffer named '", name, "'"));
  }

  void zero_grads() {
    for (auto& [n, v] : params_) v.zero_grad();
  }

  std::int64_t total_parameters() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
  }

  // All state (params then buffers) as value copies, for best-epoch snapshots.
  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size() + buffers_.size());
    for (const auto& [n, v] : params_) out.push_back(v.value());
    for (const auto& [n, t] : buffers_) out.push_back(*t);
    return out;
  }

  void restore(const std::vector<Tensor>& snap) {
    if (snap.size() != params_.size() + buffers_.size())
      throw ArgumentError("snapshot size mismatch");
    std::size_t i = 0;
    for (auto& [n, v] : params_) v.mutable_value() = snap[i++];
    for (auto& [n, t] : buffers_) *t = snap[i++];
  }

 private:
  void check_fresh(const std::string& name) {
    if (has(name))
      throw ArgumentError(detail::str("duplicate registration: '", name, "'"));
  }

  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
};

namespace init {

// U(-s, s) with s = 1/sqrt(fan_in); biases start at zero.
inline Tensor uniform_fan_in(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::rand_uniform(std::move(shape), rng, -s, s);
}

}  // namespace init

// ---------------------------------------------------------------------------

struct Linear {
  ag::Var w;  // (in, out)
  ag::Var b;  // (out) or undefined

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, std::int64_t in,
         std::int64_t out, Rng& rng, bool bias = true) {
    w = ps.param(name + ".w", init::uniform_fan_in({in, out}, in, rng));
    if (bias) b = ps.param(name + ".b", Tensor::zeros({out}));
  }

  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

// Per-channel temporal filter bank: x (B,C,L) -> (B,C,L'), weight (C,K).
struct DepthwiseConv1d {
  ag::Var w, b;
  std::int64_t stride = 1, pad = 0;

  DepthwiseConv1d() = default;
  DepthwiseConv1d(ParamStore& ps, const std::string& name, std::int64_t channels,
                  std::int64_t kernel, Rng& rng, std::int64_t stride_ = 1,
                  std::int64_t pad_ = 0)
      : stride(stride_), pad(pad_) {
    w = ps.param(name + ".w", init::uniform_fan_in({channels, kernel}, kernel, rng));
    b = ps.param(name + ".b", Tensor::zeros({channels}));
  }

  ag::Var operator()(const ag::Var& x) const {
    return ag::conv1d_depthwise(x, w, b, stride, pad);
  }
};

// 1-wide convolution along the last axis = channel-mixing affine map applied
// at every position. weight (Cout,Cin,1).
struct PointwiseConv1d {
  ag::Var w, b;

  PointwiseConv1d() = default;
  PointwiseConv1d(ParamStore& ps, const std::string& name, std::int64_t in,
                  std::int64_t out, Rng& rng) {
    w = ps.param(name + ".w", init::uniform_fan_in({out, in, 1}, in, rng));
    b = ps.param(name + ".b", Tensor::zeros({out}));
  }

  ag::Var operator()(const ag::Var& x) const { return ag::conv1d(x, w, b, 1, 0); }
};

// Shared length-k filter over the electrode (channel) axis, same padding.
struct ChannelConv {
  ag::Var w, b;

  ChannelConv() = default;
  ChannelConv(ParamStore& ps, const std::string& name, std::int64_t kernel,
              Rng& rng) {
    w = ps.param(name + ".w", init::uniform_fan_in({kernel}, kernel, rng));
    b = ps.param(name + ".b", Tensor::zeros({1}));
  }

  ag::Var operator()(const ag::Var& x) const {
    return ag::conv_channel_axis(x, w, b);
  }
};

// BatchNorm over the channel axis of (B,C,L): statistics across (B,L).
// Training mode uses batch statistics and updates running estimates;
// inference mode is a pure function of the stored state.
struct BatchNorm1d {
  ag::Var gamma, beta;                       // (1,C,1)
  std::shared_ptr<Tensor> running_mean, running_var;  // (1,C,1)
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm1d() = default;
  BatchNorm1d(ParamStore& ps, const std::string& name, std::int64_t channels) {
    gamma = ps.param(name + ".gamma", Tensor::ones({1, channels, 1}));
    beta = ps.param(name + ".beta", Tensor::zeros({1, channels, 1}));
    running_mean = ps.buffer(name + ".running_mean", Tensor::zeros({1, channels, 1}));
    running_var = ps.buffer(name + ".running_var", Tensor::ones({1, channels, 1}));
  }

  ag::Var operator()(const ag::Var& x, bool training) const {
    if (x.rank() != 3) throw ArgumentError("BatchNorm1d expects (B,C,L)");
    if (training) {
      ag::Var mu = ag::mean_axis(ag::mean_axis(x, 0), 2);
      ag::Var xc = ag::sub(x, mu);
      ag::Var var = ag::mean_axis(ag::mean_axis(ag::mul(xc, xc), 0), 2);
      // running stats live outside the graph
      *running_mean = eegdwt::add(eegdwt::scale(*running_mean, 1.0 - momentum),
                                  eegdwt::scale(mu.value(), momentum));
      *running_var = eegdwt::add(eegdwt::scale(*running_var, 1.0 - momentum),
                                 eegdwt::scale(var.value(), momentum));
      ag::Var xhat = ag::div(xc, ag::sqrt_(ag::add_scalar(var, eps)));
      return ag::add(ag::mul(xhat, gamma), beta);
    }
    Tensor denom = *running_var;
    for (auto& v : denom.raw()) v = std::sqrt(v + eps);
    ag::Var xhat = ag::div(ag::sub(x, ag::constant(*running_mean)),
                           ag::constant(std::move(denom)));
    return ag::add(ag::mul(xhat, gamma), beta);
  }
};

// LayerNorm over the last axis.
struct LayerNorm {
  ag::Var gamma, beta;  // (F)
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, std::int64_t width) {
    gamma = ps.param(name + ".gamma", Tensor::ones({width}));
    beta = ps.param(name + ".beta", Tensor::zeros({width}));
  }

  ag::Var operator()(const ag::Var& x) const {
    ag::Var mu = ag::mean_axis(x, -1);
    ag::Var xc = ag::sub(x, mu);
    ag::Var var = ag::mean_axis(ag::mul(xc, xc), -1);
    ag::Var xhat = ag::div(xc, ag::sqrt_(ag::add_scalar(var, eps)));
    return ag::add(ag::mul(xhat, gamma), beta);
  }
};

// ---------------------------------------------------------------------------

struct MultiHeadSelfAttention {
  Linear wq, wk, wv, wo;
  std::int64_t heads = 1;
  std::int64_t width = 0;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore& ps, const std::string& name,
                         std::int64_t width_, std::int64_t heads_, Rng& rng)
      : heads(heads_), width(width_) {
    if (heads < 1 || width % heads != 0) {
      throw ConfigError(detail::str("attention width ", width,
                                    " not divisible by heads ", heads));
    }
    wq = Linear(ps, name + ".wq", width, width, rng);
    wk = Linear(ps, name + ".wk", width, width, rng);
    wv = Linear(ps, name + ".wv", width, width, rng);
    wo = Linear(ps, name + ".wo", width, width, rng);
  }

  // x (B,T,F); returns (output (B,T,F), attention (B,H,T,T)).
  std::pair<ag::Var, ag::Var> forward_with_weights(const ag::Var& x) const {
    const std::int64_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
    if (F != width) {
      throw ArgumentError(detail::str("attention expects width ", width,
                                      ", got ", F));
    }
    const std::int64_t dh = width / heads;
    auto split = [&](const ag::Var& v) {
      return ag::permute(ag::reshape(v, {B, T, heads, dh}), {0, 2, 1, 3});
    };
    ag::Var q = split(wq(x));
    ag::Var k = split(wk(x));
    ag::Var v = split(wv(x));
    ag::Var scores = ag::bmm(q, ag::permute(k, {0, 1, 3, 2}));
    scores = ag::scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
    ag::Var attn = ag::softmax_last(scores);          // (B,H,T,T)
    ag::Var ctx = ag::bmm(attn, v);                   // (B,H,T,dh)
    ctx = ag::reshape(ag::permute(ctx, {0, 2, 1, 3}), {B, T, width});
    return {wo(ctx), attn};
  }

  ag::Var operator()(const ag::Var& x) const {
    return forward_with_weights(x).first;
  }
};

// Post-norm transformer encoder layer: x = LN(x + MHSA(x)); x = LN(x + FFN(x)).
struct TransformerLayer {
  MultiHeadSelfAttention attn;
  LayerNorm ln1, ln2;
  Linear ff1, ff2;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, const std::string& name, std::int64_t width,
                   std::int64_t heads, std::int64_t ff_width, Rng& rng) {
    attn = MultiHeadSelfAttention(ps, name + ".attn", width, heads, rng);
    ln1 = LayerNorm(ps, name + ".ln1", width);
    ln2 = LayerNorm(ps, name + ".ln2", width);
    ff1 = Linear(ps, name + ".ff1", width, ff_width, rng);
    ff2 = Linear(ps, name + ".ff2", ff_width, width, rng);
  }

  ag::Var operator()(const ag::Var& x) const {
    ag::Var h = ln1(ag::add(x, attn(x)));
    ag::Var f = ff2(ag::relu(ff1(h)));
    return ln2(ag::add(h, f));
  }
};

// Inverted dropout; identity when not training or p == 0.
inline ag::Var dropout(const ag::Var& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ArgumentError("dropout probability must be < 1");
  Tensor mask(x.shape());
  const double keep = 1.0 - p;
  for (auto& v : mask.raw()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return ag::mul(x, ag::constant(std::move(mask)));
}

}  // namespace eegdwt::nn
