#pragma once

// Channel-wise single-level Haar (db1) DWT, its exact inverse, and the
// feature-fusion stage that merges reconstructed features with the original
// signal. Plain-tensor and autograd paths are both provided; the plain path
// doubles as the reference the differentiable one is tested against.
//
// Conventions, locked by the tests:
//   cA_i = (x_{2i} + x_{2i+1}) / sqrt(2)
//   cD_i = (x_{2i} - x_{2i+1}) / sqrt(2)
// Filters are length-2 stride-2, so even T needs no boundary handling.

#include <cmath>
#include <cstdint>
#include <utility>

#include "eegdwt/autograd.hpp"
#include "eegdwt/errors.hpp"
#include "eegdwt/nn.hpp"
#include "eegdwt/tensor.hpp"

namespace eegdwt::wavelet {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

// Approximation (low-frequency) and detail (high-frequency) coefficients of
// a batch of channels, each (B, C, T/2).
struct WaveletPair {
  Tensor approx;
  Tensor detail;

  void validate() const {
    if (!approx.same_shape(detail)) {
      throw ArgumentError(eegdwt::detail::str("wavelet pair shape mismatch: ",
                                              shape_str(approx.shape()), " vs ",
                                              shape_str(detail.shape())));
    }
    if (approx.rank() != 3) throw ArgumentError("wavelet pair must be (B,C,T/2)");
  }
};

namespace detail_ {

inline void require_even_time(const Tensor& x) {
  if (x.rank() != 3) throw ArgumentError("dwt expects a (B,C,T) tensor");
  if (x.dim(2) < 2 || x.dim(2) % 2 != 0) {
    throw ArgumentError(detail::str("dwt requires even T >= 2, got T=", x.dim(2),
                                    "; pad first (datasets::pad_to_even)"));
  }
}

}  // namespace detail_

inline WaveletPair dwt_forward(const Tensor& x) {
  detail_::require_even_time(x);
  if (!x.all_finite()) throw ArgumentError("dwt input contains non-finite values");
  const std::int64_t rows = x.dim(0) * x.dim(1);
  const std::int64_t T = x.dim(2), H = T / 2;
  WaveletPair out{Tensor({x.dim(0), x.dim(1), H}), Tensor({x.dim(0), x.dim(1), H})};
  const double* px = x.data();
  double* pa = out.approx.data();
  double* pd = out.detail.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * T;
    for (std::int64_t i = 0; i < H; ++i) {
      pa[r * H + i] = (xr[2 * i] + xr[2 * i + 1]) * kInvSqrt2;
      pd[r * H + i] = (xr[2 * i] - xr[2 * i + 1]) * kInvSqrt2;
    }
  }
  return out;
}

inline Tensor dwt_inverse(const WaveletPair& w) {
  w.validate();
  const std::int64_t rows = w.approx.dim(0) * w.approx.dim(1);
  const std::int64_t H = w.approx.dim(2);
  Tensor x({w.approx.dim(0), w.approx.dim(1), 2 * H});
  const double* pa = w.approx.data();
  const double* pd = w.detail.data();
  double* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* xr = px + r * 2 * H;
    for (std::int64_t i = 0; i < H; ++i) {
      xr[2 * i] = (pa[r * H + i] + pd[r * H + i]) * kInvSqrt2;
      xr[2 * i + 1] = (pa[r * H + i] - pd[r * H + i]) * kInvSqrt2;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// differentiable path, composed from autograd primitives

// Returns {approx, detail}, each (B,C,T/2).
inline std::pair<ag::Var, ag::Var> dwt_forward_var(const ag::Var& x) {
  detail_::require_even_time(x.value());
  if (!x.value().all_finite())
    throw ArgumentError("dwt input contains non-finite values");
  const std::int64_t C = x.dim(1);
  Tensor lo({C, 2});
  Tensor hi({C, 2});
  for (std::int64_t c = 0; c < C; ++c) {
    lo[c * 2] = kInvSqrt2;
    lo[c * 2 + 1] = kInvSqrt2;
    hi[c * 2] = kInvSqrt2;
    hi[c * 2 + 1] = -kInvSqrt2;
  }
  ag::Var approx = ag::conv1d_depthwise(x, ag::constant(std::move(lo)), ag::Var(), 2, 0);
  ag::Var det = ag::conv1d_depthwise(x, ag::constant(std::move(hi)), ag::Var(), 2, 0);
  return {approx, det};
}

// Exact synthesis: x_{2i} = (cA_i + cD_i)/sqrt(2), x_{2i+1} = (cA_i - cD_i)/sqrt(2).
inline ag::Var dwt_inverse_var(const ag::Var& approx, const ag::Var& det) {
  if (approx.shape() != det.shape()) {
    throw ArgumentError(eegdwt::detail::str("dwt_inverse shape mismatch: ",
                                            shape_str(approx.shape()), " vs ",
                                            shape_str(det.shape())));
  }
  const std::int64_t B = approx.dim(0), C = approx.dim(1), H = approx.dim(2);
  ag::Var even = ag::scale(ag::add(approx, det), kInvSqrt2);
  ag::Var odd = ag::scale(ag::sub(approx, det), kInvSqrt2);
  // interleave: stack as (B,C,H,2) then flatten the trailing pair
  ag::Var e4 = ag::reshape(even, {B, C, H, 1});
  ag::Var o4 = ag::reshape(odd, {B, C, H, 1});
  return ag::reshape(ag::concat({e4, o4}, 3), {B, C, 2 * H});
}

// ---------------------------------------------------------------------------
// feature fusion (learned): Conv(W_f [F ; F_reconstructed] + b_f)
//
// Realized as channel concatenation, a per-position affine channel map
// (2C -> 2C), then a 1-wide convolution along time back down to C channels.

struct FeatureFusion {
  nn::PointwiseConv1d affine;  // 2C -> 2C, the W_f / b_f map
  nn::PointwiseConv1d proj;    // 2C -> C

  FeatureFusion() = default;
  FeatureFusion(nn::ParamStore& ps, const std::string& name,
                std::int64_t channels, Rng& rng) {
    affine = nn::PointwiseConv1d(ps, name + ".affine", 2 * channels,
                                 2 * channels, rng);
    proj = nn::PointwiseConv1d(ps, name + ".proj", 2 * channels, channels, rng);
  }

  ag::Var operator()(const ag::Var& original, const ag::Var& reconstructed) const {
    if (original.shape() != reconstructed.shape()) {
      throw ArgumentError(detail::str("fuse_features shape mismatch: ",
                                      shape_str(original.shape()), " vs ",
                                      shape_str(reconstructed.shape())));
    }
    ag::Var cat = ag::concat({original, reconstructed}, 1);  // (B,2C,T)
    return proj(affine(cat));                                // (B,C,T)
  }
};

}  // namespace eegdwt::wavelet
