#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "uwformer/params.hpp"
#include "uwformer/tensor.hpp"
#include "uwformer/wavelet.hpp"

namespace uwf {

// ---------------------------------------------------------------------------
// Parameter declaration. Every block reads its tensors from a ParamStore under
// a name prefix; the declare_* walkers below are the single source of truth
// for names, shapes and initialization, shared by builders, tests and the
// checkpoint schema.
// ---------------------------------------------------------------------------

enum class Init {
  kHe,    // fan-in-scaled normal for conv weights
  kZero,  // biases, shift vectors, and identity-start projections
  kOne,   // scale vectors
};

struct NfaConfig {
  i64 channels = 0;
  i64 heads = 1;

  i64 head_dim() const { return 4 * channels / heads; }

  void validate() const {
    if (channels <= 0 || heads <= 0 || (4 * channels) % heads != 0) {
      throw ConfigError("attention config: heads must be positive and divide 4*channels");
    }
  }
};

inline i64 msfn_hidden(i64 channels, double expansion) {
  const i64 ce = static_cast<i64>(std::llround(expansion * static_cast<double>(channels) / 2.0));
  return ce > 0 ? ce : 1;
}

template <typename F>
void declare_conv(const std::string& name, i64 cout, i64 cin, i64 k, F&& fn, Init winit = Init::kHe) {
  fn(name + ".w", std::vector<i64>{cout, cin, k, k}, winit);
  fn(name + ".b", std::vector<i64>{cout}, Init::kZero);
}

template <typename F>
void declare_dwconv(const std::string& name, i64 c, i64 k, F&& fn) {
  fn(name + ".w", std::vector<i64>{c, 1, k, k}, Init::kHe);
  fn(name + ".b", std::vector<i64>{c}, Init::kZero);
}

template <typename F>
void declare_nfa_params(const NfaConfig& cfg, const std::string& prefix, F&& fn) {
  const i64 c = cfg.channels;
  declare_conv(prefix + "q_proj", 4 * c, c, 1, fn);
  declare_dwconv(prefix + "q_dw", 4 * c, 3, fn);
  declare_conv(prefix + "k_proj", 16 * c, 4 * c, 1, fn);
  declare_dwconv(prefix + "k_dw", 16 * c, 3, fn);
  declare_conv(prefix + "v_proj", 16 * c, 4 * c, 1, fn);
  declare_dwconv(prefix + "v_dw", 16 * c, 3, fn);
  declare_conv(prefix + "out_proj", c, 5 * c, 1, fn);
}

template <typename F>
void declare_msfn_params(i64 channels, double expansion, const std::string& prefix, F&& fn) {
  const i64 ce = msfn_hidden(channels, expansion);
  declare_conv(prefix + "expand", 4 * ce, channels, 1, fn);
  declare_dwconv(prefix + "dw3_ll", ce, 3, fn);
  declare_dwconv(prefix + "dw5_gl", ce, 5, fn);
  declare_dwconv(prefix + "dw3_lg", ce, 3, fn);
  declare_dwconv(prefix + "dw5_gg", ce, 5, fn);
  declare_dwconv(prefix + "fuse_local", 2 * ce, 3, fn);
  declare_dwconv(prefix + "fuse_global", 2 * ce, 3, fn);
  declare_conv(prefix + "out_proj", channels, 4 * ce, 1, fn);
}

template <typename F>
void declare_block_params(const NfaConfig& cfg, double expansion, const std::string& prefix, F&& fn) {
  fn(prefix + "norm1.gamma", std::vector<i64>{cfg.channels}, Init::kOne);
  fn(prefix + "norm1.beta", std::vector<i64>{cfg.channels}, Init::kZero);
  declare_nfa_params(cfg, prefix + "nfa.", fn);
  fn(prefix + "norm2.gamma", std::vector<i64>{cfg.channels}, Init::kOne);
  fn(prefix + "norm2.beta", std::vector<i64>{cfg.channels}, Init::kZero);
  declare_msfn_params(cfg.channels, expansion, prefix + "msfn.", fn);
}

// Two-branch residual block on the stacked high-frequency channels: learned
// local 3x3 half, spectral 1x1 half. The output projection starts at zero so
// the block is the identity at initialization.
template <typename F>
void declare_ffc_params(i64 channels, const std::string& prefix, F&& fn) {
  const i64 cl = channels / 2;
  const i64 cg = channels - cl;
  declare_conv(prefix + "local", cl, cl, 3, fn);
  declare_conv(prefix + "spectral", 2 * cg, 2 * cg, 1, fn);
  declare_conv(prefix + "out_proj", channels, channels, 1, fn, Init::kZero);
}

template <typename T>
void add_param(ParamStore<T>& ps, const std::string& name, const std::vector<i64>& shape, Init init,
               std::mt19937_64& rng) {
  switch (init) {
    case Init::kOne:
      ps.add(name, Tensor<T>::full(shape, T(1)));
      break;
    case Init::kZero:
      ps.add(name, Tensor<T>::zeros(shape));
      break;
    case Init::kHe: {
      i64 fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      ps.add(name, Tensor<T>::randn(shape, rng, static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)))));
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Frequency-aware channel attention.
// ---------------------------------------------------------------------------

template <typename T>
struct NfaTrace {
  Tensor<T> q;          // [N,4C,H,W]
  Tensor<T> k;          // [N,16C,H/2,W/2]
  Tensor<T> v;          // [N,16C,H/2,W/2]
  Tensor<T> attention;  // [N,heads,Dh,Dh], rows sum to 1
};

namespace blockdetail {

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& name, i64 stride = 1,
               i64 padding = 0) {
  return conv2d(x, ps.at(name + ".w"), ps.at(name + ".b"), stride, padding);
}

template <typename T>
Tensor<T> dwconv(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& name) {
  const Tensor<T>& w = ps.at(name + ".w");
  return dwconv2d(x, w, ps.at(name + ".b"), (w.shape[2] - 1) / 2);
}

}  // namespace blockdetail

// Residual-free attention body. Query at full resolution from a 1x1 + 3x3
// depthwise stack; key/value from the wavelet-stacked half-resolution feature
// through independent 1x1 (4C->16C) + 3x3 depthwise stacks; attention is over
// channels (Dh x Dh per head) with the 4x spatial reduction of K/V folded into
// the element count; the reconstructed full-resolution feature rides along
// into the output projection.
template <typename T>
Tensor<T> nfa_core(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix,
                   const NfaConfig& cfg, NfaTrace<T>* trace = nullptr) {
  cfg.validate();
  check(x.rank() == 4 && x.shape[1] == cfg.channels, "attention: input must be [N,C,H,W] with C matching the config");
  const i64 n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  check(h % 2 == 0 && w % 2 == 0, "attention: H and W must be even");
  const i64 heads = cfg.heads;
  const i64 dh = cfg.head_dim();

  using blockdetail::conv;
  using blockdetail::dwconv;

  auto q = dwconv(conv(x, ps, prefix + "q_proj"), ps, prefix + "q_dw");  // [N,4C,H,W]

  auto packed = dwt2_packed(x);  // [N,4C,H/2,W/2]
  auto k = dwconv(conv(packed, ps, prefix + "k_proj"), ps, prefix + "k_dw");  // [N,16C,H/2,W/2]
  auto v = dwconv(conv(packed, ps, prefix + "v_proj"), ps, prefix + "v_dw");
  auto xr = idwt2_packed(packed);  // [N,C,H,W]

  auto qh = reshape(q, {n, heads, dh, h * w});
  auto kh = reshape(k, {n, heads, dh, h * w});
  auto vh = reshape(v, {n, heads, dh, h * w});

  auto logits = scale(matmul(qh, transpose_last2(kh)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto attn = softmax(logits, -1);  // [N,heads,Dh,Dh]
  auto ctx = reshape(matmul(attn, vh), {n, 4 * c, h, w});

  if (trace != nullptr) {
    trace->q = q;
    trace->k = k;
    trace->v = v;
    trace->attention = attn;
  }

  return conv(concat({ctx, xr}, 1), ps, prefix + "out_proj");
}

template <typename T>
Tensor<T> nfa_forward(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix,
                      const NfaConfig& cfg, NfaTrace<T>* trace = nullptr) {
  return add(x, nfa_core(x, ps, prefix, cfg, trace));
}

// ---------------------------------------------------------------------------
// Multi-scale gated feed-forward.
// ---------------------------------------------------------------------------

// Residual-free feed-forward body: 1x1 expansion into four equal groups, a
// 3x3/5x5 depthwise pair per branch, a depthwise fusion per branch, and a 1x1
// projection back to the input width.
template <typename T>
Tensor<T> msfn_core(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix) {
  using blockdetail::conv;
  using blockdetail::dwconv;
  check(x.rank() == 4, "feed-forward: input must be [N,C,H,W]");

  auto e = conv(x, ps, prefix + "expand");
  const i64 ce = e.shape[1] / 4;
  auto parts = split(e, 1, {ce, ce, ce, ce});  // ll, lg, gl, gg

  auto x_l = concat({gelu(dwconv(parts[0], ps, prefix + "dw3_ll")),
                     gelu(dwconv(parts[2], ps, prefix + "dw5_gl"))},
                    1);
  auto x_g = concat({gelu(dwconv(parts[1], ps, prefix + "dw3_lg")),
                     gelu(dwconv(parts[3], ps, prefix + "dw5_gg"))},
                    1);
  auto fused = concat({gelu(dwconv(x_l, ps, prefix + "fuse_local")),
                       gelu(dwconv(x_g, ps, prefix + "fuse_global"))},
                      1);
  return conv(fused, ps, prefix + "out_proj");
}

template <typename T>
Tensor<T> msfn_forward(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix) {
  return add(x, msfn_core(x, ps, prefix));
}

// Pre-norm block: x + attention(norm(x)), then + feed-forward(norm(.)).
// Residuals live here (not in the cores) so zeroing the two output
// projections makes the block an exact identity.
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix,
                            const NfaConfig& cfg, NfaTrace<T>* trace = nullptr) {
  auto n1 = layernorm_channels(x, ps.at(prefix + "norm1.gamma"), ps.at(prefix + "norm1.beta"));
  auto x1 = add(x, nfa_core(n1, ps, prefix + "nfa.", cfg, trace));
  auto n2 = layernorm_channels(x1, ps.at(prefix + "norm2.gamma"), ps.at(prefix + "norm2.beta"));
  return add(x1, msfn_core(n2, ps, prefix + "msfn."));
}

// ---------------------------------------------------------------------------
// Real 2-D FFT as matmuls against constant twiddle matrices, which keeps the
// transform inside the existing differentiable op set.
// ---------------------------------------------------------------------------

// Forward real FFT over the last two axes. Output stacks (real, imag) pairs
// per input channel: [N,C,H,W] -> [N,2C,H,W/2+1].
template <typename T>
Tensor<T> rfft2(const Tensor<T>& x) {
  check(x.rank() == 4, "rfft2: input must be [N,C,H,W]");
  const i64 n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  check(h >= 1 && w >= 1, "rfft2: empty spatial dims");
  const i64 wh = w / 2 + 1;
  const double two_pi = 2.0 * 3.14159265358979323846;

  auto cw = Tensor<T>::zeros({w, wh});
  auto sw = Tensor<T>::zeros({w, wh});
  for (i64 ww = 0; ww < w; ++ww) {
    for (i64 l = 0; l < wh; ++l) {
      const double ang = two_pi * static_cast<double>(l * ww) / static_cast<double>(w);
      cw.vals()[ww * wh + l] = static_cast<T>(std::cos(ang));
      sw.vals()[ww * wh + l] = static_cast<T>(-std::sin(ang));
    }
  }
  auto ch = Tensor<T>::zeros({h, h});
  auto sh = Tensor<T>::zeros({h, h});
  for (i64 kk = 0; kk < h; ++kk) {
    for (i64 hh = 0; hh < h; ++hh) {
      const double ang = two_pi * static_cast<double>(kk * hh) / static_cast<double>(h);
      ch.vals()[kk * h + hh] = static_cast<T>(std::cos(ang));
      sh.vals()[kk * h + hh] = static_cast<T>(std::sin(ang));
    }
  }

  auto r1 = matmul(x, cw);  // [N,C,H,Wh]
  auto i1 = matmul(x, sw);
  auto re = add(matmul(ch, r1), matmul(sh, i1));
  auto im = sub(matmul(ch, i1), matmul(sh, r1));

  auto re5 = reshape(re, {n, c, 1, h, wh});
  auto im5 = reshape(im, {n, c, 1, h, wh});
  return reshape(concat({re5, im5}, 2), {n, 2 * c, h, wh});
}

// Inverse of rfft2 given the original width. [N,2C,H,W/2+1] -> [N,C,H,W].
template <typename T>
Tensor<T> irfft2(const Tensor<T>& spec, i64 w_full) {
  check(spec.rank() == 4, "irfft2: input must be [N,2C,H,Wh]");
  const i64 n = spec.shape[0], c2 = spec.shape[1], h = spec.shape[2], wh = spec.shape[3];
  check(c2 % 2 == 0, "irfft2: channel count must be even (real, imag pairs)");
  check(wh == w_full / 2 + 1, "irfft2: spectral width does not match the requested output width");
  const i64 c = c2 / 2;
  const double two_pi = 2.0 * 3.14159265358979323846;

  auto parts = split(reshape(spec, {n, c, 2, h, wh}), 2, {1, 1});
  auto re = reshape(parts[0], {n, c, h, wh});
  auto im = reshape(parts[1], {n, c, h, wh});

  auto ch = Tensor<T>::zeros({h, h});
  auto sh = Tensor<T>::zeros({h, h});
  for (i64 hh = 0; hh < h; ++hh) {
    for (i64 kk = 0; kk < h; ++kk) {
      const double ang = two_pi * static_cast<double>(hh * kk) / static_cast<double>(h);
      ch.vals()[hh * h + kk] = static_cast<T>(std::cos(ang));
      sh.vals()[hh * h + kk] = static_cast<T>(std::sin(ang));
    }
  }
  auto cwi = Tensor<T>::zeros({wh, w_full});
  auto swi = Tensor<T>::zeros({wh, w_full});
  for (i64 l = 0; l < wh; ++l) {
    const bool shared_bin = l == 0 || (w_full % 2 == 0 && l == w_full / 2);
    const double alpha = shared_bin ? 1.0 : 2.0;
    for (i64 ww = 0; ww < w_full; ++ww) {
      const double ang = two_pi * static_cast<double>(l * ww) / static_cast<double>(w_full);
      cwi.vals()[l * w_full + ww] = static_cast<T>(alpha * std::cos(ang));
      swi.vals()[l * w_full + ww] = static_cast<T>(alpha * std::sin(ang));
    }
  }

  auto g_re = sub(matmul(ch, re), matmul(sh, im));
  auto g_im = add(matmul(sh, re), matmul(ch, im));
  auto out = sub(matmul(g_re, cwi), matmul(g_im, swi));
  return scale(out, static_cast<T>(1.0 / static_cast<double>(h * w_full)));
}

// ---------------------------------------------------------------------------
// Residual block for the high-frequency branch: local conv half plus spectral
// 1x1 half, fused by a zero-initialized 1x1 projection.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ffc_resblock(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix) {
  using blockdetail::conv;
  check(x.rank() == 4, "spectral block: input must be [N,C,H,W]");
  const i64 c = x.shape[1];
  check(x.shape[2] % 2 == 0 && x.shape[3] % 2 == 0, "spectral block: H and W must be even");
  const i64 cl = c / 2;
  const i64 cg = c - cl;
  check(cl >= 1 && cg >= 1, "spectral block: needs at least 2 channels");

  auto parts = split(x, 1, {cl, cg});
  auto local = gelu(conv(parts[0], ps, prefix + "local", 1, 1));
  auto spectrum = gelu(conv(rfft2(parts[1]), ps, prefix + "spectral"));
  auto global = irfft2(spectrum, x.shape[3]);
  auto fused = conv(concat({local, global}, 1), ps, prefix + "out_proj");
  return add(x, fused);
}

}  // namespace uwf
