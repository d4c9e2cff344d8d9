#pragma once

#include <random>
#include <string>
#include <vector>

#include "uwformer/blocks.hpp"
#include "uwformer/params.hpp"
#include "uwformer/tensor.hpp"
#include "uwformer/wavelet.hpp"

namespace uwf {

// Network layout: a wavelet split feeds the low band into a four-encoder /
// three-decoder UNet of transformer blocks (with the low band re-injected at
// every scale) and the stacked high bands into a chain of spectral residual
// blocks; both branches start as the identity via zero output projections.
struct ModelConfig {
  i64 base_channels = 16;
  std::vector<i64> encoder_blocks{1, 2, 3, 4};
  std::vector<i64> decoder_blocks{3, 2, 1};
  std::vector<i64> heads{1, 2, 4, 8};
  i64 ffc_blocks = 4;
  double expansion = 2.0;

  i64 level_channels(i64 level) const { return base_channels << level; }

  void validate() const {
    if (base_channels <= 0) throw ConfigError("model config: base_channels must be positive");
    if (encoder_blocks.size() != 4) throw ConfigError("model config: need exactly 4 encoder block counts");
    if (decoder_blocks.size() != 3) throw ConfigError("model config: need exactly 3 decoder block counts");
    if (heads.size() != 4) throw ConfigError("model config: need exactly 4 head counts");
    for (std::size_t i = 0; i < 4; ++i) {
      if (encoder_blocks[i] < 1) throw ConfigError("model config: encoder block counts must be >= 1");
      if (i > 0 && encoder_blocks[i] < encoder_blocks[i - 1]) {
        throw ConfigError("model config: encoder block counts must be nondecreasing");
      }
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (decoder_blocks[i] < 1) throw ConfigError("model config: decoder block counts must be >= 1");
      if (i > 0 && decoder_blocks[i] > decoder_blocks[i - 1]) {
        throw ConfigError("model config: decoder block counts must be nonincreasing");
      }
    }
    if (ffc_blocks < 0) throw ConfigError("model config: ffc_blocks must be >= 0");
    if (expansion <= 0.0) throw ConfigError("model config: expansion must be positive");
    for (i64 level = 0; level < 4; ++level) {
      NfaConfig{level_channels(level), heads[level]}.validate();
    }
  }

  NfaConfig level_attention(i64 level) const { return NfaConfig{level_channels(level), heads[level]}; }
};

// Input spatial dims must be divisible by this: one wavelet split, then three
// strided downsamplings, with the deepest feature still even-sized for the
// attention's internal wavelet step.
inline constexpr i64 kSpatialMultiple = 32;

// Single schema walk declaring every parameter tensor; builders, counters and
// checkpoint I/O all derive from this order.
template <typename F>
void walk_model_schema(const ModelConfig& cfg, F&& fn) {
  cfg.validate();
  for (i64 level = 0; level < 4; ++level) {
    const std::string enc = "enc" + std::to_string(level) + ".";
    const i64 c = cfg.level_channels(level);
    declare_conv(enc + "stem", c, 3, 3, fn);
    if (level > 0) {
      declare_conv(enc + "down", c, cfg.level_channels(level - 1), 3, fn);
      declare_conv(enc + "fuse", c, 2 * c, 1, fn);
    }
    for (i64 b = 0; b < cfg.encoder_blocks[level]; ++b) {
      declare_block_params(cfg.level_attention(level), cfg.expansion,
                           enc + "block" + std::to_string(b) + ".", fn);
    }
  }
  for (i64 d = 0; d < 3; ++d) {
    const i64 in_level = 3 - d;
    const i64 out_level = 2 - d;
    const std::string dec = "dec" + std::to_string(d) + ".";
    const i64 cin = cfg.level_channels(in_level);
    const i64 cout = cfg.level_channels(out_level);
    fn(dec + "up.w", std::vector<i64>{cin, cout, 2, 2}, Init::kHe);
    fn(dec + "up.b", std::vector<i64>{cout}, Init::kZero);
    declare_conv(dec + "fuse", cout, 2 * cout, 1, fn);
    for (i64 b = 0; b < cfg.decoder_blocks[d]; ++b) {
      declare_block_params(cfg.level_attention(out_level), cfg.expansion,
                           dec + "block" + std::to_string(b) + ".", fn);
    }
  }
  declare_conv("head", 3, cfg.level_channels(0), 3, fn, Init::kZero);
  for (i64 f = 0; f < cfg.ffc_blocks; ++f) {
    declare_ffc_params(9, "ffc" + std::to_string(f) + ".", fn);
  }
}

template <typename T>
ParamStore<T> build_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<T> ps;
  walk_model_schema(cfg, [&](const std::string& name, std::vector<i64> shape, Init init) {
    add_param(ps, name, shape, init, rng);
  });
  return ps;
}

inline i64 count_params(const ModelConfig& cfg) {
  i64 total = 0;
  walk_model_schema(cfg, [&](const std::string&, std::vector<i64> shape, Init) {
    i64 n = 1;
    for (i64 d : shape) n *= d;
    total += n;
  });
  return total;
}

template <typename T>
ParamStore<T> clone_params(const ParamStore<T>& ps) {
  ParamStore<T> out;
  for (const auto& name : ps.names()) out.add(name, ps.at(name).copy());
  return out;
}

template <typename T>
Tensor<T> msformer_forward(const Tensor<T>& x, const ParamStore<T>& ps, const ModelConfig& cfg,
                           bool inference = false) {
  cfg.validate();
  check(x.rank() == 4 && x.shape[1] == 3, "forward: input must be [N,3,H,W]");
  check(x.shape[2] % kSpatialMultiple == 0 && x.shape[3] % kSpatialMultiple == 0,
        "forward: H and W must be divisible by 32");
  using blockdetail::conv;

  const WaveletBands<T> bands = dwt2(x);
  const Tensor<T> x_ll = bands.ll;                              // [N,3,H/2,W/2]
  const Tensor<T> x_h = merge_high(bands.lh, bands.hl, bands.hh);  // [N,9,H/2,W/2]

  std::vector<Tensor<T>> scale_in{x_ll};
  for (int s = 1; s < 4; ++s) scale_in.push_back(avgpool2(scale_in.back()));

  std::vector<Tensor<T>> enc_out;
  for (i64 level = 0; level < 4; ++level) {
    const std::string enc = "enc" + std::to_string(level) + ".";
    Tensor<T> feat = conv(scale_in[level], ps, enc + "stem", 1, 1);
    if (level > 0) {
      Tensor<T> down = conv(enc_out.back(), ps, enc + "down", 2, 1);
      feat = conv(concat({feat, down}, 1), ps, enc + "fuse");
    }
    const NfaConfig attn = cfg.level_attention(level);
    for (i64 b = 0; b < cfg.encoder_blocks[level]; ++b) {
      feat = transformer_block(feat, ps, enc + "block" + std::to_string(b) + ".", attn);
    }
    enc_out.push_back(feat);
  }

  Tensor<T> feat = enc_out[3];
  for (i64 d = 0; d < 3; ++d) {
    const i64 out_level = 2 - d;
    const std::string dec = "dec" + std::to_string(d) + ".";
    Tensor<T> up = conv_transpose2d(feat, ps.at(dec + "up.w"), ps.at(dec + "up.b"), 2);
    feat = conv(concat({up, enc_out[out_level]}, 1), ps, dec + "fuse");
    const NfaConfig attn = cfg.level_attention(out_level);
    for (i64 b = 0; b < cfg.decoder_blocks[d]; ++b) {
      feat = transformer_block(feat, ps, dec + "block" + std::to_string(b) + ".", attn);
    }
  }

  const Tensor<T> ll_hat = add(x_ll, conv(feat, ps, "head", 1, 1));

  Tensor<T> h_hat = x_h;
  for (i64 f = 0; f < cfg.ffc_blocks; ++f) {
    h_hat = ffc_resblock(h_hat, ps, "ffc" + std::to_string(f) + ".");
  }

  auto high = split_high(h_hat);
  Tensor<T> out = idwt2(WaveletBands<T>{ll_hat, high[0], high[1], high[2]});
  return inference ? clamp01(out) : out;
}

}  // namespace uwf
