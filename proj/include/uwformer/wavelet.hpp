#pragma once
// Single-level orthonormal 2-D Haar transform.
//
// Each 2x2 block (a b / c d) maps to
//   ll = (a+b+c+d)/2   lh = (a+b-c-d)/2
//   hl = (a-b+c-d)/2   hh = (a-b-c+d)/2
// The 4x4 block matrix is symmetric orthogonal, so the inverse uses the same
// coefficients and the transform preserves the sum of squares exactly.
//
// dwt2_packed/idwt2_packed are tape-differentiable; since the transform is
// orthonormal the backward pass is the transform itself applied to gradients.

#include "uwformer/tensor.hpp"

namespace uwf {

// [N,C,H,W] -> [N,4C,H/2,W/2], band-major channel layout (ll, lh, hl, hh).
template <typename T>
Tensor<T> dwt2_packed(const Tensor<T>& x) {
  check(x.rank() == 4, "dwt2: input must be [N,C,H,W]");
  const i64 N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  check(H % 2 == 0 && W % 2 == 0, "dwt2: spatial dimensions must be even");
  const i64 H2 = H / 2, W2 = W / 2;
  Tensor<T> out = Tensor<T>::zeros({N, 4 * C, H2, W2});
  const T* px = x.ptr();
  T* po = out.ptr();
  const T half = static_cast<T>(0.5);
  for (i64 n = 0; n < N; ++n) {
    for (i64 c = 0; c < C; ++c) {
      const T* xp = px + (n * C + c) * H * W;
      T* ll = po + (n * 4 * C + 0 * C + c) * H2 * W2;
      T* lh = po + (n * 4 * C + 1 * C + c) * H2 * W2;
      T* hl = po + (n * 4 * C + 2 * C + c) * H2 * W2;
      T* hh = po + (n * 4 * C + 3 * C + c) * H2 * W2;
      for (i64 i = 0; i < H2; ++i) {
        const T* r0 = xp + 2 * i * W;
        const T* r1 = r0 + W;
        for (i64 j = 0; j < W2; ++j) {
          const T a = r0[2 * j], b = r0[2 * j + 1];
          const T cc = r1[2 * j], d = r1[2 * j + 1];
          const i64 idx = i * W2 + j;
          ll[idx] = (a + b + cc + d) * half;
          lh[idx] = (a + b - cc - d) * half;
          hl[idx] = (a - b + cc - d) * half;
          hh[idx] = (a - b - cc + d) * half;
        }
      }
    }
  }
  Tape<T>* tp = detail::common_tape<T>({&x});
  if (tp) {
    const int ix = x.node;
    const i64 nx = x.numel();
    detail::attach(out, tp, [ix, nx, N, C, H, W, H2, W2](Tape<T>& t, const std::vector<T>& go) {
      auto& gx = t.grad_buf(ix, nx);
      const T half = static_cast<T>(0.5);
      for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
          T* gp = gx.data() + (n * C + c) * H * W;
          const T* gll = go.data() + (n * 4 * C + 0 * C + c) * H2 * W2;
          const T* glh = go.data() + (n * 4 * C + 1 * C + c) * H2 * W2;
          const T* ghl = go.data() + (n * 4 * C + 2 * C + c) * H2 * W2;
          const T* ghh = go.data() + (n * 4 * C + 3 * C + c) * H2 * W2;
          for (i64 i = 0; i < H2; ++i) {
            T* r0 = gp + 2 * i * W;
            T* r1 = r0 + W;
            for (i64 j = 0; j < W2; ++j) {
              const i64 idx = i * W2 + j;
              const T l = gll[idx], v = glh[idx], h = ghl[idx], d = ghh[idx];
              r0[2 * j] += (l + v + h + d) * half;
              r0[2 * j + 1] += (l + v - h - d) * half;
              r1[2 * j] += (l - v + h - d) * half;
              r1[2 * j + 1] += (l - v - h + d) * half;
            }
          }
        }
      }
    });
  }
  return out;
}

// [N,4C,H2,W2] band-major (ll, lh, hl, hh) -> [N,C,2*H2,2*W2].
template <typename T>
Tensor<T> idwt2_packed(const Tensor<T>& p) {
  check(p.rank() == 4, "idwt2: input must be [N,4C,H,W]");
  check(p.shape[1] % 4 == 0, "idwt2: channel count must be a multiple of 4");
  const i64 N = p.shape[0], C = p.shape[1] / 4, H2 = p.shape[2], W2 = p.shape[3];
  const i64 H = 2 * H2, W = 2 * W2;
  Tensor<T> out = Tensor<T>::zeros({N, C, H, W});
  const T* pp = p.ptr();
  T* po = out.ptr();
  const T half = static_cast<T>(0.5);
  for (i64 n = 0; n < N; ++n) {
    for (i64 c = 0; c < C; ++c) {
      T* xp = po + (n * C + c) * H * W;
      const T* ll = pp + (n * 4 * C + 0 * C + c) * H2 * W2;
      const T* lh = pp + (n * 4 * C + 1 * C + c) * H2 * W2;
      const T* hl = pp + (n * 4 * C + 2 * C + c) * H2 * W2;
      const T* hh = pp + (n * 4 * C + 3 * C + c) * H2 * W2;
      for (i64 i = 0; i < H2; ++i) {
        T* r0 = xp + 2 * i * W;
        T* r1 = r0 + W;
        for (i64 j = 0; j < W2; ++j) {
          const i64 idx = i * W2 + j;
          const T l = ll[idx], v = lh[idx], h = hl[idx], d = hh[idx];
          r0[2 * j] = (l + v + h + d) * half;
          r0[2 * j + 1] = (l + v - h - d) * half;
          r1[2 * j] = (l - v + h - d) * half;
          r1[2 * j + 1] = (l - v - h + d) * half;
        }
      }
    }
  }
  Tape<T>* tp = detail::common_tape<T>({&p});
  if (tp) {
    const int ip = p.node;
    const i64 np = p.numel();
    detail::attach(out, tp, [ip, np, N, C, H, W, H2, W2](Tape<T>& t, const std::vector<T>& go) {
      auto& gp = t.grad_buf(ip, np);
      const T half = static_cast<T>(0.5);
      for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
          const T* g = go.data() + (n * C + c) * H * W;
          T* gll = gp.data() + (n * 4 * C + 0 * C + c) * H2 * W2;
          T* glh = gp.data() + (n * 4 * C + 1 * C + c) * H2 * W2;
          T* ghl = gp.data() + (n * 4 * C + 2 * C + c) * H2 * W2;
          T* ghh = gp.data() + (n * 4 * C + 3 * C + c) * H2 * W2;
          for (i64 i = 0; i < H2; ++i) {
            const T* r0 = g + 2 * i * W;
            const T* r1 = r0 + W;
            for (i64 j = 0; j < W2; ++j) {
              const i64 idx = i * W2 + j;
              const T a = r0[2 * j], b = r0[2 * j + 1];
              const T cc = r1[2 * j], d = r1[2 * j + 1];
              gll[idx] += (a + b + cc + d) * half;
              glh[idx] += (a + b - cc - d) * half;
              ghl[idx] += (a - b + cc - d) * half;
              ghh[idx] += (a - b - cc + d) * half;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
struct WaveletBands {
  Tensor<T> ll, lh, hl, hh;
};

template <typename T>
WaveletBands<T> dwt2(const Tensor<T>& x) {
  const i64 C = x.shape.size() == 4 ? x.shape[1] : 0;
  Tensor<T> packed = dwt2_packed(x);
  auto parts = split(packed, 1, {C, C, C, C});
  return WaveletBands<T>{parts[0], parts[1], parts[2], parts[3]};
}

template <typename T>
Tensor<T> idwt2(const WaveletBands<T>& b) {
  check(b.ll.shape == b.lh.shape && b.ll.shape == b.hl.shape && b.ll.shape == b.hh.shape,
        "idwt2: band shapes disagree");
  return idwt2_packed(concat<T>({b.ll, b.lh, b.hl, b.hh}, 1));
}

// Stack the three detail bands along channels in (lh, hl, hh) order.
template <typename T>
Tensor<T> merge_high(const Tensor<T>& lh, const Tensor<T>& hl, const Tensor<T>& hh) {
  check(lh.shape == hl.shape && lh.shape == hh.shape, "merge_high: band shapes disagree");
  return concat<T>({lh, hl, hh}, 1);
}

// Inverse of merge_high.
template <typename T>
std::vector<Tensor<T>> split_high(const Tensor<T>& h) {
  check(h.rank() == 4 && h.shape[1] % 3 == 0, "split_high: channel count must be a multiple of 3");
  const i64 C = h.shape[1] / 3;
  return split(h, 1, {C, C, C});
}

}  // namespace uwf
