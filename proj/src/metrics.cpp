#include "uwformer/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "uwformer/color.hpp"

namespace uwf {

namespace {

constexpr i64 kBlock = 8;

double clamp01d(double v) { return std::min(1.0, std::max(0.0, v)); }

double nearest_rank(const std::vector<double>& sorted, double p) {
  const i64 n = static_cast<i64>(sorted.size());
  i64 rank = static_cast<i64>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<i64>(rank, 1, n);
  return sorted[rank - 1];
}

struct TrimStats {
  double mean = 0.0;  // asymmetric alpha-trimmed mean, alpha = 0.1 per side
  double var = 0.0;   // variance of all samples about the trimmed mean
};

TrimStats trimmed_stats(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  const i64 n = static_cast<i64>(s.size());
  const i64 t = n / 10;
  double m = 0.0;
  for (i64 i = t; i < n - t; ++i) m += s[i];
  m /= static_cast<double>(n - 2 * t);
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(n);
  return {m, var};
}

std::vector<double> sobel_magnitude(const std::vector<double>& img, i64 h, i64 w) {
  auto at = [&](i64 y, i64 x) {
    y = std::clamp<i64>(y, 0, h - 1);
    x = std::clamp<i64>(x, 0, w - 1);
    return img[y * w + x];
  };
  std::vector<double> mag(static_cast<size_t>(h * w));
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
      mag[y * w + x] = std::hypot(gx, gy);
    }
  }
  return mag;
}

// (2/K) * sum of ln(max/min) over full blocks, skipping blocks that touch 0.
double block_eme(const std::vector<double>& img, i64 h, i64 w) {
  const i64 bh = h / kBlock;
  const i64 bw = w / kBlock;
  double acc = 0.0;
  for (i64 by = 0; by < bh; ++by) {
    for (i64 bx = 0; bx < bw; ++bx) {
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      for (i64 y = by * kBlock; y < (by + 1) * kBlock; ++y) {
        for (i64 x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
          const double v = img[y * w + x];
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      }
      if (mn > 0.0 && mx > 0.0) acc += std::log(mx / mn);
    }
  }
  return 2.0 / static_cast<double>(bh * bw) * acc;
}

}  // namespace

template <typename T>
SplTerms spl_terms(const Tensor<T>& image) {
  const LabImage lab = srgb_to_lab(image);
  const i64 n = lab.h * lab.w;

  // Welford's algorithm: a constant chroma plane yields exactly zero variance,
  // which naive mean-then-deviation accumulation does not guarantee.
  double mean_c = 0.0;
  double m2_c = 0.0;
  for (i64 i = 0; i < n; ++i) {
    const double c = std::hypot(lab.a[i], lab.b[i]);
    const double delta = c - mean_c;
    mean_c += delta / static_cast<double>(i + 1);
    m2_c += delta * (c - mean_c);
  }
  const double var_c = m2_c / static_cast<double>(n);

  std::vector<double> l = lab.l;
  std::sort(l.begin(), l.end());

  const std::vector<double> sat = hsv_saturation(image);
  double mean_s = 0.0;
  for (double s : sat) mean_s += s;
  mean_s /= static_cast<double>(n);

  SplTerms t;
  t.chroma_std = std::sqrt(var_c) / 100.0;
  t.luma_contrast = (nearest_rank(l, 99.0) - nearest_rank(l, 1.0)) / 100.0;
  t.mean_saturation = mean_s;
  return t;
}

template <typename T>
double spl(const Tensor<T>& image) {
  const SplTerms t = spl_terms(image);
  return kSplChromaWeight * t.chroma_std + kSplContrastWeight * t.luma_contrast +
         kSplSaturationWeight * t.mean_saturation;
}

template <typename T>
double uciqe(const Tensor<T>& image) {
  return spl(image);
}

template <typename T>
double uiqm(const Tensor<T>& image) {
  const auto p = detail::image_planes(image);
  const i64 h = p.h;
  const i64 w = p.w;
  check(h / kBlock > 0 && w / kBlock > 0, "image must contain at least one full 8x8 block");
  const i64 n = h * w;

  std::vector<double> r(static_cast<size_t>(n)), g(static_cast<size_t>(n)), b(static_cast<size_t>(n));
  std::vector<double> rg(static_cast<size_t>(n)), yb(static_cast<size_t>(n));
  for (i64 i = 0; i < n; ++i) {
    r[i] = clamp01d(static_cast<double>(p.r[i])) * 255.0;
    g[i] = clamp01d(static_cast<double>(p.g[i])) * 255.0;
    b[i] = clamp01d(static_cast<double>(p.b[i])) * 255.0;
    rg[i] = r[i] - g[i];
    yb[i] = 0.5 * (r[i] + g[i]) - b[i];
  }

  const TrimStats srg = trimmed_stats(rg);
  const TrimStats syb = trimmed_stats(yb);
  const double uicm =
      -0.0268 * std::hypot(srg.mean, syb.mean) + 0.1586 * std::sqrt(srg.var + syb.var);

  const double chan_weight[3] = {0.299, 0.587, 0.114};
  const std::vector<double>* chan[3] = {&r, &g, &b};
  double uism = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> edge = sobel_magnitude(*chan[c], h, w);
    for (i64 i = 0; i < n; ++i) edge[i] *= (*chan[c])[i];
    uism += chan_weight[c] * block_eme(edge, h, w);
  }

  const i64 bh = h / kBlock;
  const i64 bw = w / kBlock;
  double acc = 0.0;
  for (i64 by = 0; by < bh; ++by) {
    for (i64 bx = 0; bx < bw; ++bx) {
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      for (int c = 0; c < 3; ++c) {
        for (i64 y = by * kBlock; y < (by + 1) * kBlock; ++y) {
          for (i64 x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
            const double v = (*chan[c])[y * w + x];
            mx = std::max(mx, v);
            mn = std::min(mn, v);
          }
        }
      }
      const double top = mx - mn;
      const double bot = mx + mn;
      if (top > 0.0 && bot > 0.0) acc += top / bot * std::log(top / bot);
    }
  }
  const double uiconm = -acc / static_cast<double>(bh * bw);

  return 0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  check(a.shape == b.shape, "psnr: shape mismatch");
  check(a.numel() > 0, "psnr: empty input");
  const auto& av = a.vals();
  const auto& bv = b.vals();
  double mse = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  const auto pa = detail::image_planes(a);
  const auto pb = detail::image_planes(b);
  check(pa.h == pb.h && pa.w == pb.w, "ssim: shape mismatch");
  const i64 h = pa.h;
  const i64 w = pa.w;
  constexpr i64 kWin = 11;
  constexpr i64 kHalf = kWin / 2;
  check(h >= kWin && w >= kWin, "ssim: image smaller than the 11x11 window");

  std::array<double, kWin> g1{};
  double gsum = 0.0;
  for (i64 i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i - kHalf);
    g1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gsum += g1[i];
  }
  for (double& v : g1) v /= gsum;

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;

  const T* chans_a[3] = {pa.r, pa.g, pa.b};
  const T* chans_b[3] = {pb.r, pb.g, pb.b};
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const T* xa = chans_a[c];
    const T* xb = chans_b[c];
    double acc = 0.0;
    i64 count = 0;
    for (i64 cy = kHalf; cy < h - kHalf; ++cy) {
      for (i64 cx = kHalf; cx < w - kHalf; ++cx) {
        double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
        for (i64 dy = -kHalf; dy <= kHalf; ++dy) {
          const double wy = g1[dy + kHalf];
          const T* rowa = xa + (cy + dy) * w + cx;
          const T* rowb = xb + (cy + dy) * w + cx;
          for (i64 dx = -kHalf; dx <= kHalf; ++dx) {
            const double wgt = wy * g1[dx + kHalf];
            const double va = static_cast<double>(rowa[dx]);
            const double vb = static_cast<double>(rowb[dx]);
            mx += wgt * va;
            my += wgt * vb;
            mxx += wgt * va * va;
            myy += wgt * vb * vb;
            mxy += wgt * va * vb;
          }
        }
        const double sx = mxx - mx * mx;
        const double sy = myy - my * my;
        const double sxy = mxy - mx * my;
        acc += (2.0 * mx * my + c1) * (2.0 * sxy + c2) /
               ((mx * mx + my * my + c1) * (sx + sy + c2));
        ++count;
      }
    }
    total += acc / static_cast<double>(count);
  }
  return total / 3.0;
}

template <typename T>
MetricReport evaluate_image(const Tensor<T>& image, const Tensor<T>* reference) {
  MetricReport rep;
  rep.spl = spl(image);
  rep.uciqe = uciqe(image);
  rep.uiqm = uiqm(image);
  if (reference != nullptr) {
    rep.psnr = psnr(image, *reference);
    rep.ssim = ssim(image, *reference);
  }
  return rep;
}

template SplTerms spl_terms<float>(const Tensor<float>&);
template SplTerms spl_terms<double>(const Tensor<double>&);
template double spl<float>(const Tensor<float>&);
template double spl<double>(const Tensor<double>&);
template double uciqe<float>(const Tensor<float>&);
template double uciqe<double>(const Tensor<double>&);
template double uiqm<float>(const Tensor<float>&);
template double uiqm<double>(const Tensor<double>&);
template double psnr<float>(const Tensor<float>&, const Tensor<float>&, double);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&, double);
template double ssim<float>(const Tensor<float>&, const Tensor<float>&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&);
template MetricReport evaluate_image<float>(const Tensor<float>&, const Tensor<float>*);
template MetricReport evaluate_image<double>(const Tensor<double>&, const Tensor<double>*);

}  // namespace uwf
