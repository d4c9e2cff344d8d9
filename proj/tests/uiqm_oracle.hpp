#pragma once

// Independent straight-line reference for the composite underwater quality
// score. Written directly from the published term definitions with its own
// padding, sorting, and block loops, deliberately not sharing code with the
// library implementation.

#include <algorithm>
#include <cmath>
#include <vector>

#include "uwformer/tensor.hpp"

namespace oracle {

inline double uiqm_reference(const uwf::Tensor<float>& img) {
  using std::size_t;
  const long long H = img.shape[img.rank() - 2];
  const long long W = img.shape[img.rank() - 1];
  const long long n = H * W;
  const auto& v = img.vals();

  std::vector<double> R(n), G(n), B(n);
  for (long long i = 0; i < n; ++i) {
    R[i] = std::min(1.0, std::max(0.0, static_cast<double>(v[i]))) * 255.0;
    G[i] = std::min(1.0, std::max(0.0, static_cast<double>(v[n + i]))) * 255.0;
    B[i] = std::min(1.0, std::max(0.0, static_cast<double>(v[2 * n + i]))) * 255.0;
  }

  // --- colorfulness -------------------------------------------------------
  std::vector<double> rg(n), yb(n);
  for (long long i = 0; i < n; ++i) {
    rg[i] = R[i] - G[i];
    yb[i] = (R[i] + G[i]) / 2.0 - B[i];
  }
  auto trimmed_mean = [](std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const long long m = static_cast<long long>(x.size());
    const long long t = static_cast<long long>(std::floor(0.1 * static_cast<double>(m)));
    double s = 0.0;
    for (long long i = t; i < m - t; ++i) s += x[i];
    return s / static_cast<double>(m - 2 * t);
  };
  const double mu_rg = trimmed_mean(rg);
  const double mu_yb = trimmed_mean(yb);
  double s2_rg = 0.0, s2_yb = 0.0;
  for (long long i = 0; i < n; ++i) {
    s2_rg += (rg[i] - mu_rg) * (rg[i] - mu_rg);
    s2_yb += (yb[i] - mu_yb) * (yb[i] - mu_yb);
  }
  s2_rg /= static_cast<double>(n);
  s2_yb /= static_cast<double>(n);
  const double uicm = -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) +
                      0.1586 * std::sqrt(s2_rg + s2_yb);

  // --- sharpness ----------------------------------------------------------
  const long long ky = H / 8;
  const long long kx = W / 8;
  auto eme_of = [&](const std::vector<double>& chan) {
    std::vector<double> pad((H + 2) * (W + 2));
    for (long long y = 0; y < H + 2; ++y) {
      for (long long x = 0; x < W + 2; ++x) {
        const long long sy = std::min(H - 1, std::max(0LL, y - 1));
        const long long sx = std::min(W - 1, std::max(0LL, x - 1));
        pad[y * (W + 2) + x] = chan[sy * W + sx];
      }
    }
    std::vector<double> edge(n);
    for (long long y = 0; y < H; ++y) {
      for (long long x = 0; x < W; ++x) {
        auto p = [&](long long dy, long long dx) {
          return pad[(y + 1 + dy) * (W + 2) + (x + 1 + dx)];
        };
        const double gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) -
                          (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        const double gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) -
                          (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        edge[y * W + x] = std::sqrt(gx * gx + gy * gy) * chan[y * W + x];
      }
    }
    double acc = 0.0;
    for (long long by = 0; by < ky; ++by) {
      for (long long bx = 0; bx < kx; ++bx) {
        std::vector<double> block;
        block.reserve(64);
        for (long long y = 8 * by; y < 8 * by + 8; ++y)
          for (long long x = 8 * bx; x < 8 * bx + 8; ++x) block.push_back(edge[y * W + x]);
        const auto [mn, mx] = std::minmax_element(block.begin(), block.end());
        if (*mn > 0.0 && *mx > 0.0) acc += std::log(*mx / *mn);
      }
    }
    return 2.0 / static_cast<double>(ky * kx) * acc;
  };
  const double uism = 0.299 * eme_of(R) + 0.587 * eme_of(G) + 0.114 * eme_of(B);

  // --- contrast -----------------------------------------------------------
  double acc = 0.0;
  for (long long by = 0; by < ky; ++by) {
    for (long long bx = 0; bx < kx; ++bx) {
      std::vector<double> block;
      block.reserve(192);
      for (long long y = 8 * by; y < 8 * by + 8; ++y) {
        for (long long x = 8 * bx; x < 8 * bx + 8; ++x) {
          block.push_back(R[y * W + x]);
          block.push_back(G[y * W + x]);
          block.push_back(B[y * W + x]);
        }
      }
      const auto [mn, mx] = std::minmax_element(block.begin(), block.end());
      const double top = *mx - *mn;
      const double bot = *mx + *mn;
      if (top > 0.0 && bot > 0.0) acc += top / bot * std::log(top / bot);
    }
  }
  const double uiconm = -acc / static_cast<double>(ky * kx);

  return 0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm;
}

}  // namespace oracle
