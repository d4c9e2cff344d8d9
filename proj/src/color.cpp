#include "uwformer/color.hpp"

#include <algorithm>
#include <cmath>

namespace uwf {

namespace {

double clamp01d(double v) { return std::min(1.0, std::max(0.0, v)); }

double srgb_linearize(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double eps = 216.0 / 24389.0;
  constexpr double kappa = 24389.0 / 27.0;
  return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

}  // namespace

template <typename T>
LabImage srgb_to_lab(const Tensor<T>& image) {
  const auto p = detail::image_planes(image);
  LabImage out;
  out.h = p.h;
  out.w = p.w;
  const i64 n = p.h * p.w;
  out.l.resize(n);
  out.a.resize(n);
  out.b.resize(n);
  for (i64 i = 0; i < n; ++i) {
    const double r = srgb_linearize(clamp01d(static_cast<double>(p.r[i])));
    const double g = srgb_linearize(clamp01d(static_cast<double>(p.g[i])));
    const double b = srgb_linearize(clamp01d(static_cast<double>(p.b[i])));
    const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    const double fx = lab_f(x / 0.95047);
    const double fy = lab_f(y);
    const double fz = lab_f(z / 1.08883);
    out.l[i] = 116.0 * fy - 16.0;
    out.a[i] = 500.0 * (fx - fy);
    out.b[i] = 200.0 * (fy - fz);
  }
  return out;
}

template <typename T>
std::vector<double> hsv_saturation(const Tensor<T>& image) {
  const auto p = detail::image_planes(image);
  const i64 n = p.h * p.w;
  std::vector<double> s(n);
  for (i64 i = 0; i < n; ++i) {
    const double r = clamp01d(static_cast<double>(p.r[i]));
    const double g = clamp01d(static_cast<double>(p.g[i]));
    const double b = clamp01d(static_cast<double>(p.b[i]));
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    s[i] = mx == 0.0 ? 0.0 : (mx - mn) / mx;
  }
  return s;
}

template LabImage srgb_to_lab<float>(const Tensor<float>&);
template LabImage srgb_to_lab<double>(const Tensor<double>&);
template std::vector<double> hsv_saturation<float>(const Tensor<float>&);
template std::vector<double> hsv_saturation<double>(const Tensor<double>&);

}  // namespace uwf
