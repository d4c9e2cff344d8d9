#pragma once

#include <vector>

#include "uwformer/tensor.hpp"

namespace uwf {

// Per-pixel CIELab planes for one RGB image; all conversion math runs in
// double regardless of the input scalar type.
struct LabImage {
  i64 h = 0;
  i64 w = 0;
  std::vector<double> l;  // lightness, [0,100] for in-gamut sRGB
  std::vector<double> a;  // green-red opponent axis
  std::vector<double> b;  // blue-yellow opponent axis
};

namespace detail {

template <typename T>
struct PlaneView {
  const T* r;
  const T* g;
  const T* b;
  i64 h;
  i64 w;
};

// Accepts [3,H,W] or [1,3,H,W] and exposes the three channel planes without
// touching the tape.
template <typename T>
PlaneView<T> image_planes(const Tensor<T>& t) {
  i64 c, h, w;
  if (t.rank() == 4 && t.shape[0] == 1) {
    c = t.shape[1];
    h = t.shape[2];
    w = t.shape[3];
  } else {
    check(t.rank() == 3, "image tensor must be [3,H,W] or [1,3,H,W]");
    c = t.shape[0];
    h = t.shape[1];
    w = t.shape[2];
  }
  check(c == 3, "image tensor must have 3 channels");
  check(h > 0 && w > 0, "image must be non-empty");
  const T* base = t.ptr();
  const i64 hw = h * w;
  return {base, base + hw, base + 2 * hw, h, w};
}

}  // namespace detail

// sRGB in [0,1] (clamped first) -> CIELab under the D65 white point.
template <typename T>
LabImage srgb_to_lab(const Tensor<T>& image);

// Per-pixel HSV saturation (max-min)/max, defined as 0 where max == 0.
template <typename T>
std::vector<double> hsv_saturation(const Tensor<T>& image);

}  // namespace uwf
