#pragma once

#include <optional>

#include "uwformer/tensor.hpp"

namespace uwf {

// Weights of the three terms of the perceptual quality score.
inline constexpr double kSplChromaWeight = 0.4680;
inline constexpr double kSplContrastWeight = 0.2745;
inline constexpr double kSplSaturationWeight = 0.2576;

struct SplTerms {
  double chroma_std = 0.0;       // std of Lab chroma sqrt(a^2+b^2), / 100
  double luma_contrast = 0.0;    // (p99(L) - p1(L)) / 100, nearest-rank
  double mean_saturation = 0.0;  // mean HSV saturation
};

// No-reference perceptual quality score: weighted sum of chroma spread,
// luminance contrast, and mean saturation. Inputs are clamped to [0,1].
template <typename T>
SplTerms spl_terms(const Tensor<T>& image);
template <typename T>
double spl(const Tensor<T>& image);

// Identical pipeline to spl; kept as a distinct entry point for reporting.
template <typename T>
double uciqe(const Tensor<T>& image);

// Composite underwater quality score:
//   0.0282 * colorfulness + 0.2953 * sharpness + 3.5753 * contrast
// computed on the 255 scale with 8x8 blocks; needs at least one full block.
template <typename T>
double uiqm(const Tensor<T>& image);

// 10*log10(peak^2/MSE) in dB; +infinity for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

// Single-scale SSIM, 11x11 Gaussian window sigma=1.5, k1=0.01, k2=0.03,
// evaluated on the valid (fully covered) region, averaged over channels.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

struct MetricReport {
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> spl;
  std::optional<double> uciqe;
  std::optional<double> uiqm;
};

// No-reference scores always; PSNR/SSIM only when a reference is given.
template <typename T>
MetricReport evaluate_image(const Tensor<T>& image, const Tensor<T>* reference = nullptr);

}  // namespace uwf
