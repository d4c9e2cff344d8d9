#pragma once

#include <filesystem>
#include <vector>

#include "uwformer/tensor.hpp"

namespace uwf {

// Raw binary PPM (P6, maxval 255) image, interleaved RGB rows.
struct PpmImage {
  i64 w = 0;
  i64 h = 0;
  std::vector<unsigned char> rgb;  // 3*w*h bytes
};

PpmImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const PpmImage& img);

// byte/255 planar conversion, [3,H,W] in [0,1].
Tensor<float> ppm_to_tensor(const PpmImage& img);

// Clamp to [0,1], optionally crop the top-left region, quantize with
// round-half-up (floor(v*255 + 0.5)).
PpmImage tensor_to_ppm(const Tensor<float>& t, i64 crop_h, i64 crop_w);

// Edge-replication padding of [3,H,W] up to the next multiple along H and W.
Tensor<float> pad_to_multiple(const Tensor<float>& t, i64 multiple);

struct LoadedImage {
  Tensor<float> tensor;  // [3,Hp,Wp], padded to the model's spatial multiple
  i64 orig_h = 0;
  i64 orig_w = 0;
};

LoadedImage load_image(const std::filesystem::path& path);
void save_image(const Tensor<float>& t, const std::filesystem::path& path, i64 orig_h, i64 orig_w);

}  // namespace uwf
