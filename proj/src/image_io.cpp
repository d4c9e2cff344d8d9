#include "uwformer/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "uwformer/model.hpp"

namespace uwf {

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

// Whitespace/comment-aware header scanner for the PPM format.
class HeaderScanner {
 public:
  HeaderScanner(const std::vector<char>& buf, std::size_t pos) : buf_(buf), pos_(pos) {}

  void skip_space_and_comments() {
    while (pos_ < buf_.size()) {
      const char c = buf_[pos_];
      if (c == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  i64 read_number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < buf_.size() && std::isdigit(static_cast<unsigned char>(buf_[pos_]))) ++pos_;
    if (pos_ == start) {
      throw DecodeError(std::string("expected ") + what, start);
    }
    i64 v = 0;
    for (std::size_t i = start; i < pos_; ++i) {
      v = v * 10 + (buf_[i] - '0');
      if (v > (i64(1) << 31)) throw DecodeError(std::string(what) + " out of range", start);
    }
    return v;
  }

  // The header ends with exactly one whitespace byte before the payload.
  void consume_single_space() {
    if (pos_ >= buf_.size() || !std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
      throw DecodeError("expected a whitespace byte before pixel data", pos_);
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_;
};

}  // namespace

PpmImage read_ppm(const std::filesystem::path& path) {
  const std::vector<char> buf = read_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') {
    std::string got = buf.size() >= 2 ? std::string(buf.begin(), buf.begin() + 2) : std::string(buf.begin(), buf.end());
    throw DecodeError("expected P6 magic, got '" + got + "'", 0);
  }
  HeaderScanner scan(buf, 2);
  PpmImage img;
  img.w = scan.read_number("width");
  img.h = scan.read_number("height");
  if (img.w <= 0 || img.h <= 0) throw DecodeError("width and height must be positive", 2);
  const std::size_t maxval_at = scan.pos();
  const i64 maxval = scan.read_number("maxval");
  if (maxval != 255) {
    throw DecodeError("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
  }
  scan.consume_single_space();

  const std::size_t need = static_cast<std::size_t>(3 * img.w * img.h);
  const std::size_t have = buf.size() - scan.pos();
  if (have < need) {
    throw DecodeError("truncated pixel data: expected " + std::to_string(need) + " bytes, got " +
                          std::to_string(have),
                      scan.pos());
  }
  img.rgb.assign(buf.begin() + static_cast<std::ptrdiff_t>(scan.pos()),
                 buf.begin() + static_cast<std::ptrdiff_t>(scan.pos() + need));
  return img;
}

void write_ppm(const std::filesystem::path& path, const PpmImage& img) {
  check(img.w > 0 && img.h > 0, "write_ppm: empty image");
  check(img.rgb.size() == static_cast<std::size_t>(3 * img.w * img.h), "write_ppm: payload size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor<float> ppm_to_tensor(const PpmImage& img) {
  Tensor<float> t = Tensor<float>::zeros({3, img.h, img.w});
  float* p = t.ptr();
  const i64 hw = img.h * img.w;
  for (i64 i = 0; i < hw; ++i) {
    p[i] = static_cast<float>(img.rgb[3 * i]) / 255.0f;
    p[hw + i] = static_cast<float>(img.rgb[3 * i + 1]) / 255.0f;
    p[2 * hw + i] = static_cast<float>(img.rgb[3 * i + 2]) / 255.0f;
  }
  return t;
}

PpmImage tensor_to_ppm(const Tensor<float>& t, i64 crop_h, i64 crop_w) {
  check(t.rank() == 3 && t.shape[0] == 3, "tensor_to_ppm: need [3,H,W]");
  const i64 h = t.shape[1];
  const i64 w = t.shape[2];
  check(crop_h >= 1 && crop_h <= h && crop_w >= 1 && crop_w <= w, "tensor_to_ppm: crop outside tensor");
  PpmImage img;
  img.w = crop_w;
  img.h = crop_h;
  img.rgb.resize(static_cast<std::size_t>(3 * crop_w * crop_h));
  const float* p = t.ptr();
  const i64 hw = h * w;
  for (i64 y = 0; y < crop_h; ++y) {
    for (i64 x = 0; x < crop_w; ++x) {
      for (i64 c = 0; c < 3; ++c) {
        float v = p[c * hw + y * w + x];
        v = std::min(1.0f, std::max(0.0f, v));
        img.rgb[3 * (y * crop_w + x) + c] =
            static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
      }
    }
  }
  return img;
}

Tensor<float> pad_to_multiple(const Tensor<float>& t, i64 multiple) {
  check(t.rank() == 3 && t.shape[0] == 3, "pad_to_multiple: need [3,H,W]");
  check(multiple >= 1, "pad_to_multiple: multiple must be >= 1");
  const i64 h = t.shape[1];
  const i64 w = t.shape[2];
  const i64 hp = (h + multiple - 1) / multiple * multiple;
  const i64 wp = (w + multiple - 1) / multiple * multiple;
  if (hp == h && wp == w) return t;
  Tensor<float> out = Tensor<float>::zeros({3, hp, wp});
  const float* src = t.ptr();
  float* dst = out.ptr();
  for (i64 c = 0; c < 3; ++c) {
    for (i64 y = 0; y < hp; ++y) {
      const i64 sy = std::min(y, h - 1);
      for (i64 x = 0; x < wp; ++x) {
        const i64 sx = std::min(x, w - 1);
        dst[(c * hp + y) * wp + x] = src[(c * h + sy) * w + sx];
      }
    }
  }
  return out;
}

LoadedImage load_image(const std::filesystem::path& path) {
  const PpmImage img = read_ppm(path);
  LoadedImage out;
  out.orig_h = img.h;
  out.orig_w = img.w;
  out.tensor = pad_to_multiple(ppm_to_tensor(img), kSpatialMultiple);
  return out;
}

void save_image(const Tensor<float>& t, const std::filesystem::path& path, i64 orig_h, i64 orig_w) {
  Tensor<float> chw = t.detached();
  if (chw.rank() == 4 && chw.shape[0] == 1) {
    chw = reshape(chw, {t.shape[1], t.shape[2], t.shape[3]});
  }
  write_ppm(path, tensor_to_ppm(chw, orig_h, orig_w));
}

}  // namespace uwf
