#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "uwformer/checkpoint.hpp"
#include "uwformer/dataset.hpp"
#include "uwformer/image_io.hpp"
#include "uwformer/model.hpp"

namespace fs = std::filesystem;
using namespace uwf;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "uwf_io_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PpmImage random_ppm(i64 w, i64 h, std::uint64_t seed) {
  PpmImage img;
  img.w = w;
  img.h = h;
  img.rgb.resize(static_cast<std::size_t>(3 * w * h));
  std::mt19937_64 rng(seed);
  for (auto& b : img.rgb) b = static_cast<unsigned char>(rng() % 256);
  return img;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.encoder_blocks = {1, 1, 1, 1};
  cfg.decoder_blocks = {1, 1, 1};
  cfg.heads = {1, 2, 4, 8};
  cfg.ffc_blocks = 2;
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("ppm: decodes a hand-built 2x2 file exactly") {
  const fs::path dir = scratch_dir();
  const std::string bytes = std::string("P6\n2 2\n255\n") +
                            std::string("\x00\x33\x66\x99\xCC\xFF\x0A\x14\x1E\x28\x32\x3C", 12);
  write_bytes(dir / "a.ppm", bytes);
  const PpmImage img = read_ppm(dir / "a.ppm");
  CHECK(img.w == 2);
  CHECK(img.h == 2);
  REQUIRE(img.rgb.size() == 12);
  CHECK(img.rgb[0] == 0x00);
  CHECK(img.rgb[1] == 0x33);
  CHECK(img.rgb[5] == 0xFF);
  CHECK(img.rgb[11] == 0x3C);

  const Tensor<float> t = ppm_to_tensor(img);
  REQUIRE(t.shape == std::vector<i64>({3, 2, 2}));
  // Planar layout: red plane first, row-major within each plane.
  CHECK(t.vals()[0] == doctest::Approx(0x00 / 255.0).epsilon(1e-7));
  CHECK(t.vals()[1] == doctest::Approx(0x99 / 255.0).epsilon(1e-7));
  CHECK(t.vals()[4] == doctest::Approx(0x33 / 255.0).epsilon(1e-7));
  CHECK(t.vals()[8] == doctest::Approx(0x66 / 255.0).epsilon(1e-7));
}

TEST_CASE("ppm: header comments and loose whitespace are accepted") {
  const fs::path dir = scratch_dir();
  const std::string bytes =
      std::string("P6\n# camera rig 3\n 2 # width\n\t1\n# about to give maxval\n255\n") +
      std::string(6, '\x42');
  write_bytes(dir / "c.ppm", bytes);
  const PpmImage img = read_ppm(dir / "c.ppm");
  CHECK(img.w == 2);
  CHECK(img.h == 1);
  CHECK(img.rgb == std::vector<unsigned char>(6, 0x42));
}

TEST_CASE("ppm: write/read round trip is byte-exact") {
  const fs::path dir = scratch_dir();
  const PpmImage img = random_ppm(13, 7, 99);
  write_ppm(dir / "rt.ppm", img);
  const PpmImage back = read_ppm(dir / "rt.ppm");
  CHECK(back.w == img.w);
  CHECK(back.h == img.h);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("ppm: rejects the ascii variant by naming the magic") {
  const fs::path dir = scratch_dir();
  write_bytes(dir / "p3.ppm", "P3\n2 2\n255\n0 0 0 0 0 0 0 0 0 0 0 0\n");
  try {
    read_ppm(dir / "p3.ppm");
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("P6") != std::string::npos);
    CHECK(e.offset == 0);
  }
}

TEST_CASE("ppm: truncated payload reports the payload offset") {
  const fs::path dir = scratch_dir();
  write_bytes(dir / "t.ppm", std::string("P6\n2 2\n255\n") + std::string(10, 'x'));
  try {
    read_ppm(dir / "t.ppm");
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    CHECK(e.offset == 11);  // header is exactly 11 bytes
  }
}

TEST_CASE("ppm: only maxval 255 is supported") {
  const fs::path dir = scratch_dir();
  write_bytes(dir / "m.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, 'x'));
  CHECK_THROWS_WITH_AS(read_ppm(dir / "m.ppm"),
                       doctest::Contains("maxval"), DecodeError);
}

TEST_CASE("ppm: quantization clamps then rounds half up") {
  Tensor<float> t = Tensor<float>::zeros({3, 1, 2});
  // Channel-planar [3,1,2]: (r0 r1)(g0 g1)(b0 b1).
  t.vals() = {0.0f, 0.5f, 1.0f, -0.25f, 1.75f, 127.4f / 255.0f};
  const PpmImage img = tensor_to_ppm(t, 1, 2);
  CHECK(img.rgb[0] == 0);          // r0 = 0.0
  CHECK(img.rgb[1] == 255);        // g0 = 1.0
  CHECK(img.rgb[2] == 255);        // b0 = 1.75 clamps
  CHECK(img.rgb[3] == 128);        // r1 = 0.5 rounds up
  CHECK(img.rgb[4] == 0);          // g1 = -0.25 clamps
  CHECK(img.rgb[5] == 127);        // b1 just below the .5 boundary
}

TEST_CASE("ppm: padding replicates edges and cropping undoes it") {
  const PpmImage img = random_ppm(3, 2, 7);
  const Tensor<float> t = ppm_to_tensor(img);
  const Tensor<float> padded = pad_to_multiple(t, 4);
  REQUIRE(padded.shape == std::vector<i64>({3, 4, 4}));
  // Bottom-right corner of every channel replicates the source corner pixel.
  for (i64 c = 0; c < 3; ++c) {
    const float corner = t.vals()[static_cast<std::size_t>(c * 6 + 5)];
    CHECK(padded.vals()[static_cast<std::size_t>(c * 16 + 15)] == corner);
    CHECK(padded.vals()[static_cast<std::size_t>(c * 16 + 11)] == corner);
  }
  // Crop back and re-quantize: byte identical to the source image.
  const PpmImage back = tensor_to_ppm(padded, 2, 3);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("ppm: load pads to the model multiple, save restores the bytes") {
  const fs::path dir = scratch_dir();
  const PpmImage img = random_ppm(5, 7, 123);
  write_ppm(dir / "small.ppm", img);
  const LoadedImage li = load_image(dir / "small.ppm");
  CHECK(li.orig_h == 7);
  CHECK(li.orig_w == 5);
  REQUIRE(li.tensor.shape == std::vector<i64>({3, 32, 32}));
  save_image(li.tensor, dir / "back.ppm", li.orig_h, li.orig_w);
  CHECK(slurp(dir / "back.ppm") == slurp(dir / "small.ppm"));

  // The [1,3,H,W] batch form is accepted too.
  const Tensor<float> batched = reshape(li.tensor, {1, 3, 32, 32});
  save_image(batched, dir / "back4.ppm", li.orig_h, li.orig_w);
  CHECK(slurp(dir / "back4.ppm") == slurp(dir / "small.ppm"));
}

TEST_CASE("checkpoint: store round trip is bitwise and canonical") {
  const fs::path dir = scratch_dir();
  const ModelConfig cfg = tiny_config();
  const ParamStore<float> ps = build_params<float>(cfg, 42);

  std::vector<CheckpointEntry> entries = encode_config(cfg);
  append_store(entries, ps, "");
  save_checkpoint(dir / "m.uwf", entries);

  const std::vector<CheckpointEntry> loaded = load_checkpoint(dir / "m.uwf");
  const ModelConfig cfg2 = decode_config(loaded);
  CHECK(cfg2.base_channels == cfg.base_channels);
  CHECK(cfg2.encoder_blocks == cfg.encoder_blocks);
  CHECK(cfg2.decoder_blocks == cfg.decoder_blocks);
  CHECK(cfg2.heads == cfg.heads);
  CHECK(cfg2.ffc_blocks == cfg.ffc_blocks);
  CHECK(cfg2.expansion == cfg.expansion);

  ParamStore<float> ps2 = build_params<float>(cfg2, 7);  // different seed, then overwritten
  load_into_store(loaded, "", ps2);
  for (const auto& name : ps.names()) {
    REQUIRE(ps2.contains(name));
    CHECK(ps.at(name).vals() == ps2.at(name).vals());
  }

  // Serialization is canonical: saving the loaded entries reproduces the file.
  save_checkpoint(dir / "m2.uwf", loaded);
  CHECK(slurp(dir / "m2.uwf") == slurp(dir / "m.uwf"));
}

TEST_CASE("checkpoint: bad magic, version and dtype are rejected") {
  const fs::path dir = scratch_dir();
  write_bytes(dir / "bad.uwf", "NOPE\x01\x00\x00\x00\x00\x00");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.uwf"), DecodeError);

  // Build a real file, then corrupt the version field in place.
  std::vector<CheckpointEntry> entries;
  entries.push_back({"x", {2}, {1.0f, 2.0f}});
  save_checkpoint(dir / "v.uwf", entries);
  std::string bytes = slurp(dir / "v.uwf");
  bytes[4] = 9;
  write_bytes(dir / "v.uwf", bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "v.uwf"), doctest::Contains("version"), DecodeError);
}

TEST_CASE("checkpoint: loading into a store validates presence and shape") {
  const ModelConfig cfg = tiny_config();
  ParamStore<float> ps = build_params<float>(cfg, 1);

  std::vector<CheckpointEntry> entries;
  append_store(entries, ps, "");
  entries.pop_back();  // drop the last tensor
  CHECK_THROWS_AS(load_into_store(entries, "", ps), DataError);

  std::vector<CheckpointEntry> wrong;
  append_store(wrong, ps, "");
  wrong.front().shape = {1};
  wrong.front().values = {0.0f};
  CHECK_THROWS_WITH_AS(load_into_store(wrong, "", ps), doctest::Contains("shape"), DataError);
}

TEST_CASE("checkpoint: loaded values land in the existing buffers") {
  // enhance/eval fetch tensors from the store by name; loading must fill the
  // already-registered buffers rather than swap in new handles.
  const ModelConfig cfg = tiny_config();
  ParamStore<float> ps = build_params<float>(cfg, 3);
  const Tensor<float> view = ps.at("head.w");  // aliases the store's buffer

  std::vector<CheckpointEntry> entries;
  append_store(entries, ps, "");
  for (auto& e : entries)
    if (e.name == "head.w")
      for (auto& v : e.values) v = 0.125f;
  load_into_store(entries, "", ps);
  CHECK(view.vals()[0] == 0.125f);
}

TEST_CASE("dataset: labeled scan pairs by filename and sorts") {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "target");
  for (const char* name : {"b.ppm", "a.ppm", "c.ppm"}) {
    write_ppm(dir / "input" / name, random_ppm(2, 2, 1));
    write_ppm(dir / "target" / name, random_ppm(2, 2, 2));
  }
  write_bytes(dir / "input" / "notes.txt", "ignore me");

  const std::vector<LabeledPair> pairs = scan_labeled(dir);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].name == "a.ppm");
  CHECK(pairs[1].name == "b.ppm");
  CHECK(pairs[2].name == "c.ppm");
  CHECK(pairs[0].target == dir / "target" / "a.ppm");
}

TEST_CASE("dataset: a missing target names the offending file") {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "target");
  write_ppm(dir / "input" / "only.ppm", random_ppm(2, 2, 1));
  CHECK_THROWS_WITH_AS(scan_labeled(dir), doctest::Contains("only.ppm"), DataError);
  CHECK_THROWS_AS(list_images(dir / "nowhere"), DataError);
}
