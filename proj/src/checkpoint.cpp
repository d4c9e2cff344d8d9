#include "uwformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace uwf {

namespace {

constexpr char kMagic[4] = {'U', 'W', 'F', '1'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

i64 shape_numel(const std::vector<i64>& shape) {
  i64 n = 1;
  for (i64 d : shape) n *= d;
  return n;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    check(shape_numel(e.shape) == static_cast<i64>(e.values.size()),
          "checkpoint: entry " + e.name + " shape does not match value count");
    nlohmann::json t;
    t["name"] = e.name;
    t["dtype"] = "f32";
    t["shape"] = e.shape;
    t["offset"] = offset;
    header["tensors"].push_back(std::move(t));
    offset += e.values.size() * sizeof(float);
  }
  const std::string header_str = header.dump();

  std::string head;
  head.append(kMagic, 4);
  put_u16(head, kVersion);
  put_u32(head, static_cast<std::uint32_t>(header_str.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& e : entries) {
    out.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 10 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw DecodeError("not a UWF1 checkpoint", 0);
  }
  const std::uint16_t version = get_u16(buf.data() + 4);
  if (version != kVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t header_len = get_u32(buf.data() + 6);
  if (buf.size() < 10 + static_cast<std::size_t>(header_len)) {
    throw DecodeError("truncated checkpoint header", 10);
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + 10, buf.begin() + 10 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad checkpoint header JSON: ") + e.what(), 10);
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw DecodeError("checkpoint header lacks a tensors array", 10);
  }

  const std::size_t payload_start = 10 + header_len;
  std::vector<CheckpointEntry> entries;
  for (const auto& t : header["tensors"]) {
    CheckpointEntry e;
    try {
      e.name = t.at("name").get<std::string>();
      const std::string dtype = t.at("dtype").get<std::string>();
      if (dtype != "f32") throw DecodeError("unsupported dtype " + dtype + " for " + e.name, payload_start);
      e.shape = t.at("shape").get<std::vector<i64>>();
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const i64 numel = shape_numel(e.shape);
      if (numel < 0) throw DecodeError("negative shape for " + e.name, payload_start);
      const std::size_t begin = payload_start + offset;
      const std::size_t bytes = static_cast<std::size_t>(numel) * sizeof(float);
      if (begin + bytes > buf.size()) {
        throw DecodeError("truncated payload for tensor " + e.name, begin);
      }
      e.values.resize(static_cast<std::size_t>(numel));
      std::memcpy(e.values.data(), buf.data() + begin, bytes);
    } catch (const nlohmann::json::exception& ex) {
      throw DecodeError(std::string("bad tensor record: ") + ex.what(), 10);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<CheckpointEntry> encode_config(const ModelConfig& cfg) {
  auto vec_entry = [](const std::string& name, const std::vector<i64>& v) {
    CheckpointEntry e;
    e.name = name;
    e.shape = {static_cast<i64>(v.size())};
    for (i64 x : v) e.values.push_back(static_cast<float>(x));
    return e;
  };
  std::vector<CheckpointEntry> out;
  out.push_back(vec_entry("__config__.base_channels", {cfg.base_channels}));
  out.push_back(vec_entry("__config__.encoder_blocks", cfg.encoder_blocks));
  out.push_back(vec_entry("__config__.decoder_blocks", cfg.decoder_blocks));
  out.push_back(vec_entry("__config__.heads", cfg.heads));
  out.push_back(vec_entry("__config__.ffc_blocks", {cfg.ffc_blocks}));
  CheckpointEntry exp;
  exp.name = "__config__.expansion";
  exp.shape = {1};
  exp.values = {static_cast<float>(cfg.expansion)};
  out.push_back(std::move(exp));
  return out;
}

ModelConfig decode_config(const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto need = [&](const std::string& name) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint is missing " + name);
    return *it->second;
  };
  auto as_ints = [](const CheckpointEntry& e) {
    std::vector<i64> v;
    for (float f : e.values) v.push_back(static_cast<i64>(f));
    return v;
  };
  ModelConfig cfg;
  cfg.base_channels = as_ints(need("__config__.base_channels")).at(0);
  cfg.encoder_blocks = as_ints(need("__config__.encoder_blocks"));
  cfg.decoder_blocks = as_ints(need("__config__.decoder_blocks"));
  cfg.heads = as_ints(need("__config__.heads"));
  cfg.ffc_blocks = as_ints(need("__config__.ffc_blocks")).at(0);
  cfg.expansion = static_cast<double>(need("__config__.expansion").values.at(0));
  cfg.validate();
  return cfg;
}

void append_store(std::vector<CheckpointEntry>& entries, const ParamStore<float>& ps,
                  const std::string& prefix) {
  for (const auto& name : ps.names()) {
    const Tensor<float>& t = ps.at(name);
    CheckpointEntry e;
    e.name = prefix + name;
    e.shape = t.shape;
    e.values = t.vals();
    entries.push_back(std::move(e));
  }
}

void load_into_store(const std::vector<CheckpointEntry>& entries, const std::string& prefix,
                     ParamStore<float>& ps) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (const auto& name : ps.names()) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + prefix + name);
    const CheckpointEntry& e = *it->second;
    Tensor<float>& t = ps.at(name);
    if (e.shape != t.shape) throw DataError("checkpoint tensor " + e.name + " has the wrong shape");
    t.vals() = e.values;
  }
}

}  // namespace uwf
