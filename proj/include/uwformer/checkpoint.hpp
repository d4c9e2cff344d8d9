#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uwformer/model.hpp"
#include "uwformer/params.hpp"

namespace uwf {

// Container format: magic "UWF1", u16 version (little-endian), u32 header
// length, a UTF-8 JSON header listing {name, dtype, shape, offset} per tensor
// in payload order, then raw little-endian f32 payloads. Offsets are relative
// to the end of the header. Round-trips bit-exactly.
//
// Name prefixes inside a training checkpoint:
//   __config__.*   model hyperparameters (stored as f32 vectors)
//   <plain>        student parameters
//   __teacher__.*  teacher parameters
//   __opt__.m.*, __opt__.v.*  optimizer moments
//   __state__.step, __state__.epoch  training progress counters

struct CheckpointEntry {
  std::string name;
  std::vector<i64> shape;
  std::vector<float> values;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointEntry> encode_config(const ModelConfig& cfg);
ModelConfig decode_config(const std::vector<CheckpointEntry>& entries);

void append_store(std::vector<CheckpointEntry>& entries, const ParamStore<float>& ps,
                  const std::string& prefix);

// Copies matching entries into an already-built store; every store tensor must
// be present with the right shape.
void load_into_store(const std::vector<CheckpointEntry>& entries, const std::string& prefix,
                     ParamStore<float>& ps);

}  // namespace uwf
