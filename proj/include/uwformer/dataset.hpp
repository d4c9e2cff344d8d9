#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uwformer/common.hpp"

namespace uwf {

struct LabeledPair {
  std::string name;  // shared filename
  std::filesystem::path input;
  std::filesystem::path target;
};

// Expects dir/input and dir/target with filename-matched .ppm images.
// Returns pairs sorted by filename; a missing target aborts with its path.
std::vector<LabeledPair> scan_labeled(const std::filesystem::path& dir);

// Non-recursive .ppm listing, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace uwf
