#include "uwformer/dataset.hpp"

#include <algorithm>

namespace uwf {

namespace fs = std::filesystem;

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

std::vector<LabeledPair> scan_labeled(const fs::path& dir) {
  const fs::path input_dir = dir / "input";
  const fs::path target_dir = dir / "target";
  if (!fs::is_directory(input_dir)) throw DataError("missing labeled input directory: " + input_dir.string());
  if (!fs::is_directory(target_dir)) throw DataError("missing labeled target directory: " + target_dir.string());

  std::vector<LabeledPair> pairs;
  for (const auto& input : list_images(input_dir)) {
    LabeledPair p;
    p.name = input.filename().string();
    p.input = input;
    p.target = target_dir / p.name;
    if (!fs::is_regular_file(p.target)) {
      throw DataError("missing target image for " + p.input.string() + " (expected " +
                      p.target.string() + ")");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace uwf
