#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "atlaspl/volume.hpp"

namespace atlaspl {

struct StructureInfo {
  int id = 0;
  std::string name;
};

struct ImageEntry {
  std::string id;
  std::filesystem::path image;
  // Multi-class label map. Used as an atlas only for expert-labeled ids;
  // for every other id it is ground truth for scoring.
  std::optional<std::filesystem::path> labels;
};

/// Dataset description, stored as JSON (see docs/manifest.md). Relative paths
/// resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<StructureInfo> structures;
  std::vector<ImageEntry> images;
  std::vector<std::string> expert_labeled;
  std::vector<BoundingBox> bboxes;  // optional template box table
  std::filesystem::path base_dir;

  /// Throws ManifestError on duplicate ids, unknown experts, experts without
  /// labels, or an empty structure list.
  void validate() const;

  [[nodiscard]] const ImageEntry& image(const std::string& id) const;
  [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const;
  [[nodiscard]] bool is_expert(const std::string& id) const;
  [[nodiscard]] std::string structure_name(int id) const;

  static DatasetManifest load(const std::filesystem::path& path);
  /// Paths are written as stored (relative ones stay relative).
  void save(const std::filesystem::path& path) const;
};

}  // namespace atlaspl
