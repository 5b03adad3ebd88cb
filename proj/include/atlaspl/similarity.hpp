#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atlaspl/volume.hpp"

namespace atlaspl {

inline constexpr int kDefaultBins = 64;

struct IntensityRange {
  double min = 0.0;
  double max = 0.0;
};

IntensityRange intensity_range(std::span<const float> values);

/// Min-max linear bin of `v`: floor(bins * (v - min) / (max - min)), with the
/// maximum mapped into the last bin. A constant range maps everything to 0.
int bin_index(double v, const IntensityRange& r, int bins);

struct JointHistogram {
  int bins = 0;
  std::vector<std::int64_t> counts;  // counts[x * bins + y]
  std::int64_t n = 0;
  IntensityRange range_x;
  IntensityRange range_y;

  [[nodiscard]] std::int64_t count(int x, int y) const {
    return counts[static_cast<std::size_t>(x) * static_cast<std::size_t>(bins) + static_cast<std::size_t>(y)];
  }
};

/// Joint histogram of paired voxels; each image binned over its own range.
JointHistogram joint_histogram(const Volume& x, const Volume& y, int bins = kDefaultBins);

/// Plug-in mutual information in bits. Tiny negative round-off is clamped to 0.
double mutual_information(const JointHistogram& h);

/// Plug-in entropy (bits) of the x and y marginals.
double marginal_entropy_x(const JointHistogram& h);
double marginal_entropy_y(const JointHistogram& h);

/// MI between the crops of `u` and `l` to the same box.
double structure_similarity(const Volume& u, const Volume& l, const BoundingBox& b,
                            int bins = kDefaultBins);

/// Symmetric pairwise MI over an image set for one structure's box.
struct SimilarityMatrix {
  int structure_id = 0;
  int bins = kDefaultBins;
  BoundingBox bbox;
  std::vector<std::string> image_ids;
  std::vector<double> scores;  // row-major n x n

  [[nodiscard]] std::size_t size() const { return image_ids.size(); }
  [[nodiscard]] double at(std::size_t i, std::size_t j) const { return scores[i * size() + j]; }
  /// Throws ManifestError when `id` is unknown.
  [[nodiscard]] std::size_t index_of(const std::string& id) const;
  [[nodiscard]] double score(const std::string& a, const std::string& b) const {
    return at(index_of(a), index_of(b));
  }
};

SimilarityMatrix build_similarity_matrix(std::span<const Volume> images,
                                         std::vector<std::string> image_ids, const BoundingBox& b,
                                         int bins = kDefaultBins, int workers = 0);

/// TSV with a header row of ids and 9-significant-digit scores, plus a JSON
/// sidecar (same stem, .json) holding structure_id, bins and bbox.
void write_similarity(const SimilarityMatrix& m, const std::filesystem::path& tsv_path);
SimilarityMatrix read_similarity(const std::filesystem::path& tsv_path);

}  // namespace atlaspl
