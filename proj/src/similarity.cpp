#include "atlaspl/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "atlaspl/parallel.hpp"

namespace atlaspl {
namespace {

void check_bins(int bins) {
  if (bins < 2) throw DegenerateInputError("histogram needs at least 2 bins, got " + std::to_string(bins));
}

std::vector<std::uint16_t> bin_all(std::span<const float> values, int bins, IntensityRange& r) {
  r = intensity_range(values);
  std::vector<std::uint16_t> out(values.size());
  for (std::size_t n = 0; n < values.size(); ++n) {
    out[n] = static_cast<std::uint16_t>(bin_index(values[n], r, bins));
  }
  return out;
}

JointHistogram histogram_from_bins(std::span<const std::uint16_t> bx, std::span<const std::uint16_t> by,
                                   int bins, const IntensityRange& rx, const IntensityRange& ry) {
  JointHistogram h;
  h.bins = bins;
  h.counts.assign(static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins), 0);
  h.range_x = rx;
  h.range_y = ry;
  for (std::size_t n = 0; n < bx.size(); ++n) {
    ++h.counts[static_cast<std::size_t>(bx[n]) * static_cast<std::size_t>(bins) + by[n]];
  }
  h.n = static_cast<std::int64_t>(bx.size());
  return h;
}

double entropy_of(const std::vector<std::int64_t>& marginal, std::int64_t n) {
  double h = 0.0;
  const double total = static_cast<double>(n);
  for (const auto c : marginal) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

std::vector<std::int64_t> marginal(const JointHistogram& h, bool rows) {
  if (h.n <= 0) throw DegenerateInputError("empty joint histogram");
  std::vector<std::int64_t> m(static_cast<std::size_t>(h.bins), 0);
  for (int x = 0; x < h.bins; ++x)
    for (int y = 0; y < h.bins; ++y) m[static_cast<std::size_t>(rows ? x : y)] += h.count(x, y);
  return m;
}

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::filesystem::path sidecar_path(const std::filesystem::path& tsv) {
  auto p = tsv;
  p.replace_extension(".json");
  return p;
}

}  // namespace

IntensityRange intensity_range(std::span<const float> values) {
  if (values.empty()) throw DegenerateInputError("empty intensity set");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {static_cast<double>(*lo), static_cast<double>(*hi)};
}

int bin_index(double v, const IntensityRange& r, int bins) {
  const double width = r.max - r.min;
  if (!(width > 0.0)) return 0;
  const double t = std::floor(static_cast<double>(bins) * (v - r.min) / width);
  if (t <= 0.0) return 0;
  if (t >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<int>(t);
}

JointHistogram joint_histogram(const Volume& x, const Volume& y, int bins) {
  check_bins(bins);
  require_same_dims(x, y, "joint_histogram");
  IntensityRange rx, ry;
  const auto bx = bin_all(x.values(), bins, rx);
  const auto by = bin_all(y.values(), bins, ry);
  return histogram_from_bins(bx, by, bins, rx, ry);
}

double marginal_entropy_x(const JointHistogram& h) { return entropy_of(marginal(h, true), h.n); }
double marginal_entropy_y(const JointHistogram& h) { return entropy_of(marginal(h, false), h.n); }

double mutual_information(const JointHistogram& h) {
  const auto px = marginal(h, true);
  const auto py = marginal(h, false);
  const double n = static_cast<double>(h.n);
  double mi = 0.0;
  for (int x = 0; x < h.bins; ++x) {
    if (px[static_cast<std::size_t>(x)] == 0) continue;
    const double rx = static_cast<double>(px[static_cast<std::size_t>(x)]);
    for (int y = 0; y < h.bins; ++y) {
      const auto c = h.count(x, y);
      if (c == 0) continue;
      const double joint = static_cast<double>(c);
      mi += (joint / n) * std::log2(joint * n / (rx * static_cast<double>(py[static_cast<std::size_t>(y)])));
    }
  }
  return std::max(0.0, mi);
}

double structure_similarity(const Volume& u, const Volume& l, const BoundingBox& b, int bins) {
  return mutual_information(joint_histogram(crop(u, b), crop(l, b), bins));
}

std::size_t SimilarityMatrix::index_of(const std::string& id) const {
  const auto it = std::find(image_ids.begin(), image_ids.end(), id);
  if (it == image_ids.end()) throw ManifestError("image id '" + id + "' not in similarity matrix");
  return static_cast<std::size_t>(std::distance(image_ids.begin(), it));
}

SimilarityMatrix build_similarity_matrix(std::span<const Volume> images,
                                         std::vector<std::string> image_ids, const BoundingBox& b,
                                         int bins, int workers) {
  check_bins(bins);
  if (images.size() < 2) throw DegenerateInputError("similarity matrix needs at least 2 images");
  if (image_ids.size() != images.size()) throw ShapeError("image id count does not match image count");
  {
    auto sorted = image_ids;
    std::sort(sorted.begin(), sorted.end());
    const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) throw ManifestError("duplicate image id '" + *dup + "'");
  }
  for (const auto& im : images) require_same_dims(images.front(), im, "build_similarity_matrix");

  const std::size_t n = images.size();
  std::vector<std::vector<std::uint16_t>> binned(n);
  std::vector<IntensityRange> ranges(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Volume c = crop(images[i], b);
    binned[i] = bin_all(c.values(), bins, ranges[i]);
  });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);

  SimilarityMatrix m;
  m.structure_id = b.structure_id;
  m.bins = bins;
  m.bbox = b;
  m.image_ids = std::move(image_ids);
  m.scores.assign(n * n, 0.0);
  parallel_for(pairs.size(), workers, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    try {
      const double s = mutual_information(histogram_from_bins(binned[i], binned[j], bins, ranges[i], ranges[j]));
      m.scores[i * n + j] = s;
      m.scores[j * n + i] = s;
    } catch (const Error& e) {
      throw Error("similarity of pair (" + m.image_ids[i] + ", " + m.image_ids[j] + "): " + e.what());
    }
  });
  return m;
}

void write_similarity(const SimilarityMatrix& m, const std::filesystem::path& tsv_path) {
  std::ofstream out(tsv_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + tsv_path.string() + " for writing");
  out << "image_id";
  for (const auto& id : m.image_ids) out << '\t' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.image_ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) out << '\t' << format_score(m.at(i, j));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + tsv_path.string());

  nlohmann::ordered_json side;
  side["structure_id"] = m.structure_id;
  side["bins"] = m.bins;
  side["bbox"] = {{"lo", m.bbox.lo}, {"hi", m.bbox.hi}};
  std::ofstream js(sidecar_path(tsv_path), std::ios::trunc);
  if (!js) throw IoError("cannot open " + sidecar_path(tsv_path).string() + " for writing");
  js << side.dump(2) << '\n';
}

SimilarityMatrix read_similarity(const std::filesystem::path& tsv_path) {
  std::ifstream in(tsv_path);
  if (!in) throw IoError("cannot open " + tsv_path.string());
  SimilarityMatrix m;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(tsv_path.string() + ": empty similarity file");
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, '\t');
    while (std::getline(hs, cell, '\t')) m.image_ids.push_back(cell);
  }
  const std::size_t n = m.image_ids.size();
  m.scores.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError(tsv_path.string() + ": missing row " + std::to_string(i));
    std::istringstream rs(line);
    std::string cell;
    std::getline(rs, cell, '\t');
    if (cell != m.image_ids[i]) throw FormatError(tsv_path.string() + ": row id '" + cell + "' out of order");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::getline(rs, cell, '\t')) throw FormatError(tsv_path.string() + ": short row " + cell);
      try {
        m.scores[i * n + j] = std::stod(cell);
      } catch (const std::exception&) {
        throw FormatError(tsv_path.string() + ": bad score '" + cell + "'");
      }
    }
  }
  const auto side = sidecar_path(tsv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream js(side);
    try {
      const auto j = nlohmann::json::parse(js);
      m.structure_id = j.at("structure_id").get<int>();
      m.bins = j.at("bins").get<int>();
      m.bbox.lo = j.at("bbox").at("lo").get<Index3>();
      m.bbox.hi = j.at("bbox").at("hi").get<Index3>();
      m.bbox.structure_id = m.structure_id;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
  }
  return m;
}

}  // namespace atlaspl
