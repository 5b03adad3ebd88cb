#include "atlaspl/volume.hpp"

#include <algorithm>
#include <cmath>

namespace atlaspl {

std::string to_string(const Dims& d) {
  return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

void require_finite(const Volume& v) {
  const auto vals = v.values();
  const auto bad = std::find_if(vals.begin(), vals.end(), [](float f) { return !std::isfinite(f); });
  if (bad != vals.end()) {
    throw FormatError("non-finite intensity at linear index " +
                      std::to_string(std::distance(vals.begin(), bad)));
  }
}

bool BoundingBox::fits(const Dims& d) const {
  for (int a = 0; a < 3; ++a) {
    if (lo[a] < 0 || lo[a] > hi[a] || hi[a] >= d[a]) return false;
  }
  return true;
}

BoundingBox full_box(const Dims& d, int structure_id) {
  return {{0, 0, 0}, {d.x - 1, d.y - 1, d.z - 1}, structure_id};
}

BoundingBox structure_bbox(std::span<const LabelMap> maps, int structure_id, int margin) {
  if (maps.empty()) throw EmptyStructureError("no label maps given");
  if (structure_id <= 0) throw EmptyStructureError("structure id must be positive");
  if (margin < 0) throw BoundsError("margin must be non-negative");
  const Dims d = maps.front().dims();
  Index3 lo{d.x, d.y, d.z};
  Index3 hi{-1, -1, -1};
  const auto sid = static_cast<std::uint16_t>(structure_id);
  for (const auto& m : maps) {
    require_same_dims(maps.front(), m, "structure_bbox");
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          if (m.at(i, j, k) != sid) continue;
          const Index3 p{i, j, k};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
          }
        }
  }
  if (hi[0] < 0) {
    throw EmptyStructureError("structure " + std::to_string(structure_id) +
                              " absent from every label map");
  }
  BoundingBox b;
  b.structure_id = structure_id;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = std::max(0, lo[a] - margin);
    b.hi[a] = std::min(d[a] - 1, hi[a] + margin);
  }
  return b;
}

double dice(const LabelMap& a, const LabelMap& b, int structure_id) {
  require_same_dims(a, b, "dice");
  const auto sid = static_cast<std::uint16_t>(structure_id);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const bool in_a = a[n] == sid;
    const bool in_b = b[n] == sid;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

LabelMap binarize(const LabelMap& labels, int structure_id) {
  LabelMap out(labels.dims(), labels.spacing());
  const auto sid = static_cast<std::uint16_t>(structure_id);
  for (std::size_t n = 0; n < labels.size(); ++n) out[n] = labels[n] == sid ? 1 : 0;
  return out;
}

int max_label(const LabelMap& labels) {
  const auto vals = labels.values();
  return vals.empty() ? 0 : *std::max_element(vals.begin(), vals.end());
}

}  // namespace atlaspl
