#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atlaspl/errors.hpp"

namespace atlaspl {

struct Dims {
  int x = 0;
  int y = 0;
  int z = 0;

  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  [[nodiscard]] int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

using Index3 = std::array<int, 3>;

std::string to_string(const Dims& d);

/// Linear offset of voxel (i, j, k); x varies fastest. Every module goes
/// through this accessor.
inline std::size_t linear_index(const Dims& d, int i, int j, int k) {
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(d.x) *
             (static_cast<std::size_t>(j) + static_cast<std::size_t>(d.y) * static_cast<std::size_t>(k));
}

/// Dense 3D grid with spacing metadata. Values are stored x-fastest.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(Dims dims, Spacing spacing, T fill = T{}) : dims_(dims), spacing_(spacing) {
    check_dims(dims);
    data_.assign(dims.count(), fill);
  }

  Grid(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_dims(dims);
    if (data_.size() != dims.count()) {
      throw ShapeError("voxel buffer holds " + std::to_string(data_.size()) +
                       " values, grid " + to_string(dims) + " needs " +
                       std::to_string(dims.count()));
    }
  }

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  [[nodiscard]] T& at(int i, int j, int k) { return data_[linear_index(dims_, i, j, k)]; }
  [[nodiscard]] const T& at(int i, int j, int k) const {
    return data_[linear_index(dims_, i, j, k)];
  }
  [[nodiscard]] T& operator[](std::size_t n) { return data_[n]; }
  [[nodiscard]] const T& operator[](std::size_t n) const { return data_[n]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static void check_dims(const Dims& d) {
    if (d.x <= 0 || d.y <= 0 || d.z <= 0) {
      throw ShapeError("grid dimensions must be positive, got " + to_string(d));
    }
  }

  Dims dims_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint16_t>;
using ScalarField = Grid<double>;

/// Throws FormatError when any intensity is NaN or infinite.
void require_finite(const Volume& v);

template <typename A, typename B>
void require_same_dims(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(what) + ": grid mismatch " + to_string(a.dims()) + " vs " +
                     to_string(b.dims()));
  }
}

/// Axis-aligned box of inclusive voxel indices.
struct BoundingBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};
  int structure_id = 0;

  [[nodiscard]] Dims extent() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  [[nodiscard]] bool fits(const Dims& d) const;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Box spanning the whole grid.
BoundingBox full_box(const Dims& d, int structure_id = 0);

/// Tightest box around every voxel labeled `structure_id` in any of `maps`,
/// grown by `margin` voxels per face and clamped to the grid.
BoundingBox structure_bbox(std::span<const LabelMap> maps, int structure_id, int margin = 0);

template <typename T>
Grid<T> crop(const Grid<T>& v, const BoundingBox& b) {
  if (!b.fits(v.dims())) {
    throw BoundsError("box [" + std::to_string(b.lo[0]) + "," + std::to_string(b.lo[1]) + "," +
                      std::to_string(b.lo[2]) + "]..[" + std::to_string(b.hi[0]) + "," +
                      std::to_string(b.hi[1]) + "," + std::to_string(b.hi[2]) +
                      "] exceeds grid " + to_string(v.dims()));
  }
  const Dims e = b.extent();
  std::vector<T> out;
  out.reserve(e.count());
  for (int k = b.lo[2]; k <= b.hi[2]; ++k)
    for (int j = b.lo[1]; j <= b.hi[1]; ++j)
      for (int i = b.lo[0]; i <= b.hi[0]; ++i) out.push_back(v.at(i, j, k));
  return Grid<T>(e, v.spacing(), std::move(out));
}

/// 2|A∩B| / (|A|+|B|) over voxels equal to `structure_id`; 1 when both are empty.
double dice(const LabelMap& a, const LabelMap& b, int structure_id);

/// 1 where `labels == structure_id`, 0 elsewhere.
LabelMap binarize(const LabelMap& labels, int structure_id);

/// Largest label value present.
int max_label(const LabelMap& labels);

}  // namespace atlaspl
