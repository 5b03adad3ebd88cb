#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "atlaspl/volume.hpp"

namespace atlaspl {

struct Ellipsoid {
  std::array<double, 3> center{};  // voxels
  std::array<double, 3> radii{};   // voxels
  double intensity = 0.0;
  friend bool operator==(const Ellipsoid&, const Ellipsoid&) = default;
};

/// Synthetic multi-structure scene. Structure i (1-based) is structures[i-1].
struct PhantomSpec {
  Dims dims{64, 64, 64};
  Spacing spacing{};
  std::vector<Ellipsoid> structures;
  double background = 10.0;
  double amplitude = 2.0;   // max displacement per component, voxels
  int control_points = 5;   // per axis, for the smooth displacement grid
  double noise_sigma = 5.0;
  std::uint64_t seed = 0;

  /// 64^3, three ellipsoids with means 40/80/120 on background 10, noise 5,
  /// amplitude 2.
  static PhantomSpec desk_default();

  /// Cubic grid of `edge` voxels with centers, radii and amplitude scaled by
  /// edge / dims.x.
  [[nodiscard]] PhantomSpec scaled_to(int edge) const;

  /// Throws DegenerateInputError when structures overlap, leave the grid, or
  /// the amplitude is not below half the smallest inter-structure gap.
  void validate() const;

  /// Smallest voxel-center distance between two different structures in the
  /// undeformed scene (infinity with fewer than two structures).
  [[nodiscard]] double min_gap() const;
};

struct Subject {
  Volume image;
  LabelMap labels;
};

/// Subject `index` of the family: the base scene warped by a smooth random
/// displacement field plus Gaussian noise. Deterministic in (spec.seed, index).
/// When warped structures touch, the displacement is halved and retried up
/// to 5 times before failing.
Subject generate_subject(const PhantomSpec& spec, int index);

std::vector<Subject> generate(const PhantomSpec& spec, int n, int workers = 0);

struct RaterSpec {
  double sensitivity = 1.0;
  double specificity = 1.0;
  std::uint64_t seed = 0;
};

/// Each rater keeps a true-foreground voxel with probability p and a true
/// background voxel with probability q, independently per voxel.
std::vector<LabelMap> simulate_raters(const LabelMap& truth, std::span<const RaterSpec> raters);

}  // namespace atlaspl
