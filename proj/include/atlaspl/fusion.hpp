#pragma once

#include <optional>
#include <span>
#include <vector>

#include "atlaspl/volume.hpp"

namespace atlaspl {

/// Per-atlas sensitivity (p) and specificity (q).
struct RaterPerformance {
  double sensitivity = 0.0;
  double specificity = 0.0;
};

/// Kernel width for the local intensity-similarity weights.
struct SigmaMode {
  bool automatic = true;
  double value = 0.0;  // sigma, used when !automatic

  static SigmaMode Auto() { return {}; }
  static SigmaMode Fixed(double sigma) { return {false, sigma}; }
};

struct FusionConfig {
  int max_iters = 100;
  double tol = 1e-6;
  // Foreground prior; defaults to the mean foreground fraction of the inputs.
  std::optional<double> prior;
  int radius = 1;
  SigmaMode sigma;
  int workers = 0;
};

inline constexpr double kParamFloor = 1e-6;
inline constexpr double kInitialPerformance = 0.99;

/// Normalized per-atlas voxel weights; w[j][v] sums to 1 over j.
struct WeightField {
  std::vector<ScalarField> weights;
  double sigma = 0.0;  // kernel width actually used
};

struct FusionResult {
  ScalarField posterior;
  LabelMap hard_labels;  // posterior >= 0.5
  std::vector<RaterPerformance> raters;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  // every input map was empty
  double prior = 0.0;
  // One entry per E-step (including the final one).
  std::vector<double> log_likelihood;
  // Mean |dp| + |dq| after each M-step.
  std::vector<double> parameter_change;
};

/// Fraction of maps voting foreground (non-zero); exactly 0.5 counts as foreground.
FusionResult majority_vote(std::span<const LabelMap> atlas_labels);

/// Binary STAPLE expectation-maximization. Needs >= 2 maps.
FusionResult staple_em(std::span<const LabelMap> atlas_labels, const FusionConfig& config = {});

/// w_j(v) proportional to exp(-SSD_j(v) / (2 sigma^2)), SSD_j the mean squared
/// target/atlas difference over the (2r+1)^3 patch at v, clipped at the grid
/// border. Automatic sigma^2 is the mean SSD over voxels where any of
/// `region_labels` is foreground (whole grid when none are given or the
/// region is empty).
WeightField local_weights(const Volume& target, std::span<const Volume> atlas_images, int radius,
                          SigmaMode sigma, std::span<const LabelMap> region_labels = {},
                          int workers = 0);

/// STAPLE with a logarithmic opinion pool: atlas j's likelihood factor at v is
/// raised to J * w_j(v), and the M-step uses the same exponents as weights.
/// Uniform weights reduce to staple_em.
FusionResult lop_fuse_weighted(std::span<const LabelMap> atlas_labels, const WeightField& weights,
                               const FusionConfig& config = {});

/// local_weights followed by lop_fuse_weighted.
FusionResult lop_fuse(const Volume& target, std::span<const Volume> atlas_images,
                      std::span<const LabelMap> atlas_labels, const FusionConfig& config = {});

}  // namespace atlaspl
