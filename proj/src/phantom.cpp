#include "atlaspl/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "atlaspl/parallel.hpp"
#include "atlaspl/rng.hpp"

namespace atlaspl {
namespace {

constexpr int kMaxRetries = 5;

bool inside(const Ellipsoid& e, double x, double y, double z) {
  const double dx = (x - e.center[0]) / e.radii[0];
  const double dy = (y - e.center[1]) / e.radii[1];
  const double dz = (z - e.center[2]) / e.radii[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

std::uint16_t label_at(const PhantomSpec& spec, double x, double y, double z) {
  for (std::size_t s = 0; s < spec.structures.size(); ++s) {
    if (inside(spec.structures[s], x, y, z)) return static_cast<std::uint16_t>(s + 1);
  }
  return 0;
}

LabelMap base_labels(const PhantomSpec& spec) {
  LabelMap out(spec.dims, spec.spacing);
  for (int k = 0; k < spec.dims.z; ++k)
    for (int j = 0; j < spec.dims.y; ++j)
      for (int i = 0; i < spec.dims.x; ++i) out.at(i, j, k) = label_at(spec, i, j, k);
  return out;
}

// Control-point displacements in [-1, 1], one grid per component.
struct ControlGrid {
  int n;
  std::array<std::vector<double>, 3> values;

  [[nodiscard]] double at(int axis, int i, int j, int k) const {
    return values[static_cast<std::size_t>(axis)][static_cast<std::size_t>(i + n * (j + n * k))];
  }
};

ControlGrid draw_controls(const PhantomSpec& spec, int index) {
  ControlGrid g{spec.control_points, {}};
  CounterRng rng(spec.seed, 2 * static_cast<std::uint64_t>(index));
  const auto count = static_cast<std::size_t>(g.n) * g.n * g.n;
  for (auto& comp : g.values) {
    comp.resize(count);
    for (auto& v : comp) v = rng.uniform(-1.0, 1.0);
  }
  return g;
}

// Trilinear interpolation of the control grid stretched over the voxel grid.
std::array<double, 3> displacement(const ControlGrid& g, const Dims& d, int i, int j, int k) {
  const Index3 p{i, j, k};
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double c = d[a] > 1 ? static_cast<double>(p[a]) * (g.n - 1) / (d[a] - 1) : 0.0;
    base[a] = std::min(static_cast<int>(std::floor(c)), g.n - 2);
    frac[a] = c - base[a];
  }
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    Index3 q{};
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? frac[a] : 1.0 - frac[a];
      q[a] = base[a] + bit;
    }
    for (int axis = 0; axis < 3; ++axis) out[axis] += w * g.at(axis, q[0], q[1], q[2]);
  }
  return out;
}

bool structures_touch(const LabelMap& l) {
  const Dims d = l.dims();
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        const auto a = l.at(i, j, k);
        if (a == 0) continue;
        const auto differs = [a](std::uint16_t b) { return b != 0 && b != a; };
        if ((i + 1 < d.x && differs(l.at(i + 1, j, k))) || (j + 1 < d.y && differs(l.at(i, j + 1, k))) ||
            (k + 1 < d.z && differs(l.at(i, j, k + 1)))) {
          return true;
        }
      }
  return false;
}

}  // namespace

PhantomSpec PhantomSpec::desk_default() {
  PhantomSpec s;
  s.structures = {
      {{20.0, 24.0, 32.0}, {9.0, 7.0, 8.0}, 40.0},
      {{44.0, 24.0, 32.0}, {9.0, 7.0, 8.0}, 80.0},
      {{32.0, 46.0, 32.0}, {12.0, 6.0, 8.0}, 120.0},
  };
  return s;
}

PhantomSpec PhantomSpec::scaled_to(int edge) const {
  if (edge < 1) throw DegenerateInputError("phantom edge must be positive, got " + std::to_string(edge));
  PhantomSpec s = *this;
  const double scale = static_cast<double>(edge) / dims.x;
  s.dims = {edge, edge, edge};
  for (auto& e : s.structures) {
    for (auto& v : e.center) v *= scale;
    for (auto& v : e.radii) v *= scale;
  }
  s.amplitude *= scale;
  return s;
}

double PhantomSpec::min_gap() const {
  const LabelMap base = base_labels(*this);
  // Only boundary voxels can realize the minimum distance.
  std::vector<std::vector<Index3>> surface(structures.size());
  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) {
        const auto l = base.at(i, j, k);
        if (l == 0) continue;
        bool edge = false;
        for (const auto& o : {Index3{1, 0, 0}, Index3{-1, 0, 0}, Index3{0, 1, 0}, Index3{0, -1, 0},
                              Index3{0, 0, 1}, Index3{0, 0, -1}}) {
          const int a = i + o[0], b = j + o[1], c = k + o[2];
          if (a < 0 || b < 0 || c < 0 || a >= dims.x || b >= dims.y || c >= dims.z || base.at(a, b, c) != l) {
            edge = true;
            break;
          }
        }
        if (edge) surface[l - 1u].push_back({i, j, k});
      }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < surface.size(); ++s)
    for (std::size_t t = s + 1; t < surface.size(); ++t)
      for (const auto& p : surface[s])
        for (const auto& q : surface[t]) {
          const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
          best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
  return best;
}

void PhantomSpec::validate() const {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw DegenerateInputError("phantom dims must be positive");
  if (structures.empty()) throw DegenerateInputError("phantom needs at least one structure");
  if (control_points < 2) throw DegenerateInputError("phantom needs at least 2 control points per axis");
  if (amplitude < 0.0 || noise_sigma < 0.0) throw DegenerateInputError("amplitude and noise must be non-negative");
  for (std::size_t s = 0; s < structures.size(); ++s) {
    const auto& e = structures[s];
    for (int a = 0; a < 3; ++a) {
      if (!(e.radii[static_cast<std::size_t>(a)] > 0.0)) {
        throw DegenerateInputError("structure " + std::to_string(s + 1) + " has a non-positive radius");
      }
    }
  }
  // Overlap at zero deformation: a voxel center inside two ellipsoids.
  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) {
        int hits = 0;
        for (const auto& e : structures) hits += inside(e, i, j, k);
        if (hits > 1) throw DegenerateInputError("phantom structures overlap in the undeformed scene");
      }
  if (structures.size() > 1 && !(amplitude < min_gap() / 2.0)) {
    throw DegenerateInputError("deformation amplitude must be below half the minimum structure gap");
  }
}

Subject generate_subject(const PhantomSpec& spec, int index) {
  const Dims d = spec.dims;
  const ControlGrid controls = draw_controls(spec, index);
  double amplitude = spec.amplitude;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt, amplitude *= 0.5) {
    LabelMap labels(d, spec.spacing);
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          double x = i, y = j, z = k;
          if (amplitude > 0.0) {
            const auto disp = displacement(controls, d, i, j, k);
            x += amplitude * disp[0];
            y += amplitude * disp[1];
            z += amplitude * disp[2];
          }
          labels.at(i, j, k) = label_at(spec, x, y, z);
        }
    if (spec.structures.size() > 1 && structures_touch(labels)) continue;

    Volume image(d, spec.spacing);
    CounterRng noise(spec.seed, 2 * static_cast<std::uint64_t>(index) + 1);
    for (std::size_t n = 0; n < labels.size(); ++n) {
      const double mean = labels[n] == 0 ? spec.background : spec.structures[labels[n] - 1u].intensity;
      image[n] = static_cast<float>(spec.noise_sigma > 0.0 ? mean + spec.noise_sigma * noise.normal() : mean);
    }
    return {std::move(image), std::move(labels)};
  }
  throw DegenerateInputError("phantom subject " + std::to_string(index) + ": structures still touch after " +
                             std::to_string(kMaxRetries) + " damped retries");
}

std::vector<Subject> generate(const PhantomSpec& spec, int n, int workers) {
  if (n <= 0) throw DegenerateInputError("subject count must be positive");
  spec.validate();
  std::vector<Subject> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), workers, [&](std::size_t i) { out[i] = generate_subject(spec, static_cast<int>(i)); });
  return out;
}

std::vector<LabelMap> simulate_raters(const LabelMap& truth, std::span<const RaterSpec> raters) {
  if (raters.empty()) throw DegenerateInputError("need at least one rater");
  std::vector<LabelMap> out;
  out.reserve(raters.size());
  for (const auto& r : raters) {
    if (!(r.sensitivity >= 0.0 && r.sensitivity <= 1.0 && r.specificity >= 0.0 && r.specificity <= 1.0)) {
      throw DegenerateInputError("rater sensitivity/specificity must lie in [0, 1]");
    }
    const CounterRng rng(r.seed, 0);
    LabelMap m(truth.dims(), truth.spacing());
    for (std::size_t n = 0; n < truth.size(); ++n) {
      const double u = rng.uniform_at(n);
      if (truth[n] != 0) {
        m[n] = u < r.sensitivity ? 1 : 0;
      } else {
        m[n] = u < r.specificity ? 0 : 1;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace atlaspl
