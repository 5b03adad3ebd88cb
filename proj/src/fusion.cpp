#include "atlaspl/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "atlaspl/parallel.hpp"

namespace atlaspl {
namespace {

void check_maps(std::span<const LabelMap> maps, std::size_t min_count, const char* what) {
  if (maps.size() < min_count) {
    throw DegenerateInputError(std::string(what) + " needs at least " + std::to_string(min_count) +
                               " label maps, got " + std::to_string(maps.size()));
  }
  for (const auto& m : maps) require_same_dims(maps.front(), m, what);
}

double mean_foreground_fraction(std::span<const LabelMap> maps) {
  double total = 0.0;
  for (const auto& m : maps) {
    const auto fg = std::count_if(m.values().begin(), m.values().end(), [](auto l) { return l != 0; });
    total += static_cast<double>(fg) / static_cast<double>(m.size());
  }
  return total / static_cast<double>(maps.size());
}

double clamp_param(double v) { return std::clamp(v, kParamFloor, 1.0 - kParamFloor); }

void threshold(FusionResult& r) {
  r.hard_labels = LabelMap(r.posterior.dims(), r.posterior.spacing());
  for (std::size_t n = 0; n < r.posterior.size(); ++n) r.hard_labels[n] = r.posterior[n] >= 0.5 ? 1 : 0;
}

// Posterior of foreground from the two log joint terms, plus log(a + b).
struct VoxelPosterior {
  double w;
  double log_evidence;
};

VoxelPosterior posterior_from_logs(double la, double lb) {
  const double m = std::max(la, lb);
  return {1.0 / (1.0 + std::exp(lb - la)), m + std::log(std::exp(la - m) + std::exp(lb - m))};
}

// Neumaier summation. The log-likelihood sums ~1e5-1e6 terms and is compared
// across iterations at an absolute tolerance.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double t = sum + x;
    carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  [[nodiscard]] double value() const { return sum + carry; }
};

// Per-rater sufficient statistics of one E-step. For plain STAPLE the
// denominators are shared across raters but are kept per rater so both
// variants use one M-step.
struct Sums {
  std::vector<double> fg_hit, fg_total, bg_hit, bg_total;
  CompensatedSum log_likelihood;

  explicit Sums(std::size_t raters)
      : fg_hit(raters, 0.0), fg_total(raters, 0.0), bg_hit(raters, 0.0), bg_total(raters, 0.0) {}

  void add(const Sums& o) {
    for (std::size_t j = 0; j < fg_hit.size(); ++j) {
      fg_hit[j] += o.fg_hit[j];
      fg_total[j] += o.fg_total[j];
      bg_hit[j] += o.bg_hit[j];
      bg_total[j] += o.bg_total[j];
    }
    log_likelihood.add(o.log_likelihood.sum);
    log_likelihood.add(o.log_likelihood.carry);
  }
};

struct LogParams {
  double prior_fg, prior_bg;
  std::vector<double> p, not_p, q, not_q;

  LogParams(double prior, const std::vector<RaterPerformance>& raters)
      : prior_fg(std::log(prior)), prior_bg(std::log1p(-prior)) {
    for (const auto& r : raters) {
      p.push_back(std::log(r.sensitivity));
      not_p.push_back(std::log1p(-r.sensitivity));
      q.push_back(std::log(r.specificity));
      not_q.push_back(std::log1p(-r.specificity));
    }
  }
};

// Fills `posterior` for the voxel range and returns that range's sums.
using EStep = std::function<Sums(const LogParams&, ScalarField&, std::size_t, std::size_t)>;

FusionResult run_em(std::span<const LabelMap> maps, const FusionConfig& config, const EStep& estep) {
  const std::size_t raters = maps.size();
  const std::size_t voxels = maps.front().size();
  FusionResult r;
  r.posterior = ScalarField(maps.front().dims(), maps.front().spacing(), 0.0);
  r.prior = config.prior ? *config.prior : mean_foreground_fraction(maps);

  const bool all_empty = std::all_of(maps.begin(), maps.end(), [](const LabelMap& m) {
    return std::all_of(m.values().begin(), m.values().end(), [](auto l) { return l == 0; });
  });
  if (all_empty) {
    r.raters.assign(raters, {kInitialPerformance, kInitialPerformance});
    r.converged = true;
    r.degenerate = true;
    threshold(r);
    return r;
  }
  r.prior = clamp_param(r.prior);
  r.raters.assign(raters, {kInitialPerformance, kInitialPerformance});

  auto expectation = [&](const std::vector<RaterPerformance>& params) {
    const LogParams lp(r.prior, params);
    std::vector<Sums> partial(chunk_count(voxels), Sums(raters));
    parallel_chunks(voxels, config.workers, [&](std::size_t c, std::size_t b, std::size_t e) {
      partial[c] = estep(lp, r.posterior, b, e);
    });
    Sums total(raters);
    for (const auto& s : partial) total.add(s);
    r.log_likelihood.push_back(total.log_likelihood.value());
    return total;
  };

  for (int it = 0; it < config.max_iters; ++it) {
    const Sums s = expectation(r.raters);
    std::vector<RaterPerformance> next = r.raters;
    double change = 0.0;
    for (std::size_t j = 0; j < raters; ++j) {
      if (s.fg_total[j] > 0.0) next[j].sensitivity = clamp_param(s.fg_hit[j] / s.fg_total[j]);
      if (s.bg_total[j] > 0.0) next[j].specificity = clamp_param(s.bg_hit[j] / s.bg_total[j]);
      change += std::abs(next[j].sensitivity - r.raters[j].sensitivity) +
                std::abs(next[j].specificity - r.raters[j].specificity);
    }
    change /= static_cast<double>(raters);
    r.raters = std::move(next);
    r.parameter_change.push_back(change);
    r.iterations = it + 1;
    if (change < config.tol) {
      r.converged = true;
      break;
    }
  }
  // Final posterior consistent with the reported parameters.
  expectation(r.raters);
  threshold(r);
  return r;
}

}  // namespace

FusionResult majority_vote(std::span<const LabelMap> atlas_labels) {
  check_maps(atlas_labels, 1, "majority_vote");
  FusionResult r;
  const auto& first = atlas_labels.front();
  r.posterior = ScalarField(first.dims(), first.spacing(), 0.0);
  const double share = 1.0 / static_cast<double>(atlas_labels.size());
  for (std::size_t n = 0; n < first.size(); ++n) {
    std::size_t votes = 0;
    for (const auto& m : atlas_labels) votes += m[n] != 0;
    r.posterior[n] = static_cast<double>(votes) * share;
  }
  r.converged = true;
  r.prior = mean_foreground_fraction(atlas_labels);
  threshold(r);
  return r;
}

FusionResult staple_em(std::span<const LabelMap> atlas_labels, const FusionConfig& config) {
  check_maps(atlas_labels, 2, "staple_em");
  const std::size_t raters = atlas_labels.size();
  return run_em(atlas_labels, config,
                [&](const LogParams& lp, ScalarField& post, std::size_t b, std::size_t e) {
                  Sums s(raters);
                  double w_sum = 0.0;
                  double not_w_sum = 0.0;
                  for (std::size_t v = b; v < e; ++v) {
                    double la = lp.prior_fg;
                    double lb = lp.prior_bg;
                    for (std::size_t j = 0; j < raters; ++j) {
                      const bool d = atlas_labels[j][v] != 0;
                      la += d ? lp.p[j] : lp.not_p[j];
                      lb += d ? lp.not_q[j] : lp.q[j];
                    }
                    const auto vp = posterior_from_logs(la, lb);
                    post[v] = vp.w;
                    s.log_likelihood.add(vp.log_evidence);
                    w_sum += vp.w;
                    not_w_sum += 1.0 - vp.w;
                    for (std::size_t j = 0; j < raters; ++j) {
                      if (atlas_labels[j][v] != 0) {
                        s.fg_hit[j] += vp.w;
                      } else {
                        s.bg_hit[j] += 1.0 - vp.w;
                      }
                    }
                  }
                  for (std::size_t j = 0; j < raters; ++j) {
                    s.fg_total[j] = w_sum;
                    s.bg_total[j] = not_w_sum;
                  }
                  return s;
                });
}

WeightField local_weights(const Volume& target, std::span<const Volume> atlas_images, int radius,
                          SigmaMode sigma, std::span<const LabelMap> region_labels, int workers) {
  if (atlas_images.empty()) throw DegenerateInputError("local_weights needs at least 1 atlas");
  if (radius < 0) throw BoundsError("patch radius must be non-negative");
  if (!sigma.automatic && !(sigma.value > 0.0)) throw DegenerateInputError("fixed sigma must be positive");
  for (const auto& a : atlas_images) require_same_dims(target, a, "local_weights");
  for (const auto& l : region_labels) require_same_dims(target, l, "local_weights");

  const Dims d = target.dims();
  const std::size_t voxels = d.count();
  const std::size_t atlases = atlas_images.size();

  // Patch-mean squared difference per atlas via separable clipped box sums.
  auto box_sum_axis = [&](std::vector<double>& f, int axis) {
    const int len = d[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d.x)
                                                         : static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y);
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    const int n1 = d[a1];
    const int n2 = d[a2];
    parallel_for(static_cast<std::size_t>(n2), workers, [&](std::size_t o2) {
      std::vector<double> prefix(static_cast<std::size_t>(len) + 1);
      for (int o1 = 0; o1 < n1; ++o1) {
        Index3 start{0, 0, 0};
        start[a1] = o1;
        start[a2] = static_cast<int>(o2);
        const std::size_t base = linear_index(d, start[0], start[1], start[2]);
        prefix[0] = 0.0;
        for (int t = 0; t < len; ++t) prefix[t + 1] = prefix[t] + f[base + stride * t];
        for (int t = 0; t < len; ++t) {
          const int lo = std::max(0, t - radius);
          const int hi = std::min(len - 1, t + radius);
          f[base + stride * t] = prefix[hi + 1] - prefix[lo];
        }
      }
    });
  };
  auto window = [&](int t, int len) { return std::min(len - 1, t + radius) - std::max(0, t - radius) + 1; };

  std::vector<std::vector<double>> ssd(atlases);
  for (std::size_t j = 0; j < atlases; ++j) {
    auto& f = ssd[j];
    f.resize(voxels);
    for (std::size_t v = 0; v < voxels; ++v) {
      const double diff = static_cast<double>(target[v]) - static_cast<double>(atlas_images[j][v]);
      f[v] = diff * diff;
    }
    if (radius > 0) {
      for (int axis = 0; axis < 3; ++axis) box_sum_axis(f, axis);
      for (int k = 0; k < d.z; ++k)
        for (int jj = 0; jj < d.y; ++jj)
          for (int i = 0; i < d.x; ++i) {
            const double count = static_cast<double>(window(i, d.x)) * window(jj, d.y) * window(k, d.z);
            f[linear_index(d, i, jj, k)] /= count;
          }
    }
  }

  double sigma2 = 0.0;
  if (sigma.automatic) {
    auto mean_over = [&](const std::function<bool(std::size_t)>& in_region) {
      double total = 0.0;
      std::size_t count = 0;
      for (std::size_t v = 0; v < voxels; ++v) {
        if (!in_region(v)) continue;
        for (std::size_t j = 0; j < atlases; ++j) total += ssd[j][v];
        count += atlases;
      }
      return count == 0 ? 0.0 : total / static_cast<double>(count);
    };
    if (!region_labels.empty()) {
      sigma2 = mean_over([&](std::size_t v) {
        return std::any_of(region_labels.begin(), region_labels.end(), [v](const LabelMap& l) { return l[v] != 0; });
      });
    }
    if (!(sigma2 > 0.0)) sigma2 = mean_over([](std::size_t) { return true; });
    // Every patch SSD is zero: any positive width yields uniform weights.
    if (!(sigma2 > 0.0)) sigma2 = 1.0;
  } else {
    sigma2 = sigma.value * sigma.value;
  }

  WeightField out;
  out.sigma = std::sqrt(sigma2);
  out.weights.assign(atlases, ScalarField(d, target.spacing(), 0.0));
  const double uniform = 1.0 / static_cast<double>(atlases);
  const double scale = -1.0 / (2.0 * sigma2);
  parallel_chunks(voxels, workers, [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<double> raw(atlases);
    for (std::size_t v = b; v < e; ++v) {
      double total = 0.0;
      for (std::size_t j = 0; j < atlases; ++j) {
        raw[j] = std::exp(scale * ssd[j][v]);
        total += raw[j];
      }
      const bool fallback = !(total > 0.0) || !std::isfinite(total);
      for (std::size_t j = 0; j < atlases; ++j) out.weights[j][v] = fallback ? uniform : raw[j] / total;
    }
  });
  return out;
}

FusionResult lop_fuse_weighted(std::span<const LabelMap> atlas_labels, const WeightField& weights,
                               const FusionConfig& config) {
  check_maps(atlas_labels, 2, "lop_fuse");
  const std::size_t raters = atlas_labels.size();
  if (weights.weights.size() != raters) {
    throw ShapeError("weight field has " + std::to_string(weights.weights.size()) + " layers for " +
                     std::to_string(raters) + " atlases");
  }
  for (const auto& w : weights.weights) require_same_dims(atlas_labels.front(), w, "lop_fuse");
  const double pool = static_cast<double>(raters);

  return run_em(atlas_labels, config,
                [&](const LogParams& lp, ScalarField& post, std::size_t b, std::size_t e) {
                  Sums s(raters);
                  for (std::size_t v = b; v < e; ++v) {
                    double la = lp.prior_fg;
                    double lb = lp.prior_bg;
                    for (std::size_t j = 0; j < raters; ++j) {
                      const double ex = pool * weights.weights[j][v];
                      const bool d = atlas_labels[j][v] != 0;
                      la += ex * (d ? lp.p[j] : lp.not_p[j]);
                      lb += ex * (d ? lp.not_q[j] : lp.q[j]);
                    }
                    const auto vp = posterior_from_logs(la, lb);
                    post[v] = vp.w;
                    s.log_likelihood.add(vp.log_evidence);
                    for (std::size_t j = 0; j < raters; ++j) {
                      const double ex = pool * weights.weights[j][v];
                      const double fg = ex * vp.w;
                      const double bg = ex * (1.0 - vp.w);
                      s.fg_total[j] += fg;
                      s.bg_total[j] += bg;
                      if (atlas_labels[j][v] != 0) {
                        s.fg_hit[j] += fg;
                      } else {
                        s.bg_hit[j] += bg;
                      }
                    }
                  }
                  return s;
                });
}

FusionResult lop_fuse(const Volume& target, std::span<const Volume> atlas_images,
                      std::span<const LabelMap> atlas_labels, const FusionConfig& config) {
  if (atlas_images.size() != atlas_labels.size()) {
    throw ShapeError("atlas image count does not match atlas label count");
  }
  check_maps(atlas_labels, 2, "lop_fuse");
  require_same_dims(target, atlas_labels.front(), "lop_fuse");
  const auto w = local_weights(target, atlas_images, config.radius, config.sigma, atlas_labels, config.workers);
  return lop_fuse_weighted(atlas_labels, w, config);
}

}  // namespace atlaspl
