// Volumes cross the boundary as Fortran-ordered numpy arrays indexed [x, y, z],
// which matches the library's x-fastest layout without copying order around.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "atlaspl/cli.hpp"
#include "atlaspl/fusion.hpp"
#include "atlaspl/metrics.hpp"
#include "atlaspl/nifti.hpp"
#include "atlaspl/phantom.hpp"
#include "atlaspl/similarity.hpp"
#include "atlaspl/volume.hpp"

namespace py = pybind11;
using namespace atlaspl;

namespace {

template <typename T>
using FArray = py::array_t<T, py::array::f_style | py::array::forcecast>;

template <typename T>
Grid<T> to_grid(const FArray<T>& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const Dims d{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  return Grid<T>(d, {}, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
std::vector<Grid<T>> to_grids(const std::vector<FArray<T>>& arrays) {
  std::vector<Grid<T>> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_grid(a));
  return out;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  const Dims d = g.dims();
  py::array_t<T, py::array::f_style> a({d.x, d.y, d.z});
  std::copy(g.values().begin(), g.values().end(), a.mutable_data());
  return a;
}

BoundingBox to_box(const Index3& lo, const Index3& hi, int structure_id) { return {lo, hi, structure_id}; }

py::dict fusion_dict(const FusionResult& r) {
  std::vector<double> sens, spec;
  for (const auto& p : r.raters) {
    sens.push_back(p.sensitivity);
    spec.push_back(p.specificity);
  }
  py::dict d;
  d["posterior"] = to_array(r.posterior);
  d["labels"] = to_array(r.hard_labels);
  d["sensitivity"] = sens;
  d["specificity"] = spec;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  d["degenerate"] = r.degenerate;
  d["prior"] = r.prior;
  d["log_likelihood"] = r.log_likelihood;
  return d;
}

FusionConfig fusion_config(int max_iters, double tol, std::optional<double> prior, int radius,
                           std::optional<double> sigma, int workers) {
  FusionConfig c;
  c.max_iters = max_iters;
  c.tol = tol;
  c.prior = prior;
  c.radius = radius;
  c.sigma = sigma ? SigmaMode::Fixed(*sigma) : SigmaMode::Auto();
  c.workers = workers;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Atlas-based pseudo-labeling: similarity, label fusion and label combination.";

  py::register_exception<Error>(m, "AtlasplError", PyExc_RuntimeError);

  m.def(
      "load_volume", [](const std::filesystem::path& p) { return to_array(load_volume(p)); }, py::arg("path"),
      "Read a NIfTI-1 image as float32 [x, y, z].");
  m.def(
      "load_labels", [](const std::filesystem::path& p) { return to_array(load_labels(p)); }, py::arg("path"),
      "Read a NIfTI-1 label map as uint16 [x, y, z].");
  m.def(
      "save_volume", [](const FArray<float>& a, const std::filesystem::path& p) { save_volume(to_grid(a), p); },
      py::arg("image"), py::arg("path"));
  m.def(
      "save_labels",
      [](const FArray<std::uint16_t>& a, const std::filesystem::path& p) { save_volume(to_grid(a), p); },
      py::arg("labels"), py::arg("path"));

  m.def(
      "mutual_information",
      [](const FArray<float>& x, const FArray<float>& y, int bins) {
        return mutual_information(joint_histogram(to_grid(x), to_grid(y), bins));
      },
      py::arg("x"), py::arg("y"), py::arg("bins") = kDefaultBins, "Plug-in mutual information in bits.");

  m.def(
      "structure_bbox",
      [](const std::vector<FArray<std::uint16_t>>& maps, int structure_id, int margin) {
        const auto b = structure_bbox(to_grids(maps), structure_id, margin);
        return py::make_tuple(b.lo, b.hi);
      },
      py::arg("label_maps"), py::arg("structure_id"), py::arg("margin") = 0,
      "Inclusive (lo, hi) corners of the union box.");

  m.def(
      "similarity_matrix",
      [](const std::vector<FArray<float>>& images, std::vector<std::string> ids, const Index3& lo, const Index3& hi,
         int bins, int workers) {
        const auto sm = build_similarity_matrix(to_grids(images), std::move(ids), to_box(lo, hi, 0), bins, workers);
        const auto n = static_cast<py::ssize_t>(sm.size());
        py::array_t<double> out({n, n});
        std::copy(sm.scores.begin(), sm.scores.end(), out.mutable_data());
        return out;
      },
      py::arg("images"), py::arg("ids"), py::arg("lo"), py::arg("hi"), py::arg("bins") = kDefaultBins,
      py::arg("workers") = 0);

  m.def(
      "majority_vote",
      [](const std::vector<FArray<std::uint16_t>>& maps) { return fusion_dict(majority_vote(to_grids(maps))); },
      py::arg("label_maps"));

  m.def(
      "staple",
      [](const std::vector<FArray<std::uint16_t>>& maps, int max_iters, double tol, std::optional<double> prior,
         int workers) {
        return fusion_dict(staple_em(to_grids(maps), fusion_config(max_iters, tol, prior, 1, std::nullopt, workers)));
      },
      py::arg("label_maps"), py::arg("max_iters") = 100, py::arg("tol") = 1e-6, py::arg("prior") = py::none(),
      py::arg("workers") = 0);

  m.def(
      "lop_fuse",
      [](const FArray<float>& target, const std::vector<FArray<float>>& images,
         const std::vector<FArray<std::uint16_t>>& maps, int radius, std::optional<double> sigma, int max_iters,
         double tol, std::optional<double> prior, int workers) {
        return fusion_dict(lop_fuse(to_grid(target), to_grids(images), to_grids(maps),
                                    fusion_config(max_iters, tol, prior, radius, sigma, workers)));
      },
      py::arg("target"), py::arg("atlas_images"), py::arg("atlas_labels"), py::arg("radius") = 1,
      py::arg("sigma") = py::none(), py::arg("max_iters") = 100, py::arg("tol") = 1e-6,
      py::arg("prior") = py::none(), py::arg("workers") = 0);

  m.def(
      "combine", [](const std::vector<FArray<double>>& posteriors) { return to_array(combine(to_grids(posteriors))); },
      py::arg("posteriors"), "Per-structure posteriors to a multi-class label map (0 = background).");

  m.def(
      "dice",
      [](const FArray<std::uint16_t>& a, const FArray<std::uint16_t>& b, int structure_id) {
        return dice(to_grid(a), to_grid(b), structure_id);
      },
      py::arg("a"), py::arg("b"), py::arg("structure_id") = 1);

  m.def("quantile", &quantile, py::arg("values"), py::arg("p"), "Linear-interpolation sample quantile.");

  m.def(
      "phantom",
      [](int n, std::uint64_t seed, int edge, std::optional<double> amplitude, std::optional<double> noise,
         int workers) {
        PhantomSpec spec = PhantomSpec::desk_default();
        if (edge != spec.dims.x) spec = spec.scaled_to(edge);
        spec.seed = seed;
        if (amplitude) spec.amplitude = *amplitude;
        if (noise) spec.noise_sigma = *noise;
        py::list out;
        for (const auto& s : generate(spec, n, workers)) out.append(py::make_tuple(to_array(s.image), to_array(s.labels)));
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("edge") = 64, py::arg("amplitude") = py::none(),
      py::arg("noise") = py::none(), py::arg("workers") = 0, "List of (image, labels) pairs.");

  m.def(
      "simulate_raters",
      [](const FArray<std::uint16_t>& truth, const std::vector<std::tuple<double, double, std::uint64_t>>& raters) {
        std::vector<RaterSpec> specs;
        for (const auto& [p, q, seed] : raters) specs.push_back({p, q, seed});
        py::list out;
        for (const auto& map : simulate_raters(to_grid(truth), specs)) out.append(to_array(map));
        return out;
      },
      py::arg("truth"), py::arg("raters"), "raters: (sensitivity, specificity, seed) triples.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, log;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, log);
        }
        return py::make_tuple(code, out.str(), log.str());
      },
      py::arg("args"), "Run a subcommand in-process; returns (exit code, stdout, log).");

  m.attr("DEFAULT_BINS") = kDefaultBins;
}
