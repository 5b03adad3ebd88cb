#include "atlaspl/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "atlaspl/fusion.hpp"
#include "atlaspl/metrics.hpp"
#include "atlaspl/nifti.hpp"
#include "atlaspl/parallel.hpp"
#include "atlaspl/phantom.hpp"
#include "atlaspl/similarity.hpp"

namespace atlaspl::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct RunConfig {
  std::string manifest;
  std::string out_dir;
  int k = 3;
  int bins = kDefaultBins;
  int margin = 0;
  int experts = 0;  // 0: use the manifest's expert list
  int radius = 1;
  std::string sigma = "auto";
  int max_iters = 100;
  double tol = 1e-6;
  double prior = -1.0;  // negative: mean foreground fraction
  std::string structures = "all";
  int workers = 0;
  std::uint64_t seed = 0;
  std::string order = "ranked";
  bool require_converged = false;
};

void load_config_file(const fs::path& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    auto get = [&](const nlohmann::json& src, const char* key, auto& field) {
      if (src.contains(key)) field = src.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "manifest", c.manifest);
    get(j, "out_dir", c.out_dir);
    get(j, "k", c.k);
    get(j, "bins", c.bins);
    get(j, "margin", c.margin);
    get(j, "experts", c.experts);
    get(j, "workers", c.workers);
    get(j, "seed", c.seed);
    get(j, "order", c.order);
    get(j, "require_converged", c.require_converged);
    if (j.contains("structures")) {
      const auto& s = j.at("structures");
      if (s.is_string()) {
        c.structures = s.get<std::string>();
      } else {
        std::string list;
        for (const auto& v : s) list += (list.empty() ? "" : ",") + std::to_string(v.get<int>());
        c.structures = list;
      }
    }
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      get(f, "radius", c.radius);
      get(f, "max_iters", c.max_iters);
      get(f, "tol", c.tol);
      get(f, "prior", c.prior);
      if (f.contains("sigma")) {
        const auto& s = f.at("sigma");
        c.sigma = s.is_string() ? s.get<std::string>() : std::to_string(s.get<double>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Log {
 public:
  Log(std::ostream& os, std::string step) : os_(os), step_(std::move(step)) {}

  void info(const std::string& msg, json metrics = json::object()) const { emit("info", msg, std::move(metrics)); }
  void warn(const std::string& msg, json metrics = json::object()) const { emit("warn", msg, std::move(metrics)); }
  void error(const std::string& msg) const { emit("error", msg, json::object()); }

 private:
  void emit(const char* level, const std::string& msg, json metrics) const {
    json j;
    j["ts"] = utc_now();
    j["level"] = level;
    j["step"] = step_;
    j["msg"] = msg;
    j["metrics"] = std::move(metrics);
    os_ << j.dump() << '\n';
  }

  std::ostream& os_;
  std::string step_;
};

FusionConfig fusion_config(const RunConfig& c) {
  FusionConfig f;
  f.max_iters = c.max_iters;
  f.tol = c.tol;
  if (c.prior >= 0.0) f.prior = c.prior;
  f.radius = c.radius;
  f.workers = c.workers;
  if (c.sigma != "auto") {
    double s = 0.0;
    try {
      s = std::stod(c.sigma);
    } catch (const std::exception&) {
      throw UsageError("--sigma must be 'auto' or a positive number");
    }
    if (!(s > 0.0)) throw UsageError("--sigma must be 'auto' or a positive number");
    f.sigma = SigmaMode::Fixed(s);
  }
  return f;
}

void check_run_config(const RunConfig& c) {
  if (c.k < 2) throw UsageError("--k must be at least 2");
  if (c.bins < 2) throw UsageError("--bins must be at least 2");
  if (c.margin < 0) throw UsageError("--margin must be non-negative");
  if (c.radius < 0) throw UsageError("--radius must be non-negative");
  if (c.max_iters < 1) throw UsageError("--max-iters must be positive");
  if (c.order != "ranked" && c.order != "random") throw UsageError("--order must be 'ranked' or 'random'");
}

std::vector<int> selected_structures(const RunConfig& c, const DatasetManifest& m) {
  std::vector<int> out;
  if (c.structures == "all") {
    for (const auto& s : m.structures) out.push_back(s.id);
    return out;
  }
  std::stringstream ss(c.structures);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    int id = 0;
    try {
      id = std::stoi(tok);
    } catch (const std::exception&) {
      throw UsageError("--structures expects 'all' or a comma-separated id list");
    }
    (void)m.structure_name(id);
    out.push_back(id);
  }
  if (out.empty()) throw UsageError("--structures selects nothing");
  return out;
}

DatasetManifest load_manifest(const RunConfig& c) {
  if (c.manifest.empty()) throw UsageError("--manifest is required");
  auto m = DatasetManifest::load(c.manifest);
  if (c.experts > 0) {
    m.expert_labeled.clear();
    for (const auto& im : m.images) {
      if (static_cast<int>(m.expert_labeled.size()) == c.experts) break;
      if (im.labels) m.expert_labeled.push_back(im.id);
    }
    if (static_cast<int>(m.expert_labeled.size()) < c.experts) {
      throw ManifestError("manifest has fewer than " + std::to_string(c.experts) + " labeled images");
    }
  }
  return m;
}

fs::path require_out(const RunConfig& c) {
  if (c.out_dir.empty()) throw UsageError("--out is required");
  fs::create_directories(c.out_dir);
  return c.out_dir;
}

// Box table: out/bboxes.json when present, else the manifest's table, else
// computed from the expert labels and written.
std::vector<BoundingBox> ensure_bboxes(const RunConfig& c, const DatasetManifest& m, const Dataset& data,
                                       const std::vector<int>& structures, const fs::path& out, const Log& log,
                                       bool force) {
  const fs::path table = out / "bboxes.json";
  std::vector<BoundingBox> boxes;
  if (!force && fs::exists(table)) {
    std::ifstream in(table);
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& b : j.at("bboxes")) {
        boxes.push_back({b.at("lo").get<Index3>(), b.at("hi").get<Index3>(), b.at("structure_id").get<int>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(table.string() + ": " + e.what());
    }
    log.info("reusing bounding boxes", {{"path", table.string()}});
  } else if (!force && !m.bboxes.empty()) {
    boxes = m.bboxes;
    log.info("using manifest bounding boxes");
  } else {
    std::vector<LabelMap> experts;
    for (std::size_t i = 0; i < data.ids.size(); ++i)
      if (data.expert[i]) experts.push_back(*data.labels[i]);
    for (const auto& s : m.structures) boxes.push_back(structure_bbox(experts, s.id, c.margin));
    json j;
    j["margin"] = c.margin;
    auto& arr = j["bboxes"] = json::array();
    for (const auto& b : boxes) arr.push_back({{"structure_id", b.structure_id}, {"lo", b.lo}, {"hi", b.hi}});
    std::ofstream o(table, std::ios::trunc);
    if (!o) throw IoError("cannot open " + table.string() + " for writing");
    o << j.dump(2) << '\n';
    log.info("wrote bounding boxes", {{"path", table.string()}, {"structures", boxes.size()}});
  }
  std::vector<BoundingBox> picked;
  for (const int sid : structures) {
    const auto it = std::find_if(boxes.begin(), boxes.end(), [&](const BoundingBox& b) { return b.structure_id == sid; });
    if (it == boxes.end()) throw ManifestError("no bounding box for structure " + std::to_string(sid));
    if (!it->fits(data.images.front().dims())) throw BoundsError("bounding box exceeds image grid");
    picked.push_back(*it);
  }
  return picked;
}

fs::path matrix_path(const fs::path& out, int sid) {
  return out / "similarity" / ("structure_" + std::to_string(sid) + ".tsv");
}

std::vector<SimilarityMatrix> ensure_matrices(const RunConfig& c, const Dataset& data,
                                              const std::vector<BoundingBox>& boxes, const fs::path& out,
                                              const Log& log, bool force) {
  fs::create_directories(out / "similarity");
  std::vector<SimilarityMatrix> out_matrices;
  for (const auto& b : boxes) {
    const fs::path p = matrix_path(out, b.structure_id);
    if (force || !fs::exists(p)) {
      const auto start = std::chrono::steady_clock::now();
      const auto m = build_similarity_matrix(data.images, data.ids, b, c.bins, c.workers);
      write_similarity(m, p);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.info("wrote similarity matrix",
               {{"structure_id", b.structure_id}, {"path", p.string()}, {"images", m.size()}, {"seconds", secs}});
    } else {
      log.info("reusing similarity matrix", {{"structure_id", b.structure_id}, {"path", p.string()}});
    }
    // Downstream steps always consume the persisted values.
    auto m = read_similarity(p);
    if (m.image_ids != data.ids) {
      throw ManifestError(p.string() + " was built for a different image set; remove it to recompute");
    }
    if (m.bins != c.bins) {
      throw ManifestError(p.string() + " was built with " + std::to_string(m.bins) + " bins; remove it to recompute");
    }
    m.structure_id = b.structure_id;
    out_matrices.push_back(std::move(m));
  }
  return out_matrices;
}

void add_run_options(CLI::App& app, RunConfig& c) {
  app.add_option("--workers", c.workers, "Worker threads (0 = all cores)");
}

void add_fusion_options(CLI::App& app, RunConfig& c) {
  app.add_option("--radius", c.radius, "Patch radius for local weights");
  app.add_option("--sigma", c.sigma, "Weight kernel width: 'auto' or a number");
  app.add_option("--max-iters", c.max_iters, "EM iteration cap");
  app.add_option("--tol", c.tol, "EM tolerance on mean parameter change");
  app.add_option("--prior", c.prior, "Foreground prior (default: mean foreground fraction)");
  app.add_flag("--require-converged", c.require_converged, "Exit 3 when any fusion fails to converge");
}

// gen-phantom ---------------------------------------------------------------

struct PhantomArgs {
  int n = 0;
  int experts = 5;
  double amplitude = -1.0;
  double noise = -1.0;
  int dims = 0;
};

int cmd_gen_phantom(const RunConfig& c, const PhantomArgs& a, const Log& log) {
  const fs::path out = require_out(c);
  if (a.n < 1) throw UsageError("--n must be positive");
  PhantomSpec spec = PhantomSpec::desk_default();
  spec.seed = c.seed;
  // The whole scene scales with the grid, deformation amplitude included.
  if (a.dims > 0) spec = spec.scaled_to(a.dims);
  if (a.amplitude >= 0.0) spec.amplitude = a.amplitude;
  if (a.noise >= 0.0) spec.noise_sigma = a.noise;
  const auto subjects = generate(spec, a.n, c.workers);
  fs::create_directories(out / "images");
  fs::create_directories(out / "labels");
  DatasetManifest m;
  for (std::size_t s = 0; s < spec.structures.size(); ++s) {
    m.structures.push_back({static_cast<int>(s + 1), "structure_" + std::to_string(s + 1)});
  }
  char name[32];
  for (int i = 0; i < a.n; ++i) {
    std::snprintf(name, sizeof(name), "sub%03d", i);
    const fs::path img = fs::path("images") / (std::string(name) + ".nii");
    const fs::path lab = fs::path("labels") / (std::string(name) + ".nii");
    save_volume(subjects[static_cast<std::size_t>(i)].image, out / img);
    save_volume(subjects[static_cast<std::size_t>(i)].labels, out / lab);
    m.images.push_back({name, img, lab});
    if (i < a.experts) m.expert_labeled.push_back(name);
  }
  m.save(out / "manifest.json");
  log.info("wrote phantom dataset", {{"subjects", a.n}, {"experts", m.expert_labeled.size()}, {"seed", c.seed}});
  return kOk;
}

// bbox ------------------------------------------------------------------------

int cmd_bbox(const RunConfig& c, const Log& log) {
  const fs::path out = require_out(c);
  const auto m = load_manifest(c);
  const auto data = load_dataset(m, std::nullopt, c.workers);
  ensure_bboxes(c, m, data, selected_structures(c, m), out, log, true);
  return kOk;
}

// similarity ------------------------------------------------------------------

int cmd_similarity(const RunConfig& c, const Log& log) {
  check_run_config(c);
  const fs::path out = require_out(c);
  const auto m = load_manifest(c);
  const auto data = load_dataset(m, std::nullopt, c.workers);
  const auto boxes = ensure_bboxes(c, m, data, selected_structures(c, m), out, log, false);
  ensure_matrices(c, data, boxes, out, log, true);
  return kOk;
}

// pseudo-label ----------------------------------------------------------------

int cmd_pseudo_label(const RunConfig& c, const Log& log) {
  check_run_config(c);
  const fs::path out = require_out(c);
  const auto m = load_manifest(c);
  const auto data = load_dataset(m, std::nullopt, c.workers);
  const auto structures = selected_structures(c, m);
  const auto boxes = ensure_bboxes(c, m, data, structures, out, log, false);
  const auto matrices = ensure_matrices(c, data, boxes, out, log, false);

  CurriculumConfig cc;
  cc.k = c.k;
  cc.fusion = fusion_config(c);
  cc.ordering = c.order == "random" ? Ordering::Random : Ordering::SimilarityRanked;
  cc.seed = c.seed;
  cc.workers = c.workers;
  const auto start = std::chrono::steady_clock::now();
  const auto result = pseudo_label_all(data, matrices, cc);

  fs::create_directories(out / "trace");
  fs::create_directories(out / "combined");
  bool failed = false;
  bool unconverged = false;
  json labeled;
  labeled["structures"] = json::array();
  for (const auto& s : m.structures) labeled["structures"].push_back({{"id", s.id}, {"name", s.name}});
  std::map<std::string, json> structure_paths;

  for (std::size_t s = 0; s < matrices.size(); ++s) {
    const int sid = matrices[s].structure_id;
    const std::string sname = m.structure_name(sid);
    const auto& outcome = result.structures[s];
    write_trace(outcome.trace, out / "trace" / (sname + ".jsonl"));
    fs::create_directories(out / sname);
    for (std::size_t i = 0; i < data.ids.size(); ++i) {
      const auto& id = data.ids[i];
      const fs::path rel = fs::path(sname) / (id + ".nii");
      if (data.expert[i]) {
        save_volume(binarize(*data.labels[i], sid), out / rel);
      } else if (const auto it = outcome.pseudo_labels.find(id); it != outcome.pseudo_labels.end()) {
        save_volume(it->second, out / rel);
      } else {
        continue;
      }
      structure_paths[id][std::to_string(sid)] = rel.generic_string();
    }
    double dice_sum = 0.0;
    int dice_n = 0;
    for (const auto& st : outcome.trace.steps) {
      unconverged = unconverged || !st.converged;
      if (st.dice) {
        dice_sum += *st.dice;
        ++dice_n;
      }
    }
    json metrics{{"structure_id", sid}, {"steps", outcome.trace.steps.size()}};
    if (dice_n > 0) metrics["mean_dice"] = dice_sum / dice_n;
    if (outcome.trace.error) {
      failed = true;
      log.error("structure " + sname + " stopped: " + *outcome.trace.error);
    } else {
      log.info("pseudo-labeled structure", metrics);
    }
  }

  int max_sid = 0;
  for (const auto& s : m.structures) max_sid = std::max(max_sid, s.id);
  std::vector<std::vector<double>> evals;
  std::vector<std::string> eval_ids;
  for (const auto& [id, map] : result.combined) {
    const fs::path rel = fs::path("combined") / (id + ".nii");
    save_volume(map, out / rel);
    const auto& truth = data.labels[data.index_of(id)];
    if (truth) {
      evals.push_back(evaluate(map, *truth, max_sid));
      eval_ids.push_back(id);
    }
  }
  if (!evals.empty()) {
    const auto rep = report(evals, "pseudo-label", eval_ids);
    write_report_tsv(rep, out / "report.tsv");
    write_report_json(rep, out / "report.json");
  }

  auto& images = labeled["images"] = json::array();
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    const auto& id = data.ids[i];
    const auto& entry = m.image(id);
    json row;
    row["id"] = id;
    row["image"] = fs::relative(fs::absolute(m.resolve(entry.image)), fs::absolute(out)).generic_string();
    row["source"] = data.expert[i] ? "expert" : "pseudo";
    if (data.expert[i]) {
      row["labels"] = fs::relative(fs::absolute(m.resolve(*entry.labels)), fs::absolute(out)).generic_string();
    } else if (result.combined.contains(id)) {
      row["labels"] = (fs::path("combined") / (id + ".nii")).generic_string();
    }
    row["structure_labels"] = structure_paths.contains(id) ? structure_paths[id] : json::object();
    images.push_back(std::move(row));
  }
  labeled["expert_labeled"] = data.expert_ids();
  std::ofstream lm(out / "labeled_manifest.json", std::ios::trunc);
  lm << labeled.dump(2) << '\n';

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log.info("pseudo-labeling finished", {{"seconds", secs}, {"unlabeled", data.unlabeled_ids().size()}});
  if (c.require_converged && unconverged) {
    throw NumericalError("at least one fusion step did not converge within " + std::to_string(c.max_iters) +
                         " iterations");
  }
  return failed ? kNumericalFailure : kOk;
}

// fuse ------------------------------------------------------------------------

struct FuseArgs {
  std::string target;
  std::vector<std::string> atlas_images;
  std::vector<std::string> atlas_labels;
  int structure = 0;
  std::string method = "lop";
};

int cmd_fuse(const RunConfig& c, const FuseArgs& a, const Log& log) {
  check_run_config(c);
  const fs::path out = require_out(c);
  if (a.atlas_labels.empty()) throw UsageError("at least one --atlas-labels is required");
  std::vector<LabelMap> labels;
  for (const auto& p : a.atlas_labels) {
    auto l = load_labels(p);
    labels.push_back(a.structure > 0 ? binarize(l, a.structure) : std::move(l));
  }
  const FusionConfig fc = fusion_config(c);
  FusionResult r;
  double sigma = 0.0;
  if (a.method == "majority") {
    r = majority_vote(labels);
  } else if (a.method == "staple") {
    r = staple_em(labels, fc);
  } else if (a.method == "lop") {
    if (a.target.empty()) throw UsageError("--target is required for lop fusion");
    if (a.atlas_images.size() != a.atlas_labels.size()) {
      throw UsageError("--atlas-image and --atlas-labels must be given in pairs");
    }
    const Volume target = load_volume(a.target);
    std::vector<Volume> images;
    for (const auto& p : a.atlas_images) images.push_back(load_volume(p));
    const auto w = local_weights(target, images, fc.radius, fc.sigma, labels, fc.workers);
    sigma = w.sigma;
    r = lop_fuse_weighted(labels, w, fc);
  } else {
    throw UsageError("--method must be one of lop, staple, majority");
  }
  save_volume(r.posterior, out / "posterior.nii");
  save_volume(r.hard_labels, out / "labels.nii");
  json j;
  j["method"] = a.method;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["degenerate"] = r.degenerate;
  j["prior"] = r.prior;
  if (a.method == "lop") j["sigma"] = sigma;
  auto& raters = j["raters"] = json::array();
  for (const auto& p : r.raters) raters.push_back({{"sensitivity", p.sensitivity}, {"specificity", p.specificity}});
  j["log_likelihood"] = r.log_likelihood;
  j["parameter_change"] = r.parameter_change;
  std::ofstream o(out / "fusion.json", std::ios::trunc);
  o << j.dump(2) << '\n';
  if (r.degenerate) log.warn("every atlas map is empty; posterior is zero");
  log.info("fused", {{"method", a.method}, {"iterations", r.iterations}, {"converged", r.converged}});
  if (c.require_converged && !r.converged) throw NumericalError("fusion did not converge");
  return kOk;
}

// combine / evaluate ------------------------------------------------------------

int cmd_combine(const std::vector<std::string>& posteriors, const std::string& out_path, const Log& log) {
  if (posteriors.empty()) throw UsageError("at least one --posterior is required");
  if (out_path.empty()) throw UsageError("--out is required");
  std::vector<ScalarField> stack;
  for (const auto& p : posteriors) {
    const Volume v = load_volume(p);
    ScalarField f(v.dims(), v.spacing(), 0.0);
    for (std::size_t n = 0; n < v.size(); ++n) f[n] = v[n];
    stack.push_back(std::move(f));
  }
  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_volume(combine(stack), out);
  log.info("combined posteriors", {{"structures", stack.size()}});
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> pred;
  std::vector<std::string> truth;
  std::vector<std::string> ids;
  int structures = 0;
  std::string method = "method";
};

int cmd_evaluate(const RunConfig& c, const EvalArgs& a, const Log& log) {
  const fs::path out = require_out(c);
  if (a.pred.empty() || a.pred.size() != a.truth.size()) {
    throw UsageError("--pred and --truth must be given in equal, non-zero numbers");
  }
  std::vector<LabelMap> preds, truths;
  int L = a.structures;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    preds.push_back(load_labels(a.pred[i]));
    truths.push_back(load_labels(a.truth[i]));
    if (a.structures == 0) L = std::max(L, max_label(truths.back()));
  }
  if (L < 1) throw UsageError("cannot infer structure count; pass --structures");
  std::vector<std::vector<double>> evals;
  for (std::size_t i = 0; i < preds.size(); ++i) evals.push_back(evaluate(preds[i], truths[i], L));
  std::vector<std::string> ids = a.ids;
  if (ids.empty()) {
    for (const auto& p : a.pred) ids.push_back(fs::path(p).stem().string());
  }
  const auto rep = report(evals, a.method, ids);
  write_report_tsv(rep, out / "report.tsv");
  write_report_json(rep, out / "report.json");
  log.info("evaluated", {{"images", evals.size()}, {"structures", L}});
  return kOk;
}

}  // namespace

Dataset load_dataset(const DatasetManifest& manifest, std::optional<int> experts_override, int workers) {
  Dataset d;
  for (const auto& s : manifest.structures) d.structure_ids.push_back(s.id);
  std::set<std::string> experts(manifest.expert_labeled.begin(), manifest.expert_labeled.end());
  if (experts_override) {
    experts.clear();
    for (const auto& im : manifest.images) {
      if (static_cast<int>(experts.size()) == *experts_override) break;
      if (im.labels) experts.insert(im.id);
    }
  }
  const std::size_t n = manifest.images.size();
  d.ids.resize(n);
  d.images.resize(n);
  d.labels.resize(n);
  d.expert.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto& e = manifest.images[i];
    d.ids[i] = e.id;
    d.images[i] = load_volume(manifest.resolve(e.image));
    if (e.labels) d.labels[i] = load_labels(manifest.resolve(*e.labels));
  });
  int max_sid = 0;
  for (const int s : d.structure_ids) max_sid = std::max(max_sid, s);
  for (std::size_t i = 0; i < n; ++i) {
    d.expert[i] = experts.contains(d.ids[i]);
    require_same_dims(d.images.front(), d.images[i], "dataset");
    if (d.labels[i]) {
      require_same_dims(d.images[i], *d.labels[i], "dataset labels");
      if (max_label(*d.labels[i]) > max_sid) {
        throw ManifestError("labels of '" + d.ids[i] + "' exceed the declared structure ids");
      }
    }
  }
  return d;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log_stream) {
  RunConfig cfg;
  // A config file supplies defaults; flags parsed afterwards win.
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      try {
        load_config_file(args[i + 1], cfg);
      } catch (const Error& e) {
        Log(log_stream, "config").error(e.what());
        return kDataError;
      }
    }
  }

  CLI::App app{"Similarity-ranked atlas pseudo-labeling for 3D label maps", "atlaspl"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  // Subcommands inherit this, so --config may follow the subcommand name.
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration (flags override it)");

  PhantomArgs phantom;
  auto* gen = app.add_subcommand("gen-phantom", "Write a synthetic phantom dataset and manifest");
  gen->add_option("--n", phantom.n, "Number of subjects")->required();
  gen->add_option("--seed", cfg.seed, "Dataset seed");
  gen->add_option("--out", cfg.out_dir, "Output directory")->required();
  gen->add_option("--experts", phantom.experts, "Number of subjects listed as expert-labeled");
  gen->add_option("--amplitude", phantom.amplitude, "Deformation amplitude (voxels)");
  gen->add_option("--noise", phantom.noise, "Gaussian noise sigma");
  gen->add_option("--dims", phantom.dims, "Cube edge length (voxels)");
  add_run_options(*gen, cfg);

  auto* bbox = app.add_subcommand("bbox", "Compute per-structure bounding boxes from expert labels");
  bbox->add_option("--manifest", cfg.manifest, "Dataset manifest");
  bbox->add_option("--out", cfg.out_dir, "Output directory");
  bbox->add_option("--margin", cfg.margin, "Voxels added per box face");
  bbox->add_option("--experts", cfg.experts, "Use the first N labeled images as experts");
  bbox->add_option("--structures", cfg.structures, "'all' or comma-separated structure ids");
  add_run_options(*bbox, cfg);

  auto* sim = app.add_subcommand("similarity", "Compute per-structure similarity matrices");
  sim->add_option("--manifest", cfg.manifest, "Dataset manifest");
  sim->add_option("--out", cfg.out_dir, "Output directory");
  sim->add_option("--bins", cfg.bins, "Histogram bins per axis");
  sim->add_option("--margin", cfg.margin, "Voxels added per box face");
  sim->add_option("--experts", cfg.experts, "Use the first N labeled images as experts");
  sim->add_option("--structures", cfg.structures, "'all' or comma-separated structure ids");
  add_run_options(*sim, cfg);

  auto* pl = app.add_subcommand("pseudo-label", "Run similarity-ranked pseudo-labeling end to end");
  pl->add_option("--manifest", cfg.manifest, "Dataset manifest");
  pl->add_option("--out", cfg.out_dir, "Output directory");
  pl->add_option("--k", cfg.k, "Similarity rank and atlases fused per step");
  pl->add_option("--experts", cfg.experts, "Use the first N labeled images as experts");
  pl->add_option("--bins", cfg.bins, "Histogram bins per axis");
  pl->add_option("--margin", cfg.margin, "Voxels added per box face");
  pl->add_option("--structures", cfg.structures, "'all' or comma-separated structure ids");
  pl->add_option("--order", cfg.order, "'ranked' or 'random' (ablation)");
  pl->add_option("--seed", cfg.seed, "Seed for --order random");
  add_fusion_options(*pl, cfg);
  add_run_options(*pl, cfg);

  FuseArgs fuse;
  auto* fu = app.add_subcommand("fuse", "Fuse binary atlas label maps for one target");
  fu->add_option("--target", fuse.target, "Target image (lop)");
  fu->add_option("--atlas-image", fuse.atlas_images, "Atlas image, paired with --atlas-labels (lop)");
  fu->add_option("--atlas-labels", fuse.atlas_labels, "Atlas label map")->required();
  fu->add_option("--structure", fuse.structure, "Binarize atlas labels at this id (default: non-zero)");
  fu->add_option("--method", fuse.method, "lop, staple or majority");
  fu->add_option("--out", cfg.out_dir, "Output directory")->required();
  add_fusion_options(*fu, cfg);
  add_run_options(*fu, cfg);

  std::vector<std::string> posteriors;
  std::string combine_out;
  auto* co = app.add_subcommand("combine", "Combine per-structure posteriors into a label map");
  co->add_option("--posterior", posteriors, "Posterior for structure 1, 2, ... in order")->required();
  co->add_option("--out", combine_out, "Output label map (.nii)")->required();

  EvalArgs eval;
  auto* ev = app.add_subcommand("evaluate", "Per-structure Dice report");
  ev->add_option("--pred", eval.pred, "Predicted label map")->required();
  ev->add_option("--truth", eval.truth, "Reference label map, paired with --pred")->required();
  ev->add_option("--id", eval.ids, "Image id per pair");
  ev->add_option("--structures", eval.structures, "Structure count L (default: max truth label)");
  ev->add_option("--method", eval.method, "Method label in the report");
  ev->add_option("--out", cfg.out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    out << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const Log log(log_stream, cmd->get_name());
  try {
    if (cmd == gen) return cmd_gen_phantom(cfg, phantom, log);
    if (cmd == bbox) return cmd_bbox(cfg, log);
    if (cmd == sim) return cmd_similarity(cfg, log);
    if (cmd == pl) return cmd_pseudo_label(cfg, log);
    if (cmd == fu) return cmd_fuse(cfg, fuse, log);
    if (cmd == co) return cmd_combine(posteriors, combine_out, log);
    if (cmd == ev) return cmd_evaluate(cfg, eval, log);
  } catch (const UsageError& e) {
    log.error(e.what());
    out << e.what() << "\n\n" << cmd->help();
    return kUsage;
  } catch (const NumericalError& e) {
    log.error(e.what());
    return kNumericalFailure;
  } catch (const Error& e) {
    log.error(e.what());
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    log.error(e.what());
    return kDataError;
  }
  return kUsage;
}

int run_subcommand(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace atlaspl::cli
