#include "atlaspl/curriculum.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

#include "atlaspl/metrics.hpp"
#include "atlaspl/parallel.hpp"
#include "atlaspl/rng.hpp"

namespace atlaspl {
namespace {

void check_k(int k, std::size_t pool) {
  if (k < 1) throw InsufficientPoolError("k must be positive");
  if (static_cast<std::size_t>(k) > pool) {
    throw InsufficientPoolError("k=" + std::to_string(k) + " exceeds pool size " + std::to_string(pool));
  }
}

}  // namespace

double kth_similarity(const SimilarityMatrix& matrix, const std::string& unlabeled_id,
                      std::span<const std::string> pool, int k) {
  check_k(k, pool.size());
  if (std::find(pool.begin(), pool.end(), unlabeled_id) != pool.end()) {
    throw ManifestError("image '" + unlabeled_id + "' is already in the labeled pool");
  }
  const std::size_t row = matrix.index_of(unlabeled_id);
  std::vector<double> sims;
  sims.reserve(pool.size());
  for (const auto& id : pool) sims.push_back(matrix.at(row, matrix.index_of(id)));
  const auto kth = sims.begin() + (k - 1);
  std::nth_element(sims.begin(), kth, sims.end(), std::greater<>());
  return *kth;
}

std::string select_next(const SimilarityMatrix& matrix, std::span<const std::string> unlabeled,
                        std::span<const std::string> pool, int k) {
  if (unlabeled.empty()) throw ManifestError("no unlabeled images to select from");
  const std::string* best = nullptr;
  double best_score = 0.0;
  for (const auto& id : unlabeled) {
    const double s = kth_similarity(matrix, id, pool, k);
    if (best == nullptr || s > best_score || (s == best_score && id < *best)) {
      best = &id;
      best_score = s;
    }
  }
  return *best;
}

std::vector<std::string> select_atlases(const SimilarityMatrix& matrix, const std::string& selected_id,
                                        std::span<const std::string> pool, int k) {
  check_k(k, pool.size());
  const std::size_t row = matrix.index_of(selected_id);
  std::vector<std::pair<double, std::string>> ranked;
  ranked.reserve(pool.size());
  for (const auto& id : pool) ranked.emplace_back(matrix.at(row, matrix.index_of(id)), id);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(ranked[static_cast<std::size_t>(i)].second);
  return out;
}

std::size_t Dataset::index_of(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw ManifestError("unknown image id '" + id + "'");
  return static_cast<std::size_t>(std::distance(ids.begin(), it));
}

std::vector<std::string> Dataset::expert_ids() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (expert[i]) out.push_back(ids[i]);
  return out;
}

std::vector<std::string> Dataset::unlabeled_ids() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!expert[i]) out.push_back(ids[i]);
  return out;
}

StructureOutcome run_curriculum(const Dataset& data, const SimilarityMatrix& matrix, int structure_id,
                                const CurriculumConfig& config) {
  std::vector<std::string> pool = data.expert_ids();
  if (config.k < 2) throw InsufficientPoolError("k must be at least 2");
  check_k(config.k, pool.size());
  std::vector<std::string> unlabeled = data.unlabeled_ids();
  std::sort(unlabeled.begin(), unlabeled.end());

  StructureOutcome out;
  out.trace.structure_id = structure_id;
  out.trace.k = config.k;

  std::map<std::string, LabelMap> pool_labels;
  for (const auto& id : pool) pool_labels.emplace(id, binarize(*data.labels[data.index_of(id)], structure_id));

  CounterRng order_rng(config.seed, static_cast<std::uint64_t>(structure_id));
  int step = 0;
  while (!unlabeled.empty()) {
    try {
      std::string selected;
      if (config.ordering == Ordering::SimilarityRanked) {
        selected = select_next(matrix, unlabeled, pool, config.k);
      } else {
        selected = unlabeled[order_rng.next() % unlabeled.size()];
      }
      CurriculumStep rec;
      rec.step = step;
      rec.selected_id = selected;
      rec.kth_similarity = kth_similarity(matrix, selected, pool, config.k);
      rec.atlas_ids = select_atlases(matrix, selected, pool, config.k);

      std::vector<Volume> atlas_images;
      std::vector<LabelMap> atlas_labels;
      for (const auto& a : rec.atlas_ids) {
        rec.atlas_similarities.push_back(matrix.score(selected, a));
        atlas_images.push_back(data.images[data.index_of(a)]);
        atlas_labels.push_back(pool_labels.at(a));
      }
      const std::size_t target = data.index_of(selected);
      FusionResult fused = lop_fuse(data.images[target], atlas_images, atlas_labels, config.fusion);
      rec.iterations = fused.iterations;
      rec.converged = fused.converged;
      if (const auto& truth = data.labels[target]) {
        rec.dice = dice(binarize(*truth, structure_id), fused.hard_labels, 1);
      }

      pool.push_back(selected);
      pool_labels.emplace(selected, fused.hard_labels);
      out.pseudo_labels.emplace(selected, std::move(fused.hard_labels));
      out.posteriors.emplace(selected, std::move(fused.posterior));
      unlabeled.erase(std::find(unlabeled.begin(), unlabeled.end(), selected));
      out.trace.steps.push_back(std::move(rec));
    } catch (const Error& e) {
      out.trace.error = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    ++step;
  }
  return out;
}

PseudoLabelResult pseudo_label_all(const Dataset& data, std::span<const SimilarityMatrix> matrices,
                                   const CurriculumConfig& config) {
  const std::size_t n = data.ids.size();
  if (data.images.size() != n || data.labels.size() != n || data.expert.size() != n) {
    throw ShapeError("dataset arrays disagree in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (data.expert[i] && !data.labels[i]) throw ManifestError("expert '" + data.ids[i] + "' has no labels");
    require_same_dims(data.images.front(), data.images[i], "pseudo_label_all");
  }
  const auto experts = data.expert_ids();
  if (config.k < 2 || experts.size() < static_cast<std::size_t>(config.k)) {
    throw InsufficientPoolError("need |expert_labeled| >= k >= 2 (k=" + std::to_string(config.k) +
                                ", experts=" + std::to_string(experts.size()) + ")");
  }
  for (const auto& m : matrices) {
    for (const auto& id : data.ids) (void)m.index_of(id);
  }

  PseudoLabelResult result;
  result.structures.resize(matrices.size());
  parallel_for(matrices.size(), config.workers, [&](std::size_t s) {
    result.structures[s] = run_curriculum(data, matrices[s], matrices[s].structure_id, config);
  });

  const Dims dims = data.images.front().dims();
  const Spacing spacing = data.images.front().spacing();
  for (const auto& id : data.unlabeled_ids()) {
    std::vector<ScalarField> layers;
    for (const int sid : data.structure_ids) {
      const ScalarField* found = nullptr;
      for (std::size_t s = 0; s < matrices.size(); ++s) {
        if (matrices[s].structure_id != sid) continue;
        const auto it = result.structures[s].posteriors.find(id);
        if (it != result.structures[s].posteriors.end()) found = &it->second;
      }
      layers.push_back(found ? *found : ScalarField(dims, spacing, 0.0));
    }
    if (layers.empty()) continue;
    LabelMap layer_index = combine(layers);
    for (std::size_t v = 0; v < layer_index.size(); ++v) {
      if (layer_index[v] != 0) layer_index[v] = static_cast<std::uint16_t>(data.structure_ids[layer_index[v] - 1u]);
    }
    result.combined.emplace(id, std::move(layer_index));
  }
  return result;
}

void write_trace(const CurriculumTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : trace.steps) {
    nlohmann::ordered_json j;
    j["structure_id"] = trace.structure_id;
    j["k"] = trace.k;
    j["step"] = s.step;
    j["selected_id"] = s.selected_id;
    j["kth_similarity"] = s.kth_similarity;
    j["atlas_ids"] = s.atlas_ids;
    j["atlas_similarities"] = s.atlas_similarities;
    j["dice"] = s.dice ? nlohmann::ordered_json(*s.dice) : nlohmann::ordered_json(nullptr);
    j["iterations"] = s.iterations;
    j["converged"] = s.converged;
    out << j.dump() << '\n';
  }
  if (trace.error) {
    nlohmann::ordered_json j;
    j["structure_id"] = trace.structure_id;
    j["k"] = trace.k;
    j["step"] = static_cast<int>(trace.steps.size());
    j["error"] = *trace.error;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

CurriculumTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CurriculumTrace t;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      t.structure_id = j.at("structure_id").get<int>();
      t.k = j.at("k").get<int>();
      if (j.contains("error")) {
        t.error = j.at("error").get<std::string>();
        continue;
      }
      CurriculumStep s;
      s.step = j.at("step").get<int>();
      s.selected_id = j.at("selected_id").get<std::string>();
      s.kth_similarity = j.at("kth_similarity").get<double>();
      s.atlas_ids = j.at("atlas_ids").get<std::vector<std::string>>();
      s.atlas_similarities = j.at("atlas_similarities").get<std::vector<double>>();
      if (!j.at("dice").is_null()) s.dice = j.at("dice").get<double>();
      s.iterations = j.at("iterations").get<int>();
      s.converged = j.at("converged").get<bool>();
      t.steps.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return t;
}

}  // namespace atlaspl
