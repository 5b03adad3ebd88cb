#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlaspl/fusion.hpp"
#include "atlaspl/similarity.hpp"
#include "atlaspl/volume.hpp"

namespace atlaspl {

// Similarity-ranked pseudo-labeling. Each unlabeled image is scored against
// the labeled pool by its K-th highest similarity; the best-scoring image is
// labeled next by fusing its K most similar pool atlases, then joins the pool.

/// K-th largest of matrix[unlabeled][j] over j in `pool`.
double kth_similarity(const SimilarityMatrix& matrix, const std::string& unlabeled_id,
                      std::span<const std::string> pool, int k);

/// Unlabeled id with the highest K-th similarity; ties go to the
/// lexicographically smallest id.
std::string select_next(const SimilarityMatrix& matrix, std::span<const std::string> unlabeled,
                        std::span<const std::string> pool, int k);

/// The k pool ids most similar to `selected_id`, most similar first, ties by id.
std::vector<std::string> select_atlases(const SimilarityMatrix& matrix, const std::string& selected_id,
                                        std::span<const std::string> pool, int k);

enum class Ordering { SimilarityRanked, Random };

struct CurriculumConfig {
  int k = 3;
  FusionConfig fusion;
  // Random is the ablation baseline: same atlas choice and fusion, shuffled order.
  Ordering ordering = Ordering::SimilarityRanked;
  std::uint64_t seed = 0;
  int workers = 0;  // parallel structures
};

/// In-memory dataset. `labels[i]` is the multi-class map of image i when known;
/// only ids flagged `expert` are used as atlases, the rest score pseudo-labels.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<Volume> images;
  std::vector<std::optional<LabelMap>> labels;
  std::vector<bool> expert;
  std::vector<int> structure_ids;

  [[nodiscard]] std::size_t index_of(const std::string& id) const;
  [[nodiscard]] std::vector<std::string> expert_ids() const;
  [[nodiscard]] std::vector<std::string> unlabeled_ids() const;
};

struct CurriculumStep {
  int step = 0;
  std::string selected_id;
  double kth_similarity = 0.0;
  std::vector<std::string> atlas_ids;
  std::vector<double> atlas_similarities;
  std::optional<double> dice;  // vs ground truth, when known
  int iterations = 0;
  bool converged = false;
};

struct CurriculumTrace {
  int structure_id = 0;
  int k = 0;
  std::vector<CurriculumStep> steps;
  std::optional<std::string> error;  // set when a step failed and the loop stopped
};

struct StructureOutcome {
  CurriculumTrace trace;
  std::map<std::string, LabelMap> pseudo_labels;  // binary
  std::map<std::string, ScalarField> posteriors;
};

/// Runs the labeling loop for one structure over the dataset.
StructureOutcome run_curriculum(const Dataset& data, const SimilarityMatrix& matrix, int structure_id,
                                const CurriculumConfig& config);

struct PseudoLabelResult {
  std::vector<StructureOutcome> structures;  // same order as the matrices
  std::map<std::string, LabelMap> combined;  // multi-class, per unlabeled image
};

/// One curriculum loop per matrix (matrix.structure_id selects the structure),
/// then per-image multi-class combination of the fused posteriors.
PseudoLabelResult pseudo_label_all(const Dataset& data, std::span<const SimilarityMatrix> matrices,
                                   const CurriculumConfig& config);

/// JSON-lines, one step per line; a failed loop ends with an error line.
void write_trace(const CurriculumTrace& trace, const std::filesystem::path& path);
CurriculumTrace read_trace(const std::filesystem::path& path);

}  // namespace atlaspl
