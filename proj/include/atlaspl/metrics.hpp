#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atlaspl/volume.hpp"

namespace atlaspl {

/// Per-voxel multi-class decision from per-structure foreground posteriors.
/// Layer s-1 holds structure s. A voxel is background when its largest
/// posterior is below 0.5, otherwise the 1-based index of the largest one;
/// equal maxima go to the smallest index.
LabelMap combine(std::span<const ScalarField> posteriors);

/// Dice of structures 1..structures.
std::vector<double> evaluate(const LabelMap& pred, const LabelMap& truth, int structures);

struct StructureSummary {
  int structure_id = 0;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct EvaluationReport {
  std::string method;
  std::vector<std::string> image_ids;
  std::vector<std::vector<double>> dice;  // [image][structure - 1]
  std::vector<StructureSummary> summary;
};

/// Linear-interpolation quantile (type 7) of `values`, p in [0, 1].
double quantile(std::vector<double> values, double p);

/// Summarizes per-image Dice vectors. Image ids default to their positions.
EvaluationReport report(std::vector<std::vector<double>> evals, std::string method,
                        std::vector<std::string> image_ids = {});

/// One row per structure.
void write_report_tsv(const EvaluationReport& r, const std::filesystem::path& path);
void write_report_json(const EvaluationReport& r, const std::filesystem::path& path);

}  // namespace atlaspl
