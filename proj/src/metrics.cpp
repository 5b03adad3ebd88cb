#include "atlaspl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace atlaspl {

LabelMap combine(std::span<const ScalarField> posteriors) {
  if (posteriors.empty()) throw DegenerateInputError("cannot combine an empty posterior stack");
  if (posteriors.size() > 65535) throw ShapeError("too many structures for a label map");
  for (const auto& p : posteriors) {
    require_same_dims(posteriors.front(), p, "combine");
    for (const double v : p.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DegenerateInputError("posterior value outside [0, 1]");
    }
  }
  LabelMap out(posteriors.front().dims(), posteriors.front().spacing());
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < posteriors.size(); ++s) {
      if (posteriors[s][n] > posteriors[best][n]) best = s;
    }
    out[n] = posteriors[best][n] < 0.5 ? 0 : static_cast<std::uint16_t>(best + 1);
  }
  return out;
}

std::vector<double> evaluate(const LabelMap& pred, const LabelMap& truth, int structures) {
  require_same_dims(pred, truth, "evaluate");
  if (structures <= 0) throw DegenerateInputError("structure count must be positive");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(structures));
  for (int s = 1; s <= structures; ++s) out.push_back(dice(pred, truth, s));
  return out;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DegenerateInputError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

EvaluationReport report(std::vector<std::vector<double>> evals, std::string method,
                        std::vector<std::string> image_ids) {
  if (evals.empty()) throw DegenerateInputError("report needs at least one image");
  const std::size_t structures = evals.front().size();
  for (const auto& e : evals) {
    if (e.size() != structures) throw ShapeError("inconsistent structure count across images");
  }
  if (image_ids.empty()) {
    for (std::size_t i = 0; i < evals.size(); ++i) image_ids.push_back(std::to_string(i));
  } else if (image_ids.size() != evals.size()) {
    throw ShapeError("image id count does not match evaluation count");
  }
  EvaluationReport r;
  r.method = std::move(method);
  r.image_ids = std::move(image_ids);
  r.dice = std::move(evals);
  for (std::size_t s = 0; s < structures; ++s) {
    std::vector<double> col;
    col.reserve(r.dice.size());
    for (const auto& e : r.dice) col.push_back(e[s]);
    StructureSummary sum;
    sum.structure_id = static_cast<int>(s + 1);
    sum.mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    sum.median = quantile(col, 0.5);
    sum.q1 = quantile(col, 0.25);
    sum.q3 = quantile(col, 0.75);
    sum.min = *std::min_element(col.begin(), col.end());
    sum.max = *std::max_element(col.begin(), col.end());
    r.summary.push_back(sum);
  }
  return r;
}

void write_report_tsv(const EvaluationReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "method\tstructure_id\tn\tmean\tmedian\tq1\tq3\tmin\tmax\n";
  char buf[256];
  for (const auto& s : r.summary) {
    std::snprintf(buf, sizeof(buf), "%d\t%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", s.structure_id,
                  r.dice.size(), s.mean, s.median, s.q1, s.q3, s.min, s.max);
    out << r.method << '\t' << buf << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_report_json(const EvaluationReport& r, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  auto& per_image = j["images"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.dice.size(); ++i) {
    per_image.push_back({{"id", r.image_ids[i]}, {"dice", r.dice[i]}});
  }
  auto& summary = j["structures"] = nlohmann::ordered_json::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"structure_id", s.structure_id},
                       {"mean", s.mean},
                       {"median", s.median},
                       {"q1", s.q1},
                       {"q3", s.q3},
                       {"min", s.min},
                       {"max", s.max}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace atlaspl
