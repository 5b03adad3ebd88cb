#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atlaspl/curriculum.hpp"
#include "atlaspl/manifest.hpp"

namespace atlaspl::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericalFailure = 3,
};

/// Runs one subcommand. `args` excludes the program name. Artifacts go to the
/// subcommand's output path; JSON-lines logs go to `log`, usage text to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

/// argv entry point used by the executable.
int run_subcommand(int argc, char** argv);

/// Loads every image (and label map) named by the manifest. When
/// `experts_override` is set, the first N manifest images that carry labels
/// become the expert set.
Dataset load_dataset(const DatasetManifest& manifest, std::optional<int> experts_override = std::nullopt,
                     int workers = 0);

}  // namespace atlaspl::cli
