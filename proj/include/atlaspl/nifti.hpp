#pragma once

#include <filesystem>

#include "atlaspl/volume.hpp"

namespace atlaspl {

// NIfTI-1 single-file (.nii) reader/writer. Files ending in .gz are read
// through zlib. Supported datatypes: uint8, int16, int32, float32, float64.
// scl_slope/scl_inter are applied on read. Orientation is not resampled.

Volume load_volume(const std::filesystem::path& path);

/// Reads an integer label image. Values must be non-negative integers after
/// scaling, otherwise FormatError.
LabelMap load_labels(const std::filesystem::path& path);

/// Writes float32.
void save_volume(const Volume& v, const std::filesystem::path& path);
/// Writes float32 (posterior maps and other real-valued fields).
void save_volume(const ScalarField& v, const std::filesystem::path& path);
/// Writes the narrowest of uint8 / int16 / int32 that holds every label.
void save_volume(const LabelMap& v, const std::filesystem::path& path);

}  // namespace atlaspl
