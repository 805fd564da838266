// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgmrn/datamodel.hpp"

namespace mgmrn {

/// Dataset directory layout: `manifest.json` describing shapes, class lists
/// and split index lists, plus one raw binary file per array (little-endian
/// float32 row-major; labels are little-endian int32).
void save_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);

/// Loads and validates a dataset directory. Throws on missing files,
/// manifest/array shape mismatches and seen/unseen split overlap.
DatasetBundle load_bundle(const std::filesystem::path& dir);

// Raw little-endian array helpers, shared with feature/attention export.
void write_f32(const std::filesystem::path& file, const float* data, std::size_t count);
std::vector<float> read_f32(const std::filesystem::path& file, std::size_t expect);
void write_i32(const std::filesystem::path& file, const std::int32_t* data, std::size_t count);
std::vector<std::int32_t> read_i32(const std::filesystem::path& file, std::size_t expect);

}  // namespace mgmrn
