#pragma once

// Checkpoints are flat JSON objects. Every array is stored under its name as a
// list of rows (a column vector of length n is an n x 1 array); scalars and
// strings sit alongside. Doubles are written with enough digits to round-trip.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vbll/types.hpp"

namespace vbll {

using Json = nlohmann::json;

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
/// Reads `key` from a checkpoint and checks its shape.
Matrix read_array(const Json& j, const std::string& key, Index rows, Index cols);

void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);

}  // namespace vbll
