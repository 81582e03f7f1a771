#include "vbll/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace vbll {

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  require(j.is_array(), "checkpoint: array expected");
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[i];
    require(row.is_array() && static_cast<Index>(row.size()) == cols, "checkpoint: ragged array");
    for (Index c = 0; c < cols; ++c) m(i, c) = row[c].get<double>();
  }
  return m;
}

Matrix read_array(const Json& j, const std::string& key, Index rows, Index cols) {
  require(j.contains(key), "checkpoint: missing key '" + key + "'");
  Matrix m = matrix_from_json(j.at(key));
  require(m.rows() == rows && m.cols() == cols, "checkpoint: key '" + key + "' has wrong shape");
  return m;
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Json::parse(in);
}

}  // namespace vbll
