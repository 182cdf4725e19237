#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace langsteer {

enum class ColorScale { diverging, sequential };

/// Labelled numeric table; NaN marks an undefined cell.
struct Matrix {
  std::string title;
  ColorScale scale = ColorScale::sequential;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;
};

nlohmann::json matrix_to_json(const Matrix& m, const std::string& fingerprint);
Matrix matrix_from_json(const nlohmann::json& j);

/// Header row of column labels, first column of row labels; NaN cells empty.
std::string matrix_to_csv(const Matrix& m, const std::string& fingerprint);

/// Writes <stem>.json and <stem>.csv into `dir`.
void write_matrix(const std::filesystem::path& dir, const std::string& stem, const Matrix& m,
                  const std::string& fingerprint);

/// Diverging scales are centred on white at 0 (blue negative, red positive)
/// and symmetric in the largest magnitude; sequential scales run white to blue.
std::string render_heatmap_svg(const Matrix& m);

/// Fill colour used for a cell, exposed for tests.
std::string heatmap_color(const Matrix& m, double value);

}  // namespace langsteer
