#include "langsteer/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer {
namespace {

constexpr int kCell = 56;
constexpr int kLabel = 64;
constexpr int kTitle = 28;

std::string rgb(double r, double g, double b) {
  auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c(r), c(g), c(b));
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

std::string cell_text(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

double max_magnitude(const Matrix& m) {
  double mx = 0.0;
  for (const auto& row : m.values) {
    for (double v : row) {
      if (!std::isnan(v)) mx = std::max(mx, std::fabs(v));
    }
  }
  return mx;
}

}  // namespace

nlohmann::json matrix_to_json(const Matrix& m, const std::string& fingerprint) {
  nlohmann::json values = nlohmann::json::array();
  for (const auto& row : m.values) {
    nlohmann::json r = nlohmann::json::array();
    for (double v : row) r.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    values.push_back(r);
  }
  return {{"kind", "matrix"},
          {"fingerprint", fingerprint},
          {"title", m.title},
          {"scale", m.scale == ColorScale::diverging ? "diverging" : "sequential"},
          {"rows", m.rows},
          {"cols", m.cols},
          {"values", values}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  try {
    Matrix m;
    m.title = j.at("title").get<std::string>();
    m.scale = j.at("scale").get<std::string>() == "diverging" ? ColorScale::diverging : ColorScale::sequential;
    m.rows = j.at("rows").get<std::vector<std::string>>();
    m.cols = j.at("cols").get<std::vector<std::string>>();
    for (const auto& row : j.at("values")) {
      std::vector<double> r;
      for (const auto& v : row) r.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
      m.values.push_back(std::move(r));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid matrix JSON: ") + e.what());
  }
}

std::string matrix_to_csv(const Matrix& m, const std::string& fingerprint) {
  std::string out = "# fingerprint: " + fingerprint + "\n";
  out += "lang";
  for (const auto& c : m.cols) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    out += m.rows[i];
    for (double v : m.values[i]) out += "," + (std::isnan(v) ? std::string() : format_double(v));
    out += "\n";
  }
  return out;
}

void write_matrix(const std::filesystem::path& dir, const std::string& stem, const Matrix& m,
                  const std::string& fingerprint) {
  write_file(dir / (stem + ".json"), matrix_to_json(m, fingerprint).dump(2) + "\n");
  write_file(dir / (stem + ".csv"), matrix_to_csv(m, fingerprint));
}

std::string heatmap_color(const Matrix& m, double value) {
  if (std::isnan(value)) return "#d9d9d9";
  const double mx = max_magnitude(m);
  if (m.scale == ColorScale::diverging) {
    if (mx == 0.0 || value == 0.0) return "#ffffff";
    const double t = std::clamp(value / mx, -1.0, 1.0);
    // white -> red (#b2182b) for positive, white -> blue (#2166ac) for negative
    if (t > 0.0) return rgb(1.0 + t * (0.698 - 1.0), 1.0 + t * (0.094 - 1.0), 1.0 + t * (0.169 - 1.0));
    const double s = -t;
    return rgb(1.0 + s * (0.129 - 1.0), 1.0 + s * (0.4 - 1.0), 1.0 + s * (0.675 - 1.0));
  }
  const double t = mx == 0.0 ? 0.0 : std::clamp(value / mx, 0.0, 1.0);
  return rgb(1.0 + t * (0.129 - 1.0), 1.0 + t * (0.4 - 1.0), 1.0 + t * (0.675 - 1.0));
}

std::string render_heatmap_svg(const Matrix& m) {
  const int width = kLabel + kCell * static_cast<int>(m.cols.size()) + 8;
  const int height = kTitle + kLabel / 2 + kCell * static_cast<int>(m.rows.size()) + 8;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<text x=\"4\" y=\"18\" font-size=\"14\">" + escape_xml(m.title) + "</text>\n";
  const int top = kTitle + kLabel / 2;
  for (std::size_t j = 0; j < m.cols.size(); ++j) {
    const int x = kLabel + kCell * static_cast<int>(j) + kCell / 2;
    s += "<text class=\"col-label\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(top - 6) +
         "\" text-anchor=\"middle\">" + escape_xml(m.cols[j]) + "</text>\n";
  }
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const int y = top + kCell * static_cast<int>(i);
    s += "<text class=\"row-label\" x=\"" + std::to_string(kLabel - 6) + "\" y=\"" + std::to_string(y + kCell / 2 + 4) +
         "\" text-anchor=\"end\">" + escape_xml(m.rows[i]) + "</text>\n";
    for (std::size_t j = 0; j < m.cols.size(); ++j) {
      const double v = m.values[i][j];
      const int x = kLabel + kCell * static_cast<int>(j);
      s += "<rect class=\"cell\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
           std::to_string(kCell) + "\" height=\"" + std::to_string(kCell) + "\" fill=\"" + heatmap_color(m, v) +
           "\" stroke=\"#888888\"/>\n";
      s += "<text x=\"" + std::to_string(x + kCell / 2) + "\" y=\"" + std::to_string(y + kCell / 2 + 4) +
           "\" text-anchor=\"middle\">" + cell_text(v) + "</text>\n";
    }
  }
  s += "</svg>\n";
  return s;
}

}  // namespace langsteer
