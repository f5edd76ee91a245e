#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "atfs/analysis.hpp"
#include "atfs/io.hpp"

namespace atfs {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(split_csv(line));
  }
  return rows;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw std::runtime_error(path.string() + ": not a number: '" + s + "'");
  }
  return v;
}

std::string cell(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

const char* kind_name(bool adversarial) { return adversarial ? "adversarial" : "clean"; }

}  // namespace

void write_features_csv(const std::filesystem::path& path, const std::vector<FeaturePoint>& points) {
  std::string out = "node_id,x,y,label,kind\n";
  for (const FeaturePoint& p : points) {
    out += std::to_string(p.node_id) + "," + cell(p.x) + "," + cell(p.y) + "," +
           std::to_string(p.label) + "," + kind_name(p.adversarial) + "\n";
  }
  io::write_file_atomic(path, out);
}

std::vector<FeaturePoint> read_features_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"node_id", "x", "y", "label", "kind"}) {
    throw std::runtime_error(path.string() + ": unexpected feature csv header");
  }
  std::vector<FeaturePoint> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 5 || (row[4] != "clean" && row[4] != "adversarial")) {
      throw std::runtime_error(path.string() + ": malformed row " + std::to_string(r));
    }
    out.push_back({static_cast<std::size_t>(std::stoull(row[0])), parse_double(row[1], path),
                   parse_double(row[2], path), std::stoi(row[3]), row[4] == "adversarial"});
  }
  return out;
}

void write_raw_features_csv(const std::filesystem::path& path, const Tensor& features,
                            const std::vector<int>& labels, const std::vector<bool>& adversarial) {
  const std::size_t n = features.rows(), d = features.row_size();
  if (labels.size() != n || adversarial.size() != n) {
    throw std::invalid_argument("write_raw_features_csv: labels/kinds do not match rows");
  }
  std::string out = "node_id,label,kind";
  for (std::size_t k = 0; k < d; ++k) out += ",f" + std::to_string(k);
  out += "\n";
  for (std::size_t r = 0; r < n; ++r) {
    out += std::to_string(r) + "," + std::to_string(labels[r]) + "," + kind_name(adversarial[r]);
    for (std::size_t k = 0; k < d; ++k) out += "," + cell(features.at(r, k));
    out += "\n";
  }
  io::write_file_atomic(path, out);
}

void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& m) {
  std::string out = "class";
  for (std::size_t j = 0; j < m.classes; ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < m.classes; ++i) {
    out += std::to_string(i);
    for (std::size_t j = 0; j < m.classes; ++j) {
      out += "," + (m.is_defined(i, j) ? cell(m.at(i, j)) : std::string("nan"));
    }
    out += "\n";
  }
  io::write_file_atomic(path, out);
}

SimilarityMatrix read_similarity_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0].empty() || rows[0][0] != "class") {
    throw std::runtime_error(path.string() + ": unexpected similarity csv header");
  }
  const std::size_t c = rows[0].size() - 1;
  if (rows.size() != c + 1) throw std::runtime_error(path.string() + ": expected square matrix");
  SimilarityMatrix m{c, Tensor({c, c}), std::vector<bool>(c * c, false), {}};
  for (std::size_t i = 0; i < c; ++i) {
    if (rows[i + 1].size() != c + 1) {
      throw std::runtime_error(path.string() + ": malformed row " + std::to_string(i + 1));
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double v = parse_double(rows[i + 1][j + 1], path);
      m.values.at(i, j) = v;
      m.defined[i * c + j] = !std::isnan(v);
    }
  }
  return m;
}

void write_similarity_pgm(const std::filesystem::path& path, const SimilarityMatrix& m,
                          std::size_t cell_px) {
  if (cell_px == 0) throw std::invalid_argument("write_similarity_pgm: cell_px must be >= 1");
  const std::size_t side = m.classes * cell_px;
  std::string out = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  out.reserve(out.size() + side * side);
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      const std::size_t i = py / cell_px, j = px / cell_px;
      unsigned char g = 128;
      if (m.is_defined(i, j)) {
        const double t = (std::clamp(m.at(i, j), -1.0, 1.0) + 1.0) / 2.0;
        g = static_cast<unsigned char>(std::lround(t * 255.0));
      }
      out.push_back(static_cast<char>(g));
    }
  }
  io::write_file_atomic(path, out);
}

}  // namespace atfs
