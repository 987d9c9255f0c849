#pragma once

// Plain-file views of run results: CSV tables, binary PPM heatmaps and small
// SVG line plots. Every file carries a provenance comment.

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

std::vector<std::string> label_list(const std::vector<int>& ids, const std::map<int, std::string>& names);

/// Nested JSON array, one inner array per row.
nlohmann::json matrix_rows(const Eigen::MatrixXd& m);
nlohmann::json matrix_rows(const Eigen::MatrixXi& m);
Eigen::MatrixXd matrix_from_rows(const nlohmann::json& j);

/// Empty `col_labels` writes c0..cN headers; empty `row_labels` omits the label column.
void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m, const std::string& comment,
                      const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels);

/// P6 heatmap, values clamped to [lo, hi] on a blue-white-red ramp; each cell is
/// `cell` pixels wide.
void write_heatmap_ppm(const std::string& path, const Eigen::MatrixXd& m, double lo, double hi,
                       const std::string& comment, int cell = 16);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

void write_line_svg(const std::string& path, const std::vector<Series>& series, const std::string& title,
                    const std::string& x_label, const std::string& y_label, const std::string& comment,
                    bool log_x = false);

}  // namespace ufad
