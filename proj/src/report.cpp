#include "ufad/experiment.hpp"
#include "ufad/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ufad {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> label_list(const std::vector<int>& ids, const std::map<int, std::string>& names) {
  std::vector<std::string> out;
  for (int id : ids) {
    auto it = names.find(id);
    out.push_back(it == names.end() ? std::to_string(id) : it->second);
  }
  return out;
}

json matrix_rows(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return out;
}

json matrix_rows(const Eigen::MatrixXi& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(std::vector<int>(m.row(r).begin(), m.row(r).end()));
  return out;
}

Eigen::MatrixXd matrix_from_rows(const json& j) {
  const Index rows = Index(j.size());
  const Index cols = rows ? Index(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (Index(j[std::size_t(r)].size()) != cols) throw DataError("matrix rows have different lengths");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[std::size_t(r)][std::size_t(c)].get<double>();
  }
  return m;
}

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// blue (lo) -> white -> red (hi)
std::array<unsigned char, 3> ramp(double v, double lo, double hi) {
  double t = hi > lo ? (std::clamp(v, lo, hi) - lo) / (hi - lo) : 0.5;
  if (!std::isfinite(t)) t = 0.5;
  auto u8 = [](double x) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
  if (t < 0.5) {
    const double a = t / 0.5;
    return {u8(a), u8(a), 255};
  }
  const double a = (1.0 - t) / 0.5;
  return {255, u8(a), u8(a)};
}

}  // namespace

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m, const std::string& comment,
                      const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels) {
  if (!row_labels.empty() && Index(row_labels.size()) != m.rows())
    throw DataError("write_matrix_csv: row label count does not match");
  if (!col_labels.empty() && Index(col_labels.size()) != m.cols())
    throw DataError("write_matrix_csv: column label count does not match");
  auto out = open_out(path);
  if (!comment.empty()) out << "# " << comment << '\n';
  if (!row_labels.empty()) out << "label,";
  for (Index c = 0; c < m.cols(); ++c)
    out << (c ? "," : "") << (col_labels.empty() ? "c" + std::to_string(c) : col_labels[std::size_t(c)]);
  out << '\n' << std::setprecision(12);
  for (Index r = 0; r < m.rows(); ++r) {
    if (!row_labels.empty()) out << row_labels[std::size_t(r)] << ',';
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
}

void write_heatmap_ppm(const std::string& path, const Eigen::MatrixXd& m, double lo, double hi,
                       const std::string& comment, int cell) {
  if (cell < 1) throw DataError("heatmap cell size must be positive");
  auto out = open_out(path, std::ios::out | std::ios::binary);
  const Index w = m.cols() * cell, h = m.rows() * cell;
  out << "P6\n";
  if (!comment.empty()) out << "# " << comment << '\n';
  out << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(std::size_t(w) * 3);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      const auto px = ramp(m(r, c), lo, hi);
      for (int k = 0; k < cell; ++k)
        std::copy(px.begin(), px.end(), row.begin() + std::ptrdiff_t((c * cell + k) * 3));
    }
    for (int k = 0; k < cell; ++k) out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
}

void write_line_svg(const std::string& path, const std::vector<Series>& series, const std::string& title,
                    const std::string& x_label, const std::string& y_label, const std::string& comment,
                    bool log_x) {
  constexpr double W = 640, H = 420, L = 64, R = 160, T = 40, B = 56;
  auto tx = [&](double x) { return log_x ? std::log10(std::max(x, 1e-6)) : x; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DataError("series " + s.name + ": x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
  y0 = std::min(y0, 0.0);
  y1 = std::max(y1, y0 + 1e-9);
  auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  auto out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  if (!comment.empty()) out << "<!-- " << xml_escape(comment) << " -->\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << std::setprecision(4);
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double xv = x0 + (x1 - x0) * k / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
        << "</text>\n";
    const double xpos = L + (xv - x0) / (x1 - x0) * (W - L - R);
    out << "<text x=\"" << xpos << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << (log_x ? std::pow(10.0, xv) : xv) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xml_escape(x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      out << (i ? " " : "") << px(series[s].x[i]) << ',' << py(series[s].y[i]);
    out << "\"/>\n"
        << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * double(s + 1) << "\" font-size=\"12\" fill=\"" << color
        << "\">" << xml_escape(series[s].name) << "</text>\n";
  }
  out << "</svg>\n";
}

namespace {

std::string comment_of(const json& j) {
  if (!j.contains("provenance")) return "";
  const auto& p = j["provenance"];
  return "config_hash=" + p.value("config_hash", std::string()) + " tool_version=" + p.value("tool_version", std::string());
}

std::optional<json> load(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

Series roc_series(const fs::path& csv, const std::string& name) {
  Series s{name, {}, {}};
  std::ifstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 't') continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    const double fdr = std::stod(b);
    if (fdr <= 0) continue;
    s.x.push_back(fdr);
    s.y.push_back(std::stod(c));
  }
  std::reverse(s.x.begin(), s.x.end());
  std::reverse(s.y.begin(), s.y.end());
  return s;
}

void render_pipeline(const fs::path& dir, const json& j) {
  const std::string cm = comment_of(j);
  const fs::path rep = dir / "reports";
  {
    auto out = open_out((rep / "per_type.csv").string());
    out << "# " << cm << "\ntype,category,count,joint_tdr,proposed_tdr\n" << std::setprecision(12);
    for (const auto& [name, v] : j["proposed"]["per_type"].items())
      out << name << ',' << v.value("category", std::string()) << ',' << v["count"] << ','
          << j["joint"]["per_type"][name]["tdr"].get<double>() << ',' << v["tdr"].get<double>() << '\n';
  }
  {
    auto out = open_out((rep / "per_category.csv").string());
    out << "# " << cm << "\ncategory,count,joint_tdr,proposed_tdr\n" << std::setprecision(12);
    for (const auto& [name, v] : j["proposed"]["per_category"].items())
      out << name << ',' << v["count"] << ',' << j["joint"]["per_category"][name]["tdr"].get<double>() << ','
          << v["tdr"].get<double>() << '\n';
  }
  if (j.contains("branch_generalization")) {
    auto out = open_out((rep / "branch_generalization.csv").string());
    out << "# " << cm << "\nbranch,threshold,within_count,within_tdr,outside_count,outside_tdr\n"
        << std::setprecision(12);
    for (const auto& b : j["branch_generalization"])
      out << b["branch"] << ',' << b["threshold"].get<double>() << ',' << b["within"]["count"] << ','
          << b["within"]["tdr"].get<double>() << ',' << b["outside"]["count"] << ','
          << b["outside"]["tdr"].get<double>() << '\n';
  }
  if (j.contains("classification")) {
    const auto& c = j["classification"];
    std::vector<std::string> names;
    for (int id : c["type_ids"].get<std::vector<int>>()) names.push_back("type" + std::to_string(id));
    const Eigen::MatrixXd tm = matrix_from_rows(c["type_matrix"]);
    if (tm.size()) {
      write_matrix_csv((rep / "confusion_type.csv").string(), tm, cm, names, names);
      write_heatmap_ppm((rep / "confusion_type.ppm").string(), tm, -1.0, 1.0, cm);
    }
    const Eigen::MatrixXd km = matrix_from_rows(c["category_matrix"]);
    const std::vector<std::string> cats{to_string(Category(0)), to_string(Category(1)), to_string(Category(2))};
    if (km.rows() == 3 && km.cols() == 3) {
      write_matrix_csv((rep / "confusion_category.csv").string(), km, cm, cats, cats);
      write_heatmap_ppm((rep / "confusion_category.ppm").string(), km, -1.0, 1.0, cm);
    }
  }
  std::vector<Series> roc;
  for (const auto& [file, name] : {std::pair{"roc_joint.csv", "JointCNN"}, std::pair{"roc_proposed.csv", "Proposed"}})
    if (fs::exists(dir / "eval" / file)) roc.push_back(roc_series(dir / "eval" / file, name));
  if (!roc.empty()) write_line_svg((rep / "roc.svg").string(), roc, "ROC (test)", "FDR", "TDR", cm, true);
}

void render_ablation(const fs::path& dir, const json& j) {
  const std::string cm = comment_of(j);
  const fs::path rep = dir / "reports";
  {
    auto out = open_out((rep / "ablation_table.csv").string());
    out << "# " << cm << "\nrow,tdr_mean,tdr_std,accuracy_mean,accuracy_std,trials\n" << std::setprecision(12);
    for (const auto& r : j["table"])
      out << r["name"].get<std::string>() << ',' << r["tdr"]["mean"].get<double>() << ','
          << r["tdr"]["std"].get<double>() << ',' << r["accuracy"]["mean"].get<double>() << ','
          << r["accuracy"]["std"].get<double>() << ',' << r["tdr"]["values"].size() << '\n';
  }
  auto sweep = [&](const char* key, const char* field, const std::string& stem, const std::string& xlabel) {
    if (!j.contains(key) || j[key].empty()) return;
    Series tdr{"TDR", {}, {}}, acc{"accuracy", {}, {}};
    auto out = open_out((rep / (stem + ".csv")).string());
    out << "# " << cm << '\n' << field << ",tdr,accuracy\n" << std::setprecision(12);
    for (const auto& r : j[key]) {
      const double x = r[field].get<double>();
      tdr.x.push_back(x);
      tdr.y.push_back(r["tdr"].get<double>());
      acc.x.push_back(x);
      acc.y.push_back(r["accuracy"]["accuracy"].get<double>());
      out << x << ',' << tdr.y.back() << ',' << acc.y.back() << '\n';
    }
    write_line_svg((rep / (stem + ".svg")).string(), {tdr, acc}, stem, xlabel, "rate", cm);
  };
  sweep("shared_depth_sweep", "shared_ratio", "shared_depth_sweep", "shared conv fraction");
  sweep("branch_sweep", "branches", "branch_sweep", "branches");
}

void render_fusion(const fs::path& dir, const json& j) {
  const std::string cm = comment_of(j);
  auto out = open_out((dir / "reports" / "fusion_table.csv").string());
  out << "# " << cm << "\nmethod,tdr,fdr,accuracy\n" << std::setprecision(12);
  auto row = [&](const json& r) {
    out << r["name"].get<std::string>() << ',' << r["tdr"].get<double>() << ',' << r["fdr"].get<double>() << ','
        << r["accuracy"]["accuracy"].get<double>() << '\n';
  };
  for (const auto& r : j["specialists"]) row(r);
  for (const auto& r : j["rules"]) row(r);
  row(j["gbdt"]);
  out << "cascade," << j["cascade"]["tdr"].get<double>() << ',' << j["cascade"]["fdr"].get<double>() << ",\n";
  row(j["mixnet"]);
  row(j["proposed"]);
}

void render_unseen(const fs::path& dir, const json& j) {
  const std::string cm = comment_of(j);
  auto out = open_out((dir / "reports" / "unseen.csv").string());
  out << "# " << cm << "\nfold,held_out,seen_tdr,unseen_tdr,overall_tdr,accuracy\n" << std::setprecision(12);
  std::size_t k = 0;
  for (const auto& f : j["folds"]) {
    std::string held;
    for (int t : f["held_out"].get<std::vector<int>>()) held += (held.empty() ? "" : " ") + std::to_string(t);
    out << k++ << ',' << held << ',' << f["seen_tdr"].get<double>() << ',' << f["unseen_tdr"].get<double>() << ','
        << f["overall_tdr"].get<double>() << ',' << f["accuracy"].get<double>() << '\n';
  }
}

}  // namespace

void render_reports(const std::string& out_dir) {
  const fs::path dir(out_dir);
  if (auto j = load(dir / "report.json")) render_pipeline(dir, *j);
  if (auto j = load(dir / "ablation.json")) render_ablation(dir, *j);
  if (auto j = load(dir / "fusion.json")) render_fusion(dir, *j);
  if (auto j = load(dir / "unseen.json")) render_unseen(dir, *j);
}

}  // namespace ufad
