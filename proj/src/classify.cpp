#include "ufad/classify.hpp"

#include "ufad/tensor.hpp"

#include <algorithm>

namespace ufad {

TypePrototypes build_prototypes(const Eigen::MatrixXd& features, std::span<const int> attack_types,
                                const std::map<int, int>& category_of_type,
                                std::span<const int> required_types) {
  if (Index(attack_types.size()) != features.rows())
    throw ShapeError("build_prototypes: one attack type per feature row is required");
  std::map<int, std::pair<Eigen::VectorXd, int>> acc;
  for (Index i = 0; i < features.rows(); ++i) {
    auto [it, _] = acc.try_emplace(attack_types[std::size_t(i)], Eigen::VectorXd::Zero(features.cols()), 0);
    it->second.first += features.row(i).transpose();
    it->second.second += 1;
  }
  for (int t : required_types)
    if (!acc.count(t)) throw DataError("no training attacks of type " + std::to_string(t));
  TypePrototypes p;
  p.rows.resize(Index(acc.size()), features.cols());
  Index r = 0;
  for (const auto& [type, sc] : acc) {
    p.type_ids.push_back(type);
    p.rows.row(r++) = (sc.first / double(sc.second)).transpose();
    auto c = category_of_type.find(type);
    if (c == category_of_type.end()) throw DataError("no category for attack type " + std::to_string(type));
    p.category_of_type[type] = c->second;
  }
  return p;
}

TypePrediction predict_type(const TypePrototypes& protos, const Eigen::VectorXd& feature) {
  if (feature.size() != protos.rows.cols()) throw ShapeError("feature dimension does not match prototypes");
  const double fn = feature.norm();
  if (!(fn > 0)) throw DataError("cannot classify a zero-norm feature");
  TypePrediction best;
  best.similarity = -2;
  for (Index i = 0; i < protos.rows.rows(); ++i) {
    const double pn = protos.rows.row(i).norm();
    if (!(pn > 0)) continue;
    const double sim = protos.rows.row(i).dot(feature) / (pn * fn);
    if (sim > best.similarity) {
      best.similarity = sim;
      best.type_id = protos.type_ids[std::size_t(i)];
    }
  }
  if (best.type_id < 0) throw DataError("all prototypes are degenerate");
  best.category = protos.category_of_type.at(best.type_id);
  return best;
}

ConfusionResult confusion(std::span<const int> truth, std::span<const int> predicted,
                          const std::map<int, int>& category_of_type, int num_categories) {
  if (truth.size() != predicted.size()) throw DataError("confusion: length mismatch");
  ConfusionResult r;
  for (const auto& [t, _] : category_of_type) r.type_ids.push_back(t);
  const Index L = Index(r.type_ids.size());
  auto pos = [&](int type) {
    auto it = std::lower_bound(r.type_ids.begin(), r.type_ids.end(), type);
    if (it == r.type_ids.end() || *it != type) throw DataError("unknown attack type " + std::to_string(type));
    return Index(it - r.type_ids.begin());
  };
  r.type_counts = Eigen::MatrixXi::Zero(L, L);
  r.category_counts = Eigen::MatrixXi::Zero(num_categories, num_categories);
  std::size_t type_ok = 0, cat_ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.type_counts(pos(truth[i]), pos(predicted[i])) += 1;
    const int ct = category_of_type.at(truth[i]), cp = category_of_type.at(predicted[i]);
    r.category_counts(ct, cp) += 1;
    type_ok += truth[i] == predicted[i];
    cat_ok += ct == cp;
  }
  auto normalise = [](const Eigen::MatrixXi& counts) {
    Eigen::MatrixXd m = counts.cast<double>();
    for (Index i = 0; i < m.rows(); ++i) {
      const double s = m.row(i).sum();
      if (s > 0) m.row(i) /= s;
    }
    return m;
  };
  r.type_matrix = normalise(r.type_counts);
  r.category_matrix = normalise(r.category_counts);
  r.num_samples = truth.size();
  if (!truth.empty()) {
    r.type_accuracy = double(type_ok) / double(truth.size());
    r.category_accuracy = double(cat_ok) / double(truth.size());
  }
  return r;
}

nlohmann::json TypePrototypes::to_json() const {
  nlohmann::json j;
  j["type_ids"] = type_ids;
  j["rows"] = nlohmann::json::array();
  for (Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> row(std::size_t(rows.cols()));
    for (Index k = 0; k < rows.cols(); ++k) row[std::size_t(k)] = rows(i, k);
    j["rows"].push_back(row);
  }
  nlohmann::json cats;
  for (const auto& [t, c] : category_of_type) cats[std::to_string(t)] = c;
  j["category_of_type"] = cats;
  return j;
}

}  // namespace ufad
