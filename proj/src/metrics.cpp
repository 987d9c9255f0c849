#include "ufad/metrics.hpp"

#include "ufad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace ufad {

namespace {

struct Sorted {
  std::vector<double> bona_fide, attack;  // ascending
};

Sorted split_sorted(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  Sorted s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DataError("non-finite score");
    (labels[i] ? s.attack : s.bona_fide).push_back(scores[i]);
  }
  if (s.bona_fide.empty() || s.attack.empty())
    throw DataError("evaluation needs both bona fide and attack samples");
  std::sort(s.bona_fide.begin(), s.bona_fide.end());
  std::sort(s.attack.begin(), s.attack.end());
  return s;
}

// Fraction of `sorted` values >= t.
double frac_at_least(const std::vector<double>& sorted, double t) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
  return double(sorted.end() - it) / double(sorted.size());
}

std::vector<double> candidates(std::span<const double> scores) {
  std::vector<double> c(scores.begin(), scores.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

double above(double max) { return std::nextafter(max, std::numeric_limits<double>::infinity()); }

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const Sorted s = split_sorted(scores, labels);
  RocCurve roc;
  roc.num_bona_fide = s.bona_fide.size();
  roc.num_attack = s.attack.size();
  const auto c = candidates(scores);
  roc.points.push_back({std::nextafter(c.front(), -std::numeric_limits<double>::infinity()), 1.0, 1.0});
  for (double t : c) roc.points.push_back({t, frac_at_least(s.bona_fide, t), frac_at_least(s.attack, t)});
  roc.points.push_back({above(c.back()), 0.0, 0.0});
  return roc;
}

void RocCurve::write_csv(const std::string& path, const std::string& comment) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "threshold,fdr,tdr\n" << std::setprecision(12);
  for (const auto& p : points) out << p.threshold << ',' << p.fdr << ',' << p.tdr << '\n';
}

OperatingPoint tdr_at_fdr(std::span<const double> scores, std::span<const int> labels, double fdr_target) {
  if (!(fdr_target > 0 && fdr_target < 1)) throw DataError("fdr target must lie in (0, 1)");
  const Sorted s = split_sorted(scores, labels);
  const auto c = candidates(scores);
  // bona fide flag rate is non-increasing in the threshold: binary search
  // for the first candidate that meets the budget
  auto it = std::partition_point(c.begin(), c.end(),
                                 [&](double t) { return frac_at_least(s.bona_fide, t) > fdr_target; });
  const double t = it == c.end() ? above(c.back()) : *it;
  return {t, frac_at_least(s.attack, t), frac_at_least(s.bona_fide, t)};
}

double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  const Sorted s = split_sorted(scores, labels);
  const double tpr = frac_at_least(s.attack, threshold);
  const double tnr = 1.0 - frac_at_least(s.bona_fide, threshold);
  return 0.5 * (tpr + tnr);
}

AccuracyResult accuracy(std::span<const double> val_scores, std::span<const int> val_labels,
                        std::span<const double> test_scores, std::span<const int> test_labels) {
  const Sorted v = split_sorted(val_scores, val_labels);
  auto c = candidates(val_scores);
  c.push_back(above(c.back()));
  AccuracyResult r;
  // balanced accuracy is proportional to tp * n_bf + tn * n_att; compare the
  // integer form so ties resolve to the lowest threshold exactly
  const auto nb = std::uint64_t(v.bona_fide.size()), na = std::uint64_t(v.attack.size());
  std::uint64_t best = 0;
  bool first = true;
  for (double t : c) {
    const auto tp = std::uint64_t(v.attack.end() - std::lower_bound(v.attack.begin(), v.attack.end(), t));
    const auto tn = std::uint64_t(std::lower_bound(v.bona_fide.begin(), v.bona_fide.end(), t) - v.bona_fide.begin());
    const std::uint64_t key = tp * nb + tn * na;
    if (first || key > best) {
      best = key;
      r.threshold = t;
      first = false;
    }
  }
  r.balanced_accuracy = balanced_accuracy(test_scores, test_labels, r.threshold);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_scores.size(); ++i)
    correct += (test_scores[i] >= r.threshold) == (test_labels[i] == 1);
  r.accuracy = double(correct) / double(test_scores.size());
  return r;
}

Breakdown breakdown(std::span<const double> scores, std::span<const int> labels,
                    std::span<const int> attack_types, const std::map<int, std::string>& category_of_type,
                    double fdr_target) {
  if (attack_types.size() != scores.size()) throw DataError("attack types and scores differ in length");
  Breakdown b;
  b.overall = tdr_at_fdr(scores, labels, fdr_target);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    const int type = attack_types[i];
    auto cat = category_of_type.find(type);
    if (cat == category_of_type.end()) throw DataError("unknown attack type id " + std::to_string(type));
    const bool hit = scores[i] >= b.overall.threshold;
    for (GroupRate* g : {&b.per_type[type], &b.per_category[cat->second]}) {
      g->count += 1;
      g->detected += hit;
    }
  }
  for (auto& [_, g] : b.per_type) g.tdr = double(g.detected) / double(g.count);
  for (auto& [_, g] : b.per_category) g.tdr = double(g.detected) / double(g.count);
  return b;
}

nlohmann::json to_json(const Breakdown& b, const std::map<int, std::string>& type_names) {
  nlohmann::json j;
  j["threshold"] = b.overall.threshold;
  j["tdr"] = b.overall.tdr;
  j["fdr"] = b.overall.fdr;
  for (const auto& [t, g] : b.per_type) {
    auto it = type_names.find(t);
    const std::string name = it == type_names.end() ? std::to_string(t) : it->second;
    j["per_type"][name] = {{"type_id", t}, {"count", g.count}, {"detected", g.detected}, {"tdr", g.tdr}};
  }
  for (const auto& [c, g] : b.per_category)
    j["per_category"][c] = {{"count", g.count}, {"detected", g.detected}, {"tdr", g.tdr}};
  return j;
}

}  // namespace ufad
