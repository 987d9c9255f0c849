#include "ufad/experiment.hpp"
#include "ufad/hash.hpp"

#include <fstream>
#include <set>

namespace ufad {

namespace {

using nlohmann::json;

// Walks one object of the key tree, remembering which keys were consumed so
// that leftovers can be reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Reader child(const std::string& key) const {
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  template <typename T>
  void get(const std::string& key, T& out) const {
    if (!has(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key " + where(k));
  }

 private:
  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(path, "expected an integer");
      const auto x = v.get<long long>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        fail(path, "integer out of range");
      return T(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) fail(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  const json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

void read_split_counts(const Reader& r, std::map<Split, int>& out) {
  for (auto s : {Split::train, Split::val, Split::test}) r.get(to_string(s), out[s]);
  r.finish();
}

json split_counts(const std::map<Split, int>& m) {
  json j;
  for (const auto& [s, n] : m) j[to_string(s)] = n;
  return j;
}

template <typename E, std::size_t N>
E parse_enum(const std::string& value, const E (&all)[N], const std::string& path) {
  for (E e : all)
    if (value == to_string(e)) return e;
  std::string options;
  for (E e : all) options += std::string(options.empty() ? "" : ", ") + to_string(e);
  throw ConfigError("config: " + path + ": unknown value '" + value + "' (expected " + options + ")");
}

}  // namespace

const char* to_string(PartitionSource s) {
  switch (s) {
    case PartitionSource::kmeans: return "kmeans";
    case PartitionSource::semantic: return "semantic";
    case PartitionSource::random: return "random";
    case PartitionSource::manual: return "manual";
  }
  return "?";
}

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::joint: return "joint";
    case ModelKind::unifad: return "unifad";
    case ModelKind::mixnet: return "mixnet";
  }
  return "?";
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  dataset.master_seed = s;
  hyper.seed = s;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  arch.validate();
  if (hyper.lr <= 0) throw ConfigError("config: train.lr must be > 0");
  if (hyper.batch < 2) throw ConfigError("config: train.batch must be >= 2");
  if (hyper.iters < 0) throw ConfigError("config: train.iters must be >= 0");
  if (hyper.flip_prob < 0 || hyper.flip_prob > 1) throw ConfigError("config: train.flip_prob must be in [0, 1]");
  if (hyper.score_chunk < 1) throw ConfigError("config: train.score_chunk must be >= 1");
  if (shared_depth < 0 || shared_depth > int(arch.conv_filters.size()))
    throw ConfigError("config: shared_depth must be in [0, " + std::to_string(arch.conv_filters.size()) + "]");
  if (partition.num_clusters < 1 || partition.num_clusters > dataset.num_types)
    throw ConfigError("config: partition.num_clusters must be in [1, dataset.num_types]");
  if (partition.restarts < 1) throw ConfigError("config: partition.restarts must be >= 1");
  if (partition.source == PartitionSource::manual && partition.clusters.empty())
    throw ConfigError("config: partition.clusters is required for the manual source");
  auto check_fdr = [](double f, const std::string& name) {
    if (!(f > 0 && f < 1)) throw ConfigError("config: " + name + " must be in (0, 1)");
  };
  check_fdr(fdr_target, "fdr_target");
  for (double f : extra_fdr) check_fdr(f, "extra_fdr");
  for (const auto& row : sweep.rows)
    if (std::find(kAblationRows.begin(), kAblationRows.end(), row) == kAblationRows.end())
      throw ConfigError("config: sweep.rows: unknown row '" + row + "'");
  for (int d : sweep.shared_depths)
    if (d < 0 || d > int(arch.conv_filters.size())) throw ConfigError("config: sweep.shared_depths out of range");
  for (int t : sweep.branch_counts)
    if (t < 1 || t > dataset.num_types) throw ConfigError("config: sweep.branch_counts out of range");
  if (sweep.random_trials < 1) throw ConfigError("config: sweep.random_trials must be >= 1");
  if (folds.count < 1) throw ConfigError("config: folds.count must be >= 1");
  if (!(folds.holdout_fraction > 0 && folds.holdout_fraction < 1))
    throw ConfigError("config: folds.holdout_fraction must be in (0, 1)");
  for (const auto& f : folds.held_out)
    for (int t : f)
      if (t < 0 || t >= dataset.num_types)
        throw ConfigError("config: folds.held_out references unknown type " + std::to_string(t));
  if (fusion.gbdt.num_trees < 0 || fusion.gbdt.max_depth < 1 || fusion.gbdt.shrinkage <= 0)
    throw ConfigError("config: fusion.gbdt parameters out of range");
  for (double b : fusion.cascade_budgets)
    if (!(b >= 0 && b < 1)) throw ConfigError("config: fusion.cascade_budgets must be in [0, 1)");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const Reader root(j, "");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("shared_depth", c.shared_depth);
  root.get("fdr_target", c.fdr_target);
  root.get("extra_fdr", c.extra_fdr);
  root.get("classify_all_attacks", c.classify_all_attacks);
  if (root.has("model")) {
    std::string m;
    root.get("model", m);
    c.model = parse_enum(m, {ModelKind::joint, ModelKind::unifad, ModelKind::mixnet}, "model");
  }
  if (root.has("dataset")) {
    const auto r = root.child("dataset");
    r.get("image_size", c.dataset.image_size);
    r.get("channels", c.dataset.channels);
    r.get("num_types", c.dataset.num_types);
    r.get("holdout_types", c.dataset.holdout_types);
    if (r.has("bona_fide")) read_split_counts(r.child("bona_fide"), c.dataset.bona_fide_count);
    if (r.has("attacks_per_type")) read_split_counts(r.child("attacks_per_type"), c.dataset.attacks_per_type);
    r.finish();
  }
  if (root.has("arch")) {
    const auto r = root.child("arch");
    r.get("conv_filters", c.arch.conv_filters);
    r.get("hidden_units", c.arch.hidden_units);
    r.finish();
  }
  if (root.has("train")) {
    const auto r = root.child("train");
    r.get("lr", c.hyper.lr);
    r.get("batch", c.hyper.batch);
    r.get("iters", c.hyper.iters);
    r.get("flip_prob", c.hyper.flip_prob);
    r.get("score_chunk", c.hyper.score_chunk);
    r.finish();
  }
  if (root.has("partition")) {
    const auto r = root.child("partition");
    if (r.has("source")) {
      std::string s;
      r.get("source", s);
      c.partition.source = parse_enum(s,
                                      {PartitionSource::kmeans, PartitionSource::semantic,
                                       PartitionSource::random, PartitionSource::manual},
                                      "partition.source");
    }
    r.get("num_clusters", c.partition.num_clusters);
    r.get("restarts", c.partition.restarts);
    r.get("seed", c.partition.seed);
    r.get("clusters", c.partition.clusters);
    r.finish();
  }
  if (root.has("sweep")) {
    const auto r = root.child("sweep");
    r.get("rows", c.sweep.rows);
    r.get("shared_depths", c.sweep.shared_depths);
    r.get("branch_counts", c.sweep.branch_counts);
    r.get("random_trials", c.sweep.random_trials);
    r.finish();
  }
  if (root.has("folds")) {
    const auto r = root.child("folds");
    r.get("count", c.folds.count);
    r.get("holdout_fraction", c.folds.holdout_fraction);
    r.get("held_out", c.folds.held_out);
    r.finish();
  }
  if (root.has("fusion")) {
    const auto r = root.child("fusion");
    if (r.has("gbdt")) {
      const auto g = r.child("gbdt");
      g.get("num_trees", c.fusion.gbdt.num_trees);
      g.get("max_depth", c.fusion.gbdt.max_depth);
      g.get("shrinkage", c.fusion.gbdt.shrinkage);
      g.finish();
    }
    r.get("cascade_budgets", c.fusion.cascade_budgets);
    r.finish();
  }
  root.finish();
  c.arch.image_size = c.dataset.image_size;
  c.arch.channels = c.dataset.channels;
  c.set_seed(c.seed);
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c, bool with_out_dir) {
  json j;
  j["seed"] = c.seed;
  if (with_out_dir) j["out_dir"] = c.out_dir;
  j["model"] = to_string(c.model);
  j["shared_depth"] = c.shared_depth;
  j["fdr_target"] = c.fdr_target;
  j["extra_fdr"] = c.extra_fdr;
  j["classify_all_attacks"] = c.classify_all_attacks;
  j["dataset"] = {{"image_size", c.dataset.image_size},
                  {"channels", c.dataset.channels},
                  {"num_types", c.dataset.num_types},
                  {"holdout_types", c.dataset.holdout_types},
                  {"bona_fide", split_counts(c.dataset.bona_fide_count)},
                  {"attacks_per_type", split_counts(c.dataset.attacks_per_type)}};
  j["arch"] = {{"conv_filters", c.arch.conv_filters}, {"hidden_units", c.arch.hidden_units}};
  j["train"] = {{"lr", c.hyper.lr},
                {"batch", c.hyper.batch},
                {"iters", c.hyper.iters},
                {"flip_prob", c.hyper.flip_prob},
                {"score_chunk", c.hyper.score_chunk}};
  j["partition"] = {{"source", to_string(c.partition.source)},
                    {"num_clusters", c.partition.num_clusters},
                    {"restarts", c.partition.restarts},
                    {"seed", c.partition.seed},
                    {"clusters", c.partition.clusters}};
  j["sweep"] = {{"rows", c.sweep.rows},
                {"shared_depths", c.sweep.shared_depths},
                {"branch_counts", c.sweep.branch_counts},
                {"random_trials", c.sweep.random_trials}};
  j["folds"] = {{"count", c.folds.count},
                {"holdout_fraction", c.folds.holdout_fraction},
                {"held_out", c.folds.held_out}};
  j["fusion"] = {{"gbdt",
                  {{"num_trees", c.fusion.gbdt.num_trees},
                   {"max_depth", c.fusion.gbdt.max_depth},
                   {"shrinkage", c.fusion.gbdt.shrinkage}}},
                 {"cascade_budgets", c.fusion.cascade_budgets}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
  return hex64(fnv1a64(config_to_json(c, false).dump()));
}

json provenance(const ExperimentConfig& c) {
  return {{"config_hash", config_hash(c)}, {"tool_version", kToolVersion}};
}

}  // namespace ufad
