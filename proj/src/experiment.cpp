#include "ufad/experiment.hpp"

#include "ufad/checkpoint.hpp"
#include "ufad/hash.hpp"
#include "ufad/report.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>

namespace ufad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// Runs one named stage; failures are re-raised with the stage name in front.
template <typename F>
auto stage(const std::string& name, json& timing, F&& f) {
  const auto t0 = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      timing["stage_seconds"][name] = seconds_since(t0);
    } else {
      auto r = f();
      timing["stage_seconds"][name] = seconds_since(t0);
      return r;
    }
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name + ": " + e.what());
  }
}

std::string comment(const ExperimentConfig& c) {
  return std::string("config_hash=") + config_hash(c) + " tool_version=" + kToolVersion;
}

void write_json(const std::string& path, const json& j) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::vector<int> labels_of(const std::vector<ImageSample>& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.label);
  return out;
}

std::vector<int> types_of(const std::vector<ImageSample>& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.attack_type ? *x.attack_type : -1);
  return out;
}

std::vector<ImageSample> attacks_of(const std::vector<ImageSample>& s) {
  std::vector<ImageSample> out;
  for (const auto& x : s)
    if (x.label == 1) out.push_back(x);
  return out;
}

std::vector<int> present_types(const std::vector<ImageSample>& s) {
  std::set<int> t;
  for (const auto& x : s)
    if (x.attack_type) t.insert(*x.attack_type);
  return {t.begin(), t.end()};
}

std::vector<double> col(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// Replaces freshly built parameters with checkpointed ones of the same layout.
void adopt(ParamStore<float>& target, const ParamStore<float>& loaded, const std::string& what) {
  if (target.values.size() != loaded.values.size())
    throw DataError(what + ": checkpoint holds " + std::to_string(loaded.values.size()) + " tensors, model needs " +
                    std::to_string(target.values.size()));
  for (const auto& [name, t] : target.values) {
    auto it = loaded.values.find(name);
    if (it == loaded.values.end()) throw DataError(what + ": checkpoint lacks tensor " + name);
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw DataError(what + ": tensor " + name + " has the wrong shape");
  }
  target = loaded;
}

std::optional<Checkpoint> resumable(const std::string& path, const ExperimentConfig& c, const json& extra = {}) {
  if (!fs::exists(path)) return std::nullopt;
  auto ck = load_checkpoint(path);
  if (ck.metadata.value("config_hash", "") != config_hash(c)) return std::nullopt;
  for (const auto& [k, v] : extra.items())
    if (!ck.metadata.contains(k) || ck.metadata[k] != v) return std::nullopt;
  return ck;
}

std::vector<std::vector<int>> partition_clusters(const Partition& p) { return p.clusters(); }

UniFADModel<float> unifad_from_checkpoint(const Checkpoint& ck, const ExperimentConfig& c) {
  const Partition p = manual_partition(ck.metadata.at("partition").get<std::vector<std::vector<int>>>());
  auto m = build_unifad<float>(c.arch, p, ck.metadata.at("shared_depth").get<int>(), c.seed);
  if (ck.metadata.value("final_mode", "decision_layer") == "max_branch") m.final_mode = FinalMode::max_branch;
  adopt(m.params, ck.params, "unifad checkpoint");
  m.steps = ck.metadata.value("steps", 0L);
  return m;
}

json unifad_metadata(const UniFADModel<float>& m, const ExperimentConfig& c, const std::string& kind) {
  json meta = provenance(c);
  meta["kind"] = kind;
  meta["partition"] = partition_clusters(m.partition);
  meta["shared_depth"] = m.shared_depth;
  meta["final_mode"] = m.final_mode == FinalMode::max_branch ? "max_branch" : "decision_layer";
  meta["steps"] = m.steps;
  return meta;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

json mean_std(const std::vector<double>& v) { return {{"mean", mean_of(v)}, {"std", std_of(v)}, {"values", v}}; }

json row_json(const ScoredRow& r, const Dataset& ds, const ExperimentConfig& c) {
  json j = to_json(r.eval, ds, c);
  j["name"] = r.name;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

void write_scores_csv(const std::string& path, const ExperimentConfig& c, const std::vector<ImageSample>& samples,
                      const std::vector<std::pair<std::string, std::vector<double>>>& columns) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "# " << comment(c) << '\n' << "sample_seed,label,attack_type";
  for (const auto& [name, _] : columns) out << ',' << name;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << samples[i].sample_seed << ',' << samples[i].label << ','
        << (samples[i].attack_type ? *samples[i].attack_type : -1);
    for (const auto& [_, v] : columns) out << ',' << v.at(i);
    out << '\n';
  }
}

ScoredRow scored(std::string name, SplitScores s, const Dataset& ds, const ExperimentConfig& c) {
  ScoredRow r{std::move(name), std::move(s), {}, json::object()};
  r.eval = evaluate(ds, r.scores, c);
  return r;
}

std::vector<int> train_types(const Dataset& ds) { return present_types(ds.split(Split::train)); }

}  // namespace

std::map<int, std::string> category_names(const Dataset& ds) {
  std::map<int, std::string> out;
  for (const auto& t : ds.types) out[t.type_id] = to_string(t.category);
  return out;
}

std::map<int, int> category_ids(const Dataset& ds) {
  std::map<int, int> out;
  for (const auto& t : ds.types) out[t.type_id] = int(t.category);
  return out;
}

std::map<int, std::string> type_names(const Dataset& ds) {
  std::map<int, std::string> out;
  for (const auto& t : ds.types) out[t.type_id] = t.name;
  return out;
}

Evaluation evaluate(const Dataset& ds, const SplitScores& s, const ExperimentConfig& c) {
  const auto& val = ds.split(Split::val);
  const auto& test = ds.split(Split::test);
  if (s.val.size() != val.size() || s.test.size() != test.size())
    throw DataError("evaluate: score count does not match the splits");
  const auto vl = labels_of(val), tl = labels_of(test), tt = types_of(test);
  Evaluation e;
  e.primary = breakdown(s.test, tl, tt, category_names(ds), c.fdr_target);
  for (double f : c.extra_fdr) e.extra.push_back(tdr_at_fdr(s.test, tl, f));
  e.accuracy = accuracy(s.val, vl, s.test, tl);
  return e;
}

json to_json(const Evaluation& e, const Dataset& ds, const ExperimentConfig& c) {
  json j = to_json(e.primary, type_names(ds));
  for (const auto& t : ds.types)
    if (j["per_type"].contains(t.name)) j["per_type"][t.name]["category"] = to_string(t.category);
  j["fdr_target"] = c.fdr_target;
  j["extra"] = json::array();
  for (std::size_t i = 0; i < e.extra.size(); ++i)
    j["extra"].push_back({{"fdr_target", c.extra_fdr.at(i)},
                          {"threshold", e.extra[i].threshold},
                          {"tdr", e.extra[i].tdr},
                          {"fdr", e.extra[i].fdr}});
  j["accuracy"] = {{"threshold", e.accuracy.threshold},
                   {"balanced_accuracy", e.accuracy.balanced_accuracy},
                   {"accuracy", e.accuracy.accuracy},
                   {"policy", e.accuracy.policy}};
  return j;
}

SplitScores joint_scores(const JointModel<float>& m, const Dataset& ds, int chunk) {
  return {score_joint(m, ds.split(Split::val), chunk), score_joint(m, ds.split(Split::test), chunk)};
}

SplitScores unifad_scores(const UniFADModel<float>& m, const Dataset& ds, int chunk) {
  return {col(score_unifad(m, ds.split(Split::val), false, chunk).final),
          col(score_unifad(m, ds.split(Split::test), false, chunk).final)};
}

Stage1 train_stage1(const Dataset& ds, const ExperimentConfig& c) {
  auto r = train_joint(ds.split(Split::train), c.arch, c.hyper);
  Stage1 s{std::move(r.model), std::move(r.log), {}, {}};
  describe_stage1(s, ds, c);
  return s;
}

void describe_stage1(Stage1& s, const Dataset& ds, const ExperimentConfig& c) {
  const auto attacks = attacks_of(ds.split(Split::val));
  const auto emb = embed(s.joint, attacks, c.hyper.score_chunk);
  s.table = mean_features(emb, types_of(attacks), train_types(ds));
  s.similarity = similarity_matrix(s.table);
}

Partition make_partition(const PartitionSpec& spec, const Dataset& ds, const MeanFeatureTable* table,
                         std::uint64_t master_seed) {
  const auto types = train_types(ds);
  switch (spec.source) {
    case PartitionSource::kmeans:
      if (!table) throw ConfigError("partition: kmeans needs the stage-1 feature table");
      return kmeans_partition(*table, spec.num_clusters, spec.restarts, mix_seed(master_seed, 0xc1));
    case PartitionSource::semantic: {
      std::map<int, std::vector<int>> by_cat;
      for (int t : types) by_cat[int(ds.types.at(std::size_t(t)).category)].push_back(t);
      std::vector<std::vector<int>> clusters;
      for (auto& [_, m] : by_cat) clusters.push_back(m);
      return manual_partition(clusters, table);
    }
    case PartitionSource::random:
      return random_partition(types, spec.num_clusters, spec.seed ? spec.seed : mix_seed(master_seed, 0x7a3));
    case PartitionSource::manual:
      return manual_partition(spec.clusters, table);
  }
  throw ConfigError("partition: unknown source");
}

std::vector<BranchRate> branch_generalization(const Eigen::MatrixXd& branch_scores, const Dataset& ds,
                                              const Partition& p, double fdr) {
  const auto& test = ds.split(Split::test);
  if (branch_scores.rows() != Index(test.size()) || branch_scores.cols() != p.num_clusters)
    throw DataError("branch_generalization: score matrix does not match the test split");
  const auto labels = labels_of(test);
  std::vector<BranchRate> out;
  for (int t = 0; t < p.num_clusters; ++t) {
    const std::vector<double> s = col(branch_scores.col(t));
    BranchRate r;
    r.branch = t;
    r.threshold = tdr_at_fdr(s, labels, fdr).threshold;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (!test[i].attack_type) continue;
      const int type = *test[i].attack_type;
      GroupRate& g = p.contains(type) && p.cluster_of(type) == t ? r.within : r.outside;
      ++g.count;
      if (s[i] >= r.threshold) ++g.detected;
    }
    for (GroupRate* g : {&r.within, &r.outside}) g->tdr = g->count ? double(g->detected) / double(g->count) : 0.0;
    out.push_back(r);
  }
  return out;
}

Identification identify(const UniFADModel<float>& m, const Dataset& ds, const BranchScores& test, bool all_attacks,
                        double threshold, int chunk) {
  const auto train_attacks = attacks_of(ds.split(Split::train));
  const auto feats = score_unifad(m, train_attacks, true, chunk).features;
  Identification id;
  id.prototypes = build_prototypes(feats, types_of(train_attacks), category_ids(ds), train_types(ds));
  const auto& samples = ds.split(Split::test);
  if (test.features.rows() != Index(samples.size())) throw DataError("identify: test features are missing");
  std::vector<int> truth, pred;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].attack_type || (!all_attacks && test.final(Index(i)) < threshold)) continue;
    truth.push_back(*samples[i].attack_type);
    pred.push_back(predict_type(id.prototypes, test.features.row(Index(i)).transpose()).type_id);
  }
  id.flagged = truth.size();
  id.confusion = confusion(truth, pred, category_ids(ds));
  return id;
}

std::string run_synth(const ExperimentConfig& c, bool tensor_cache) {
  c.validate();
  const Dataset ds = make_dataset(c.dataset);
  fs::create_directories(c.out_dir);
  write_manifest(ds, (fs::path(c.out_dir) / "manifest.jsonl").string());
  json meta = provenance(c);
  meta["manifest_hash"] = ds.manifest_hash();
  meta["dataset"] = to_json(c.dataset);
  for (auto s : {Split::train, Split::val, Split::test}) meta["counts"][to_string(s)] = ds.split(s).size();
  write_json((fs::path(c.out_dir) / "dataset.json").string(), meta);
  if (tensor_cache)
    for (auto s : {Split::train, Split::val, Split::test})
      write_tensor_cache(ds.split(s), (fs::path(c.out_dir) / (std::string(to_string(s)) + ".ufad")).string());
  return ds.manifest_hash();
}

namespace {

// Stage 1 plus partition; trains or resumes the joint detector.
void stage_one(PipelineResult& r, const ExperimentConfig& c, RunOptions opts) {
  const fs::path dir = fs::path(c.out_dir) / "stage1";
  r.dataset = stage("data", r.timing, [&] { return make_dataset(c.dataset); });
  stage("stage1", r.timing, [&] {
    const std::string ck = (dir / "joint.ckpt").string();
    std::optional<Checkpoint> prev;
    if (opts.resume) prev = resumable(ck, c);
    if (prev) {
      r.stage1.joint = build_joint<float>(c.arch, c.seed);
      adopt(r.stage1.joint.params, prev->params, "joint checkpoint");
      r.stage1.joint.steps = prev->metadata.value("steps", 0L);
      describe_stage1(r.stage1, r.dataset, c);
    } else {
      r.stage1 = train_stage1(r.dataset, c);
      r.stage1_trained = true;
      if (opts.write) {
        fs::create_directories(dir);
        json meta = provenance(c);
        meta["kind"] = "joint";
        meta["steps"] = r.stage1.joint.steps;
        save_checkpoint(ck, r.stage1.joint.params, meta);
        r.stage1.log.write_csv((dir / "loss.csv").string(), comment(c));
      }
    }
    r.partition = make_partition(c.partition, r.dataset, &r.stage1.table, c.seed);
    if (opts.write) {
      fs::create_directories(dir);
      const auto names = type_names(r.dataset);
      write_matrix_csv((dir / "mean_features.csv").string(), r.stage1.table.rows, comment(c),
                       label_list(r.stage1.table.type_ids, names), {});
      write_matrix_csv((dir / "similarity.csv").string(), r.stage1.similarity.values, comment(c),
                       label_list(r.stage1.similarity.type_ids, names),
                       label_list(r.stage1.similarity.type_ids, names));
      write_heatmap_ppm((dir / "similarity.ppm").string(), r.stage1.similarity.values, -1.0, 1.0, comment(c));
      json pj = partition_json(r.partition, [&] {
        std::vector<std::string> v;
        for (const auto& t : r.dataset.types) v.push_back(t.name);
        return v;
      }());
      pj["provenance"] = provenance(c);
      pj["source"] = to_string(c.partition.source);
      write_json((dir / "partition.json").string(), pj);
    }
  });
}

}  // namespace

PipelineResult run_cluster(const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  PipelineResult r;
  stage_one(r, c, opts);
  return r;
}

PipelineResult run_pipeline(const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  PipelineResult r;
  const auto t_all = Clock::now();
  stage_one(r, c, opts);
  const fs::path dir2 = fs::path(c.out_dir) / "stage2";
  stage("stage2", r.timing, [&] {
    const std::string ck = (dir2 / "unifad.ckpt").string();
    std::optional<Checkpoint> prev;
    if (opts.resume)
      prev = resumable(ck, c, {{"partition", partition_clusters(r.partition)}, {"shared_depth", c.shared_depth}});
    if (prev) {
      r.stage2.model = unifad_from_checkpoint(*prev, c);
      r.report["final_losses"] = prev->metadata.value("final_losses", json::object());
    } else {
      r.stage2 = train_unifad(r.dataset.split(Split::train), r.partition, c.arch, c.hyper, c.shared_depth);
      r.stage2.model.steps = c.hyper.iters;
      r.stage2_trained = true;
      json last = json::object();
      const auto& log = r.stage2.log;
      for (std::size_t k = 0; k < log.columns.size() && !log.rows.empty(); ++k)
        last[log.columns[k]] = log.smoothed(k, log.rows.size(), 100);
      r.report["final_losses"] = last;
      if (opts.write) {
        fs::create_directories(dir2);
        json meta = unifad_metadata(r.stage2.model, c, "unifad");
        meta["final_losses"] = last;
        save_checkpoint(ck, r.stage2.model.params, meta);
        r.stage2.log.write_csv((dir2 / "loss.csv").string(), comment(c));
      }
    }
  });

  stage("evaluate", r.timing, [&] {
    const int chunk = c.hyper.score_chunk;
    r.joint = joint_scores(r.stage1.joint, r.dataset, chunk);
    r.joint_eval = evaluate(r.dataset, r.joint, c);
    const auto t0 = Clock::now();
    r.test_branch = score_unifad(r.stage2.model, r.dataset.split(Split::test), true, chunk);
    r.timing["inference_ms_per_sample"] =
        1000.0 * seconds_since(t0) / double(std::max<std::size_t>(1, r.dataset.split(Split::test).size()));
    r.proposed = {col(score_unifad(r.stage2.model, r.dataset.split(Split::val), false, chunk).final),
                  col(r.test_branch.final)};
    r.eval = evaluate(r.dataset, r.proposed, c);
    r.generalization = branch_generalization(r.test_branch.branch, r.dataset, r.partition, c.fdr_target);
  });

  stage("classify", r.timing, [&] {
    r.identification =
        identify(r.stage2.model, r.dataset, r.test_branch, c.classify_all_attacks, r.eval.primary.overall.threshold,
                 c.hyper.score_chunk);
  });

  stage("report", r.timing, [&] {
    const auto names = type_names(r.dataset);
    json& j = r.report;
    j["provenance"] = provenance(c);
    j["config"] = config_to_json(c, false);
    j["dataset"] = {{"manifest_hash", r.dataset.manifest_hash()},
                    {"num_types", r.dataset.types.size()},
                    {"counts",
                     {{"train", r.dataset.split(Split::train).size()},
                      {"val", r.dataset.split(Split::val).size()},
                      {"test", r.dataset.split(Split::test).size()}}}};
    std::vector<std::string> name_list;
    for (const auto& t : r.dataset.types) name_list.push_back(t.name);
    j["partition"] = partition_json(r.partition, name_list);
    j["similarity"] = {{"type_ids", r.stage1.similarity.type_ids}, {"values", matrix_rows(r.stage1.similarity.values)}};
    j["joint"] = to_json(r.joint_eval, r.dataset, c);
    j["proposed"] = to_json(r.eval, r.dataset, c);
    j["branch_generalization"] = json::array();
    for (const auto& b : r.generalization)
      j["branch_generalization"].push_back({{"branch", b.branch},
                                            {"threshold", b.threshold},
                                            {"within", {{"count", b.within.count}, {"tdr", b.within.tdr}}},
                                            {"outside", {{"count", b.outside.count}, {"tdr", b.outside.tdr}}}});
    const auto& cf = r.identification.confusion;
    j["classification"] = {{"flagged", r.identification.flagged},
                           {"type_accuracy", cf.type_accuracy},
                           {"category_accuracy", cf.category_accuracy},
                           {"type_ids", cf.type_ids},
                           {"type_matrix", matrix_rows(cf.type_matrix)},
                           {"category_matrix", matrix_rows(cf.category_matrix)}};
    r.timing["provenance"] = provenance(c);
    r.timing["resumed"] = {{"stage1", !r.stage1_trained}, {"stage2", !r.stage2_trained}};
    r.timing["total_seconds"] = seconds_since(t_all);
    if (opts.write) {
      const fs::path out(c.out_dir);
      write_json((out / "report.json").string(), j);
      write_json((out / "timing.json").string(), r.timing);
      const auto& test = r.dataset.split(Split::test);
      std::vector<std::pair<std::string, std::vector<double>>> cols{{"joint", r.joint.test},
                                                                    {"final", r.proposed.test}};
      for (int t = 0; t < r.partition.num_clusters; ++t)
        cols.push_back({"branch" + std::to_string(t), col(r.test_branch.branch.col(t))});
      write_scores_csv((out / "eval" / "scores_test.csv").string(), c, test, cols);
      roc_curve(r.proposed.test, labels_of(test)).write_csv((out / "eval" / "roc_proposed.csv").string(), comment(c));
      roc_curve(r.joint.test, labels_of(test)).write_csv((out / "eval" / "roc_joint.csv").string(), comment(c));
      render_reports(c.out_dir);
    }
  });
  return r;
}

void run_train(const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  PipelineResult base;
  RunOptions first = opts;
  first.resume = true;  // stage 1 is shared by every model kind
  stage_one(base, c, first);
  if (c.model == ModelKind::joint) return;
  json timing;
  stage("train_" + std::string(to_string(c.model)), timing, [&] {
    const auto& train = base.dataset.split(Split::train);
    const fs::path dir = fs::path(c.out_dir) / (c.model == ModelKind::mixnet ? "mixnet" : "stage2");
    fs::create_directories(dir);
    const auto r = c.model == ModelKind::mixnet
                       ? train_mixnet(train, base.partition, c.arch, c.hyper)
                       : train_unifad(train, base.partition, c.arch, c.hyper, c.shared_depth);
    auto m = r.model;
    m.steps = c.hyper.iters;
    const std::string kind = to_string(c.model);
    save_checkpoint((dir / (kind + ".ckpt")).string(), m.params, unifad_metadata(m, c, kind));
    r.log.write_csv((dir / "loss.csv").string(), comment(c));
  });
}

json run_eval(const ExperimentConfig& c) {
  c.validate();
  json timing;
  return stage("eval", timing, [&] {
    const Dataset ds = make_dataset(c.dataset);
    const fs::path out(c.out_dir);
    SplitScores s;
    if (c.model == ModelKind::joint) {
      const auto ck = load_checkpoint((out / "stage1" / "joint.ckpt").string());
      auto m = build_joint<float>(c.arch, c.seed);
      adopt(m.params, ck.params, "joint checkpoint");
      s = joint_scores(m, ds, c.hyper.score_chunk);
    } else {
      const std::string kind = to_string(c.model);
      const auto dir = c.model == ModelKind::mixnet ? out / "mixnet" : out / "stage2";
      const auto ck = load_checkpoint((dir / (kind + ".ckpt")).string());
      s = unifad_scores(unifad_from_checkpoint(ck, c), ds, c.hyper.score_chunk);
    }
    json j = to_json(evaluate(ds, s, c), ds, c);
    j["provenance"] = provenance(c);
    j["model"] = to_string(c.model);
    write_json((out / ("eval_" + std::string(to_string(c.model)) + ".json")).string(), j);
    return j;
  });
}

FusionResult run_fusion(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  const Dataset& ds = base.dataset;
  const auto& train = ds.split(Split::train);
  const int T = base.partition.num_clusters;
  if (int(c.fusion.cascade_budgets.size()) != T)
    throw ConfigError("fusion.cascade_budgets needs one budget per cluster (" + std::to_string(T) + ")");
  FusionResult r;
  json timing;
  stage("fusion_specialists", timing, [&] {
    for (int t = 0; t < T; ++t) {
      TrainHyper h = c.hyper;
      h.seed = mix_seed(c.seed, 0x5be0 + std::uint64_t(t));
      const auto m = train_joint(train, c.arch, h, base.partition.members(t));
      r.specialists.push_back(scored("specialist" + std::to_string(t), joint_scores(m.model, ds, c.hyper.score_chunk), ds, c));
      r.specialists.back().extra["types"] = base.partition.members(t);
    }
  });
  stage("fusion_rules", timing, [&] {
    auto fused = [&](auto&& f) {
      SplitScores s;
      for (auto [split, dst] : {std::pair{0, &s.val}, std::pair{1, &s.test}}) {
        const std::size_t n = split == 0 ? ds.split(Split::val).size() : ds.split(Split::test).size();
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> v;
          for (const auto& sp : r.specialists) v.push_back(split == 0 ? sp.scores.val[i] : sp.scores.test[i]);
          dst->push_back(f(v));
        }
      }
      return s;
    };
    for (FusionRule rule : kAllRules)
      r.rules.push_back(scored(to_string(rule), fused([rule](const std::vector<double>& v) { return fuse_rule(rule, v); }), ds, c));

    // boosted trees fitted on the validation score vectors
    const auto& val = ds.split(Split::val);
    Eigen::MatrixXd x(Index(val.size()), T);
    for (std::size_t i = 0; i < val.size(); ++i)
      for (int t = 0; t < T; ++t) x(Index(i), t) = r.specialists[std::size_t(t)].scores.val[i];
    const StumpEnsemble gbdt = fit_gbdt(x, labels_of(val), c.fusion.gbdt);
    r.gbdt = scored("gbdt", fused([&](const std::vector<double>& v) { return gbdt.predict(v); }), ds, c);

    // cascade: strongest validation detector first
    std::vector<int> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return r.specialists[std::size_t(a)].eval.primary.overall.tdr > r.specialists[std::size_t(b)].eval.primary.overall.tdr;
    });
    std::vector<std::vector<double>> bf(static_cast<std::size_t>(T));
    for (std::size_t i = 0; i < val.size(); ++i)
      if (val[i].label == 0)
        for (int k = 0; k < T; ++k) bf[std::size_t(k)].push_back(r.specialists[std::size_t(order[std::size_t(k)])].scores.val[i]);
    const auto thresholds = calibrate_cascade(bf, c.fusion.cascade_budgets);
    const auto& test = ds.split(Split::test);
    std::size_t nb = 0, na = 0, fb = 0, fa = 0;
    std::vector<std::size_t> stage_hits(static_cast<std::size_t>(T), 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::vector<std::function<double()>> stages;
      for (int k = 0; k < T; ++k) {
        const auto& sc = r.specialists[std::size_t(order[std::size_t(k)])].scores.test;
        stages.emplace_back([&sc, i] { return sc[i]; });
      }
      const auto d = cascade(stages, thresholds);
      (test[i].label ? na : nb)++;
      if (d.attack) {
        (test[i].label ? fa : fb)++;
        ++stage_hits[std::size_t(d.stage)];
      }
    }
    r.cascade = {{"order", order},
                 {"thresholds", thresholds},
                 {"budgets", c.fusion.cascade_budgets},
                 {"tdr", na ? double(fa) / double(na) : 0.0},
                 {"fdr", nb ? double(fb) / double(nb) : 0.0},
                 {"stage_hits", stage_hits}};
  });
  stage("fusion_mixnet", timing, [&] {
    const auto m = train_mixnet(train, base.partition, c.arch, c.hyper);
    r.mixnet = scored("MixNet", unifad_scores(m.model, ds, c.hyper.score_chunk), ds, c);
  });
  r.proposed = scored("Proposed", base.proposed, ds, c);

  json& j = r.report;
  j["provenance"] = provenance(c);
  j["partition"] = partition_clusters(base.partition);
  for (const auto* group : {&r.specialists, &r.rules})
    for (const auto& row : *group) j[group == &r.rules ? "rules" : "specialists"].push_back(row_json(row, ds, c));
  j["gbdt"] = row_json(r.gbdt, ds, c);
  j["cascade"] = r.cascade;
  j["mixnet"] = row_json(r.mixnet, ds, c);
  j["proposed"] = row_json(r.proposed, ds, c);
  double best = -1;
  std::string best_name;
  for (const auto& row : r.rules)
    if (row.eval.primary.overall.tdr > best) {
      best = row.eval.primary.overall.tdr;
      best_name = row.name;
    }
  j["best_rule"] = {{"name", best_name}, {"tdr", best}};
  if (opts.write) {
    write_json((fs::path(c.out_dir) / "fusion.json").string(), j);
    timing["provenance"] = provenance(c);
    write_json((fs::path(c.out_dir) / "fusion_timing.json").string(), timing);
    render_reports(c.out_dir);
  }
  return r;
}

AblationResult run_ablation(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  if (c.sweep.rows.empty() && c.sweep.shared_depths.empty() && c.sweep.branch_counts.empty())
    throw ConfigError("sweep: nothing to run");
  const Dataset& ds = base.dataset;
  const auto& train = ds.split(Split::train);
  AblationResult r;
  json timing;
  // trained models keyed by (partition, shared depth), reused across rows and sweeps
  std::map<std::string, SplitScores> cache;
  const std::string proposed_key = json(partition_clusters(base.partition)).dump() + "/" + std::to_string(c.shared_depth);
  cache[proposed_key] = base.proposed;
  auto train_row = [&](const Partition& p, int depth) {
    const std::string key = json(partition_clusters(p)).dump() + "/" + std::to_string(depth);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const auto m = train_unifad(train, p, c.arch, c.hyper, depth);
    return cache[key] = unifad_scores(m.model, ds, c.hyper.score_chunk);
  };
  PartitionSpec semantic_spec;
  semantic_spec.source = PartitionSource::semantic;
  const Partition semantic = make_partition(semantic_spec, ds, &base.stage1.table, c.seed);

  stage("ablation_rows", timing, [&] {
    for (const auto& name : c.sweep.rows) {
      if (name == "JointCNN") {
        r.rows.push_back(scored(name, base.joint, ds, c));
      } else if (name == "B_Semantic") {
        r.rows.push_back(scored(name, train_row(semantic, 0), ds, c));
      } else if (name == "B_Random") {
        for (int k = 0; k < c.sweep.random_trials; ++k) {
          PartitionSpec spec;
          spec.source = PartitionSource::random;
          spec.num_clusters = base.partition.num_clusters;
          spec.seed = mix_seed(c.seed, 0x7a30 + std::uint64_t(k));
          const Partition p = make_partition(spec, ds, &base.stage1.table, c.seed);
          r.rows.push_back(scored(name, train_row(p, 0), ds, c));
          r.rows.back().extra["trial"] = k;
          r.rows.back().extra["partition"] = partition_clusters(p);
        }
      } else if (name == "B_kMeans") {
        r.rows.push_back(scored(name, train_row(base.partition, 0), ds, c));
      } else if (name == "SharedSemantic") {
        r.rows.push_back(scored(name, train_row(semantic, c.shared_depth), ds, c));
      } else if (name == "Proposed") {
        r.rows.push_back(scored(name, base.proposed, ds, c));
      }
    }
  });
  stage("ablation_sweeps", timing, [&] {
    for (int d : c.sweep.shared_depths) {
      r.depth_sweep.push_back(scored("shared_depth=" + std::to_string(d), train_row(base.partition, d), ds, c));
      r.depth_sweep.back().extra["shared_depth"] = d;
      r.depth_sweep.back().extra["shared_ratio"] = double(d) / double(c.arch.conv_filters.size());
    }
    for (int T : c.sweep.branch_counts) {
      const Partition p = kmeans_partition(base.stage1.table, T, c.partition.restarts, mix_seed(c.seed, 0xc1));
      r.branch_sweep.push_back(scored("branches=" + std::to_string(T), train_row(p, c.shared_depth), ds, c));
      r.branch_sweep.back().extra["branches"] = T;
      r.branch_sweep.back().extra["partition"] = partition_clusters(p);
    }
  });

  for (const auto& name : c.sweep.rows) {
    std::vector<double> tdr, acc;
    for (const auto& row : r.rows)
      if (row.name == name) {
        tdr.push_back(row.eval.primary.overall.tdr);
        acc.push_back(row.eval.accuracy.accuracy);
      }
    r.table.push_back({{"name", name}, {"tdr", mean_std(tdr)}, {"accuracy", mean_std(acc)}});
  }
  json& j = r.report;
  j["provenance"] = provenance(c);
  j["table"] = r.table;
  for (const auto& row : r.rows) j["rows"].push_back(row_json(row, ds, c));
  j["shared_depth_sweep"] = json::array();
  for (const auto& row : r.depth_sweep) j["shared_depth_sweep"].push_back(row_json(row, ds, c));
  j["branch_sweep"] = json::array();
  for (const auto& row : r.branch_sweep) j["branch_sweep"].push_back(row_json(row, ds, c));
  if (opts.write) {
    write_json((fs::path(c.out_dir) / "ablation.json").string(), j);
    timing["provenance"] = provenance(c);
    write_json((fs::path(c.out_dir) / "ablation_timing.json").string(), timing);
    render_reports(c.out_dir);
  }
  return r;
}

std::vector<std::vector<int>> unseen_folds(const FoldSpec& spec, const Partition& p, int num_types,
                                           std::uint64_t master_seed) {
  if (!spec.held_out.empty()) {
    for (const auto& f : spec.held_out)
      for (int t : f)
        if (t < 0 || t >= num_types) throw ConfigError("folds.held_out references unknown type " + std::to_string(t));
    return spec.held_out;
  }
  std::vector<std::vector<int>> folds;
  for (int f = 0; f < spec.count; ++f) {
    std::mt19937_64 rng(mix_seed(master_seed, 0xf01d0 + std::uint64_t(f)));
    std::vector<int> held;
    for (auto members : p.clusters()) {
      const int n = int(members.size());
      const int k = std::min(n - 1, int(std::lround(spec.holdout_fraction * n)));
      for (int i = n - 1; i > 0; --i) std::swap(members[std::size_t(i)], members[rng() % std::uint64_t(i + 1)]);
      held.insert(held.end(), members.begin(), members.begin() + std::max(k, 0));
    }
    if (held.empty()) throw ConfigError("folds: every cluster has a single type, nothing can be held out");
    std::sort(held.begin(), held.end());
    folds.push_back(held);
  }
  return folds;
}

UnseenResult run_unseen(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts) {
  c.validate();
  UnseenResult r;
  json timing;
  const auto folds = unseen_folds(c.folds, base.partition, c.dataset.num_types, c.seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    stage("unseen_fold" + std::to_string(f), timing, [&] {
      FoldResult fr;
      fr.held_out = folds[f];
      DatasetConfig dc = c.dataset;
      dc.holdout_types = folds[f];
      const Dataset ds = make_dataset(dc);
      std::set<int> trained;
      for (auto s : {Split::train, Split::val})
        for (int t : present_types(ds.split(s))) trained.insert(t);
      for (int t : trained) {
        if (std::find(folds[f].begin(), folds[f].end(), t) != folds[f].end())
          throw DataError("held-out type " + std::to_string(t) + " leaked into a training split");
        fr.train_manifest_types.push_back(ds.types.at(std::size_t(t)).name);
      }
      const auto m = train_unifad(ds.split(Split::train), base.partition, c.arch, c.hyper, c.shared_depth);
      const SplitScores s = unifad_scores(m.model, ds, c.hyper.score_chunk);
      const Evaluation e = evaluate(ds, s, c);
      for (const auto& [t, g] : e.primary.per_type) {
        const bool unseen = std::find(folds[f].begin(), folds[f].end(), t) != folds[f].end();
        (unseen ? fr.unseen_count : fr.seen_count) += g.count;
        (unseen ? fr.unseen_tdr : fr.seen_tdr) += double(g.detected);
      }
      fr.seen_tdr = fr.seen_count ? fr.seen_tdr / double(fr.seen_count) : 0.0;
      fr.unseen_tdr = fr.unseen_count ? fr.unseen_tdr / double(fr.unseen_count) : 0.0;
      fr.overall_tdr = e.primary.overall.tdr;
      fr.accuracy = e.accuracy.accuracy;
      r.folds.push_back(fr);
    });
  }
  json& j = r.report;
  j["provenance"] = provenance(c);
  std::vector<double> seen, unseen, overall, acc;
  for (const auto& fr : r.folds) {
    j["folds"].push_back({{"held_out", fr.held_out},
                          {"seen_tdr", fr.seen_tdr},
                          {"unseen_tdr", fr.unseen_tdr},
                          {"overall_tdr", fr.overall_tdr},
                          {"accuracy", fr.accuracy},
                          {"seen_count", fr.seen_count},
                          {"unseen_count", fr.unseen_count},
                          {"trained_types", fr.train_manifest_types}});
    seen.push_back(fr.seen_tdr);
    unseen.push_back(fr.unseen_tdr);
    overall.push_back(fr.overall_tdr);
    acc.push_back(fr.accuracy);
  }
  j["summary"] = {{"seen_tdr", mean_std(seen)},
                  {"unseen_tdr", mean_std(unseen)},
                  {"overall_tdr", mean_std(overall)},
                  {"accuracy", mean_std(acc)}};
  if (opts.write) {
    write_json((fs::path(c.out_dir) / "unseen.json").string(), j);
    timing["provenance"] = provenance(c);
    write_json((fs::path(c.out_dir) / "unseen_timing.json").string(), timing);
    render_reports(c.out_dir);
  }
  return r;
}

}  // namespace ufad
