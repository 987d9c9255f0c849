#pragma once

// Config-driven runs: two-stage pipeline, fusion baselines, ablation rows and
// sweeps, unseen-type folds. report.json files hold no wall-clock values
// (those go to timing.json), so identical (config, seed) runs give identical
// bytes.

#include "ufad/classify.hpp"
#include "ufad/cluster.hpp"
#include "ufad/data_synth.hpp"
#include "ufad/fusion.hpp"
#include "ufad/jointcnn.hpp"
#include "ufad/metrics.hpp"
#include "ufad/unifad.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ufad {

inline constexpr const char* kToolVersion = "0.3.0";

/// A pipeline stage failed; the message starts with the stage name.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PartitionSource { kmeans, semantic, random, manual };
enum class ModelKind { joint, unifad, mixnet };

const char* to_string(PartitionSource s);
const char* to_string(ModelKind k);

struct PartitionSpec {
  PartitionSource source = PartitionSource::kmeans;
  int num_clusters = 3;
  int restarts = 50;
  std::uint64_t seed = 0;                  // random source; 0 derives from the master seed
  std::vector<std::vector<int>> clusters;  // manual source
};

inline const std::vector<std::string> kAblationRows{"JointCNN",       "B_Semantic", "B_Random", "B_kMeans",
                                                    "SharedSemantic", "Proposed"};

struct SweepSpec {
  std::vector<std::string> rows = kAblationRows;
  std::vector<int> shared_depths{0, 1, 2, 3, 4};
  std::vector<int> branch_counts{1, 2, 3, 4, 5};
  int random_trials = 3;
};

struct FoldSpec {
  int count = 3;
  double holdout_fraction = 1.0 / 3;        // of each branch's types, at least one type stays
  std::vector<std::vector<int>> held_out;  // explicit folds replace the per-branch draw
};

struct FusionSpec {
  GbdtParams gbdt;
  std::vector<double> cascade_budgets{0.01, 0.005, 0.005};
};

struct ExperimentConfig {
  DatasetConfig dataset;
  Architecture arch;
  TrainHyper hyper;
  ModelKind model = ModelKind::unifad;
  int shared_depth = 2;
  PartitionSpec partition;
  double fdr_target = 0.02;
  std::vector<double> extra_fdr{0.002};
  SweepSpec sweep;
  FoldSpec folds;
  FusionSpec fusion;
  bool classify_all_attacks = false;  // identify every test attack, not only the flagged ones
  std::string out_dir = "runs/default";
  std::uint64_t seed = 1;

  /// Master seed for data generation and training.
  void set_seed(std::uint64_t s);
  void validate() const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError naming the
/// dotted path of the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c, bool with_out_dir = true);
ExperimentConfig load_config(const std::string& path);
/// FNV-1a over the canonical JSON without out_dir.
std::string config_hash(const ExperimentConfig& c);

/// Provenance block embedded in every artifact.
nlohmann::json provenance(const ExperimentConfig& c);

std::map<int, std::string> category_names(const Dataset& ds);
std::map<int, int> category_ids(const Dataset& ds);
std::map<int, std::string> type_names(const Dataset& ds);

struct SplitScores {
  std::vector<double> val, test;
};

struct Evaluation {
  Breakdown primary;                 // at fdr_target
  std::vector<OperatingPoint> extra;  // at each extra_fdr
  AccuracyResult accuracy;
};

Evaluation evaluate(const Dataset& ds, const SplitScores& s, const ExperimentConfig& c);
nlohmann::json to_json(const Evaluation& e, const Dataset& ds, const ExperimentConfig& c);

SplitScores joint_scores(const JointModel<float>& m, const Dataset& ds, int chunk);
SplitScores unifad_scores(const UniFADModel<float>& m, const Dataset& ds, int chunk);

struct Stage1 {
  JointModel<float> joint;
  LossLog log;
  MeanFeatureTable table;  // mean validation embedding per attack type
  SimilarityMatrix similarity;
};

Stage1 train_stage1(const Dataset& ds, const ExperimentConfig& c);
/// Embedding table and similarity for an already trained detector.
void describe_stage1(Stage1& s, const Dataset& ds, const ExperimentConfig& c);

/// Partition of the dataset's training types from `spec`; kmeans needs the
/// stage-1 table.
Partition make_partition(const PartitionSpec& spec, const Dataset& ds, const MeanFeatureTable* table,
                         std::uint64_t master_seed);

struct BranchRate {
  int branch = 0;
  GroupRate within, outside;
  double threshold = 0;
};

/// Each branch score on its own: threshold at `fdr` over test bona fides, then
/// detection rate on attacks inside and outside the branch's cluster.
std::vector<BranchRate> branch_generalization(const Eigen::MatrixXd& branch_scores, const Dataset& ds,
                                              const Partition& p, double fdr);

struct Identification {
  TypePrototypes prototypes;
  ConfusionResult confusion;
  std::size_t flagged = 0;  // test attacks that were classified
};

/// Prototypes from training attacks; classifies the test attacks that the
/// detector flags at `threshold`, or every test attack with `all_attacks`.
Identification identify(const UniFADModel<float>& m, const Dataset& ds, const BranchScores& test, bool all_attacks,
                        double threshold, int chunk);

struct RunOptions {
  bool resume = false;
  bool write = true;  // persist artifacts under out_dir
};

/// Generates the dataset and writes manifest.jsonl plus dataset.json (and the
/// raw tensor cache when asked). Returns the manifest hash.
std::string run_synth(const ExperimentConfig& c, bool tensor_cache = false);

struct PipelineResult {
  Dataset dataset;
  Stage1 stage1;
  Partition partition;
  UniFADTrainResult stage2;
  SplitScores joint, proposed;
  BranchScores test_branch;
  Evaluation joint_eval, eval;
  std::vector<BranchRate> generalization;
  Identification identification;
  nlohmann::json report;
  nlohmann::json timing;
  bool stage1_trained = false, stage2_trained = false;
};

PipelineResult run_pipeline(const ExperimentConfig& c, RunOptions opts = {});

/// Stage 1 only (train or resume the joint detector, cluster).
PipelineResult run_cluster(const ExperimentConfig& c, RunOptions opts = {});

/// Trains the configured model kind (stage 1 first when a partition is
/// needed) and writes its checkpoint.
void run_train(const ExperimentConfig& c, RunOptions opts = {});

/// Scores the configured model kind from its checkpoint; writes eval_<kind>.json.
nlohmann::json run_eval(const ExperimentConfig& c);

struct ScoredRow {
  std::string name;
  SplitScores scores;
  Evaluation eval;
  nlohmann::json extra = nlohmann::json::object();
};

struct FusionResult {
  std::vector<ScoredRow> specialists;
  std::vector<ScoredRow> rules;  // the five fixed rules
  ScoredRow gbdt;
  nlohmann::json cascade;        // calibrated operating point
  ScoredRow mixnet;
  ScoredRow proposed;
  nlohmann::json report;
};

/// Per-cluster specialist detectors fused five ways, by cascade and GBDT,
/// next to the MixNet variant and the proposed model on the same partition.
FusionResult run_fusion(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts = {});

struct AblationResult {
  std::vector<ScoredRow> rows;  // B_Random holds one row per trial
  nlohmann::json table;         // one entry per row name, B_Random as mean and std
  std::vector<ScoredRow> depth_sweep, branch_sweep;
  nlohmann::json report;
};

AblationResult run_ablation(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts = {});

struct FoldResult {
  std::vector<int> held_out;
  double seen_tdr = 0, unseen_tdr = 0, overall_tdr = 0, accuracy = 0;
  std::size_t seen_count = 0, unseen_count = 0;
  std::vector<std::string> train_manifest_types;  // audit: types present in train and val
};

struct UnseenResult {
  std::vector<FoldResult> folds;
  nlohmann::json report;
};

/// Held-out type lists, explicit or drawn per branch of `p`.
std::vector<std::vector<int>> unseen_folds(const FoldSpec& spec, const Partition& p, int num_types,
                                           std::uint64_t master_seed);

UnseenResult run_unseen(const PipelineResult& base, const ExperimentConfig& c, RunOptions opts = {});

/// Rewrites CSV, PPM and SVG views from the report.json files in out_dir.
void render_reports(const std::string& out_dir);

}  // namespace ufad
