// Command-line driver. Exit codes: 0 ok, 2 bad config or arguments, 3 run failure.

#include "ufad/experiment.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <malloc.h>

#include <cstdlib>
#include <iostream>

using namespace ufad;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
};

void add_common(CLI::App* sub, Common& c, bool with_resume = true) {
  sub->add_option("--config", c.config, "JSON config file (defaults when omitted)");
  sub->add_option("--seed", c.seed, "master seed, overrides the config");
  sub->add_option("--out", c.out, "output directory, overrides the config");
  if (with_resume) sub->add_flag("--resume", c.resume, "reuse checkpoints whose config hash matches");
}

ExperimentConfig resolve(const Common& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.seed) c.set_seed(*a.seed);
  if (!a.out.empty()) c.out_dir = a.out;
  c.validate();
  return c;
}

void summary(const char* what, const nlohmann::json& j) {
  std::cout << what << ": tdr=" << j.value("tdr", 0.0) << " fdr=" << j.value("fdr", 0.0)
            << " threshold=" << j.value("threshold", 0.0) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  // training allocates and frees the same large buffers every step
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  if (const char* t = std::getenv("UFAD_THREADS")) Eigen::setNbThreads(std::max(1, std::atoi(t)));

  CLI::App app{"multi-attack face presentation detector experiments"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Common a;

  bool tensor_cache = false;
  auto* synth = app.add_subcommand("synth", "generate the dataset manifest");
  add_common(synth, a, false);
  synth->add_flag("--tensor-cache", tensor_cache, "also write raw float32 tensors per split");

  auto* train = app.add_subcommand("train", "train the configured model kind");
  auto* cluster = app.add_subcommand("cluster", "stage 1: joint detector, embeddings, partition");
  auto* pipeline = app.add_subcommand("pipeline", "both stages, evaluation and classification");
  auto* fuse = app.add_subcommand("fuse", "fusion baselines next to the pipeline model");
  auto* eval = app.add_subcommand("eval", "score a trained checkpoint");
  auto* ablate = app.add_subcommand("ablate", "ablation rows and sweeps");
  auto* unseen = app.add_subcommand("unseen", "held-out attack type folds");
  for (auto* s : {train, cluster, pipeline, fuse, ablate, unseen}) add_common(s, a);
  add_common(eval, a, false);
  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render CSV, PPM and SVG views of a run");
  report->add_option("dir", report_dir, "run directory")->required();
  auto* show = app.add_subcommand("config", "print the resolved config and its hash");
  add_common(show, a, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      render_reports(report_dir);
      return 0;
    }
    const ExperimentConfig c = resolve(a);
    const RunOptions opts{a.resume, true};
    if (show->parsed()) {
      std::cout << config_to_json(c).dump(2) << "\nconfig_hash " << config_hash(c) << '\n';
    } else if (synth->parsed()) {
      std::cout << "manifest_hash " << run_synth(c, tensor_cache) << '\n';
    } else if (train->parsed()) {
      run_train(c, opts);
    } else if (cluster->parsed()) {
      const auto r = run_cluster(c, opts);
      std::cout << partition_json(r.partition, [&] {
        std::vector<std::string> v;
        for (const auto& t : r.dataset.types) v.push_back(t.name);
        return v;
      }()).dump(2) << '\n';
    } else if (eval->parsed()) {
      summary(to_string(c.model), run_eval(c));
    } else {
      RunOptions base_opts = opts;
      if (!pipeline->parsed()) base_opts.resume = true;
      const auto base = run_pipeline(c, base_opts);
      summary("joint", base.report["joint"]);
      summary("proposed", base.report["proposed"]);
      if (fuse->parsed()) {
        const auto f = run_fusion(base, c, opts);
        std::cout << "best rule " << f.report["best_rule"].dump() << '\n';
      } else if (ablate->parsed()) {
        std::cout << run_ablation(base, c, opts).table.dump(2) << '\n';
      } else if (unseen->parsed()) {
        std::cout << run_unseen(base, c, opts).report["summary"].dump(2) << '\n';
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
