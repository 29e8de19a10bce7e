#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "reltr/checkpoint.hpp"
#include "reltr/config.hpp"
#include "reltr/grad_check.hpp"
#include "reltr/metrics.hpp"
#include "reltr/train.hpp"

namespace fs = std::filesystem;
using namespace reltr;

namespace {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "h",           "heads",        "global_layers", "rel_layers",
      "mem_slots",   "feature_dim",  "embed_dim",     "loss",
      "tau",         "gamma",        "optimizer",     "lr",
      "batch_size",  "epochs",       "seed",          "ablate_global",
      "ablate_memory", "obj_classes", "rel_classes",  "zipf_s",
      "train_scenes", "val_scenes",  "test_scenes",   "triplets_per_scene",
      "noise_sigma", "mix_coeff",    "scene_sigma",   "tail_noise",
      "bucket_many", "bucket_medium",
  };
  return keys;
}

// Collects --config plus per-key override flags; resolve() merges them onto
// the given defaults (defaults < config file < flags).
struct ConfigCli {
  std::string config_file;
  std::map<std::string, std::string> overrides;
  std::vector<std::string> ablations;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key = value config file");
    for (const std::string& key : config_keys()) {
      if (key == "ablate_global" || key == "ablate_memory") continue;
      std::string flag = key;
      for (char& c : flag)
        if (c == '_') c = '-';
      std::string names = "--" + flag;
      if (key == "mem_slots") names += ",--m";  // short form used throughout the docs
      cmd->add_option_function<std::string>(
          names, [this, key](const std::string& v) { overrides[key] = v; },
          "override config key " + key);
    }
    cmd->add_option("--ablate", ablations, "disable a module: global or memory")
        ->check(CLI::IsMember({"global", "memory"}));
  }

  RunConfig resolve(RunConfig cfg) const {
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& [key, value] : overrides)
      apply_config_entry(cfg, key, value, "flag --" + key);
    for (const std::string& a : ablations) {
      if (a == "global") cfg.ablate_global = true;
      if (a == "memory") cfg.ablate_memory = true;
    }
    validate(cfg);
    return cfg;
  }
};

void write_config_echo(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.echo");
  if (!out) throw ParseError("cannot write " + (dir / "config.echo").string());
  out << render_config(cfg);
}

// The dataset on disk is the authority for data-derived sizes.
void adopt_manifest(RunConfig& cfg, const DatasetManifest& m) {
  cfg.feature_dim = m.feature_dim;
  cfg.obj_classes = m.obj_classes;
  cfg.rel_classes = m.rel_classes;
  validate(cfg);
}

void check_manifest_compatible(const RunConfig& cfg, const DatasetManifest& m) {
  if (cfg.feature_dim != m.feature_dim || cfg.obj_classes != m.obj_classes ||
      cfg.rel_classes != m.rel_classes)
    throw ConfigError("checkpoint was built for feature_dim/obj_classes/rel_classes = " +
                      std::to_string(cfg.feature_dim) + "/" + std::to_string(cfg.obj_classes) +
                      "/" + std::to_string(cfg.rel_classes) + " but the dataset has " +
                      std::to_string(m.feature_dim) + "/" + std::to_string(m.obj_classes) + "/" +
                      std::to_string(m.rel_classes));
}

const std::vector<SceneSample>& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw ConfigError("unknown split '" + split + "'");
}

std::ofstream open_trace(const fs::path& dir) {
  std::ofstream trace(dir / "trace");
  if (!trace) throw ParseError("cannot write " + (dir / "trace").string());
  trace << "# epoch step loss\n";
  return trace;
}

int run_gen_data(const ConfigCli& cli, const std::string& out_dir) {
  RunConfig cfg = cli.resolve(RunConfig{});
  Dataset ds = generate_dataset(cfg.gen_config());
  write_dataset(out_dir, ds);
  write_config_echo(out_dir, cfg);
  std::cout << "wrote " << ds.manifest.train_triplets << " train / " << ds.manifest.val_triplets
            << " val / " << ds.manifest.test_triplets << " test triplets to " << out_dir << "\n";
  return 0;
}

int run_train(const ConfigCli& cli, const std::string& data_dir, const std::string& out_dir) {
  RunConfig cfg = cli.resolve(RunConfig{});
  Dataset ds = read_dataset(data_dir);
  adopt_manifest(cfg, ds.manifest);
  write_config_echo(out_dir, cfg);

  Modeld model = Modeld::init(cfg.model_sizes(), cfg.ablation(), cfg.seed);
  std::ofstream trace = open_trace(out_dir);
  double last_loss = 0;
  auto sink = [&](const TracePoint& p) {
    trace << p.epoch << " " << p.step << " " << reltr::detail::exact_double(p.loss) << "\n";
    last_loss = p.loss;
  };
  try {
    train(model, ds.train, ds.manifest, cfg.train_settings(), sink);
  } catch (const TrainingDiverged&) {
    trace.flush();
    throw;
  }
  save_checkpoint(out_dir / fs::path("checkpoint"), model, cfg);
  std::cout << "trained " << cfg.epochs << " epochs, final batch loss "
            << reltr::detail::exact_double(last_loss) << "\n";
  return 0;
}

int run_retrain(const ConfigCli& cli, const std::string& data_dir, const std::string& ckpt,
                const std::string& out_dir) {
  RunConfig base;
  Modeld model = load_checkpoint<double>(ckpt, &base);
  RunConfig cfg = cli.resolve(base);
  Dataset ds = read_dataset(data_dir);
  check_manifest_compatible(cfg, ds.manifest);
  write_config_echo(out_dir, cfg);

  std::ofstream trace = open_trace(out_dir);
  auto sink = [&](const TracePoint& p) {
    trace << p.epoch << " " << p.step << " " << reltr::detail::exact_double(p.loss) << "\n";
  };
  try {
    retrain_classifier(model, ds.train, ds.manifest, cfg.train_settings(), sink);
  } catch (const TrainingDiverged&) {
    trace.flush();
    throw;
  }
  save_checkpoint(out_dir / fs::path("checkpoint"), model, cfg);
  std::cout << "retrained classifier for " << cfg.epochs << " epochs\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& ckpt, const std::string& out_dir,
             const std::string& split) {
  RunConfig cfg;
  Modeld model = load_checkpoint<double>(ckpt, &cfg);
  Dataset ds = read_dataset(data_dir);
  check_manifest_compatible(cfg, ds.manifest);
  write_config_echo(out_dir, cfg);

  std::vector<SceneEval> evals = run_model(model, pick_split(ds, split));
  MetricsReport report = compute_metrics(evals, ds.train, ds.manifest);
  write_metrics_json(out_dir / fs::path("metrics.json"), report);
  const std::string text = render_metrics_text(report, ds.manifest);
  std::ofstream txt(out_dir / fs::path("metrics.txt"));
  txt << text;
  std::cout << text;
  return 0;
}

int run_grad_check(const ConfigCli& cli, int n_triplets, double eps, double tol) {
  // Verification model: small by default so the check is quick; any size can
  // be overridden through the usual flags.
  RunConfig defaults;
  defaults.h = 16;
  defaults.heads = 2;
  defaults.global_layers = 1;
  defaults.rel_layers = 1;
  defaults.mem_slots = 4;
  defaults.feature_dim = 6;
  defaults.embed_dim = 8;
  defaults.obj_classes = 6;
  defaults.rel_classes = 5;
  defaults.loss = "ce";
  defaults.train_scenes = 1;
  defaults.val_scenes = 0;
  defaults.test_scenes = 0;
  defaults.triplets_per_scene = n_triplets;
  RunConfig cfg = cli.resolve(defaults);
  cfg.triplets_per_scene = n_triplets;

  Dataset ds = generate_dataset(cfg.gen_config());
  Modeld model = Modeld::init(cfg.model_sizes(), cfg.ablation(), cfg.seed);
  const LossSpecs specs = make_loss_specs(loss_mode_from_string(cfg.loss), cfg.gamma,
                                          ds.manifest.obj_train_counts,
                                          ds.manifest.rel_train_counts);
  const SceneSample& scene = ds.train.front();
  auto params = model.parameters();
  auto forward = [&](Tape<double>& tape) {
    return forward_scene(tape, model, scene, &specs).loss_sum;
  };
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report = grad_check(params, forward, eps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::printf("%s max_rel_err=%.3e (tol %.0e, %zu entries, %.1fs, worst %s)\n",
              report.passes(tol) ? "PASS" : "FAIL", report.max_rel_error, tol,
              report.entries_checked, secs, report.worst_param.c_str());
  return report.passes(tol) ? 0 : 2;
}

int run_mem_report(const std::string& data_dir, const std::string& ckpt,
                   const std::string& out_dir, const std::string& split) {
  RunConfig cfg;
  Modeld model = load_checkpoint<double>(ckpt, &cfg);
  if (cfg.ablate_memory)
    throw ConfigError("mem-report: checkpoint was trained with memory disabled");
  Dataset ds = read_dataset(data_dir);
  check_manifest_compatible(cfg, ds.manifest);
  write_config_echo(out_dir, cfg);

  std::vector<SceneEval> evals = run_model(model, pick_split(ds, split));
  MemoryAttentionReport rep = memory_attention_report(evals, ds.manifest.rel_train_counts);

  nlohmann::json j;
  j["rarity_spearman"] = rep.rarity_correlation;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < rep.class_mean.size(); ++c) {
    nlohmann::json e;
    e["class"] = c;
    e["train_count"] = ds.manifest.rel_train_counts[c];
    e["mean_score"] = std::isnan(rep.class_mean[c]) ? nlohmann::json(nullptr)
                                                     : nlohmann::json(rep.class_mean[c]);
    per.push_back(std::move(e));
  }
  j["per_class"] = std::move(per);
  std::ofstream out(out_dir / fs::path("mem_report.json"));
  if (!out) throw ParseError("cannot write mem_report.json");
  out << j.dump(2) << "\n";

  std::ofstream txt(out_dir / fs::path("mem_report.txt"));
  txt << "class  train_count  mean_mem_attention\n";
  for (std::size_t c = 0; c < rep.class_mean.size(); ++c) {
    char line[96];
    if (std::isnan(rep.class_mean[c]))
      std::snprintf(line, sizeof(line), "%5zu  %11lld  -\n", c,
                    static_cast<long long>(ds.manifest.rel_train_counts[c]));
    else
      std::snprintf(line, sizeof(line), "%5zu  %11lld  %.6f\n", c,
                    static_cast<long long>(ds.manifest.rel_train_counts[c]), rep.class_mean[c]);
    txt << line;
  }
  txt << "rarity spearman " << rep.rarity_correlation << "\n";
  std::cout << "memory attention rarity spearman: " << rep.rarity_correlation << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-tail visual relationship recognition toolkit"};
  app.require_subcommand(1);
  // --h is the hidden-size override, so help lives on --help alone.
  app.set_help_flag("--help", "print help and exit");

  ConfigCli gen_cli, train_cli, retrain_cli, gc_cli;
  std::string out_dir, data_dir, ckpt, split = "test";
  int gc_triplets = 3;
  double gc_eps = 1e-5, gc_tol = 1e-5;

  auto sub = [&](const char* name, const char* desc) {
    CLI::App* c = app.add_subcommand(name, desc);
    c->set_help_flag("--help", "print help and exit");
    return c;
  };

  CLI::App* gen = sub("gen-data", "generate a synthetic long-tail dataset");
  gen_cli.attach(gen);
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* tr = sub("train", "train a model");
  train_cli.attach(tr);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "run output directory")->required();

  CLI::App* rt = sub("retrain-classifier", "decoupled stage-2: retrain the classifier only");
  retrain_cli.attach(rt);
  rt->add_option("--data", data_dir, "dataset directory")->required();
  rt->add_option("--checkpoint", ckpt, "stage-1 checkpoint")->required();
  rt->add_option("--out", out_dir, "run output directory")->required();

  CLI::App* ev = sub("eval", "evaluate a checkpoint");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--out", out_dir, "run output directory")->required();
  ev->add_option("--split", split, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  CLI::App* gc = sub("grad-check", "finite-difference verification of the full model");
  gc_cli.attach(gc);
  gc->add_option("--n-triplets", gc_triplets, "triplets in the verification scene");
  gc->add_option("--eps", gc_eps, "central difference step");
  gc->add_option("--tol", gc_tol, "max relative error to pass");

  CLI::App* mr = sub("mem-report", "per-class memory attention table");
  mr->add_option("--data", data_dir, "dataset directory")->required();
  mr->add_option("--checkpoint", ckpt, "checkpoint")->required();
  mr->add_option("--out", out_dir, "run output directory")->required();
  mr->add_option("--split", split, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_cli, out_dir);
    if (tr->parsed()) return run_train(train_cli, data_dir, out_dir);
    if (rt->parsed()) return run_retrain(retrain_cli, data_dir, ckpt, out_dir);
    if (ev->parsed()) return run_eval(data_dir, ckpt, out_dir, split);
    if (gc->parsed()) return run_grad_check(gc_cli, gc_triplets, gc_eps, gc_tol);
    if (mr->parsed()) return run_mem_report(data_dir, ckpt, out_dir, split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
