// koi: demo generation, key-state extraction, BC pretraining, online
// training and plotting for the pick-and-place tasks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "koi/harness.h"

namespace fs = std::filesystem;
using namespace koi;

namespace {

struct Common {
  std::string config;
  std::string seeds;
  std::vector<std::string> modes;
  std::string out;
  int workers = 0;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        std::uint64_t lo = std::stoull(item.substr(0, dash));
        std::uint64_t hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw InvariantError("bad seed range '" + item + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      throw InvariantError("bad seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw InvariantError("no seeds given");
  return seeds;
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{}
                                          : ExperimentConfig::load(c.config);
  if (!c.seeds.empty()) cfg.seeds = parse_seeds(c.seeds);
  if (!c.modes.empty()) {
    cfg.modes.clear();
    for (const std::string& m : c.modes) cfg.modes.push_back(parse_mode(m));
  }
  if (!c.out.empty()) cfg.out = c.out;
  if (c.workers > 0) cfg.workers = c.workers;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool modes) {
  app->add_option("--config", c.config, "experiment config (JSON)");
  app->add_option("--seeds", c.seeds, "seed list, e.g. 0,1,2 or 0-2");
  if (modes)
    app->add_option("--mode", c.modes, "reward mode(s)")->delimiter(',');
  app->add_option("--out", c.out, "output directory");
  app->add_option("--workers", c.workers, "concurrent runs");
}

void print_summary(const std::vector<RunSummary>& runs) {
  std::printf("%-16s %6s %8s %8s\n", "mode", "seed", "bc", "final");
  for (const RunSummary& r : runs)
    std::printf("%-16s %6llu %8.3f %8.3f\n", mode_name(r.mode).c_str(),
                static_cast<unsigned long long>(r.seed), r.bc_success,
                r.final_success);
}

int cmd_gen_demos(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  std::vector<Trajectory> demos = load_or_generate_demos(cfg);
  for (const Trajectory& d : demos)
    std::printf("demo seed %llu: %d states, %s\n",
                static_cast<unsigned long long>(d.meta().seed), d.size(),
                d.meta().success ? "success" : "FAILED");
  return 0;
}

int cmd_extract(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  TaskSpec spec = TaskSpec::by_name(cfg.task);
  std::vector<Trajectory> demos = load_or_generate_demos(cfg);
  for (RewardMode mode : cfg.modes) {
    std::unique_ptr<Annotator> shared;
    for (const Trajectory& d : demos) {
      std::unique_ptr<Annotator> local;
      Annotator* a;
      if (cfg.annotator == "vlm") {
        if (!shared) shared = make_annotator(cfg, spec, d);
        a = shared.get();
      } else {
        local = make_annotator(cfg, spec, d);
        a = local.get();
      }
      KeyStateSet keys = extract_keystates(d, spec, mode, *a, cfg);
      fs::path path = cfg.out / "keys" / cfg.task / mode_name(mode) /
                      (std::to_string(d.meta().seed) + ".json");
      save_keystates(keys, mode, d.size(), path);
      std::printf("%s demo %llu: semantic [", mode_name(mode).c_str(),
                  static_cast<unsigned long long>(d.meta().seed));
      for (std::size_t i = 0; i < keys.semantic.indices.size(); ++i)
        std::printf("%s%d", i ? " " : "", keys.semantic.indices[i]);
      std::printf("] motion [");
      for (std::size_t i = 0; i < keys.motion.indices.size(); ++i)
        std::printf("%s%d", i ? " " : "", keys.motion.indices[i]);
      std::printf("]\n");
    }
  }
  return 0;
}

int cmd_train_bc(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  TaskSpec spec = TaskSpec::by_name(cfg.task);
  std::vector<Trajectory> demos = load_or_generate_demos(cfg);
  fs::create_directories(cfg.out / "bc");
  for (std::uint64_t seed : cfg.seeds) {
    Mlp pi = pretrain_bc(demos, cfg, seed);
    fs::path path = cfg.out / "bc" / (cfg.task + "_seed" + std::to_string(seed) + ".mlp");
    save_mlp(pi, path);
    double success = evaluate_policy(spec, pi, cfg.bc.frame_stack,
                                     cfg.online.eval_seed_base,
                                     cfg.online.eval_episodes);
    std::printf("seed %llu: BC success %.3f -> %s\n",
                static_cast<unsigned long long>(seed), success, path.c_str());
  }
  return 0;
}

int cmd_train(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  print_summary(run_experiment(cfg));
  std::printf("results in %s\n", cfg.out.c_str());
  return 0;
}

int cmd_ablate(Common c) {
  c.modes.clear();
  ExperimentConfig cfg = resolve(c);
  cfg.modes = all_reward_modes();
  print_summary(run_experiment(cfg));
  std::printf("results in %s\n", cfg.out.c_str());
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw InvariantError("plot needs at least one run directory");
  std::vector<Curve> curves;
  for (const std::string& in : inputs) {
    // A mode directory holding seed*/eval.csv, or a single eval.csv.
    std::vector<TrainLog> logs;
    fs::path p(in);
    std::string label = p.filename().string();
    if (fs::is_regular_file(p)) {
      logs.push_back(read_eval_csv(p));
      label = p.parent_path().filename().string();
    } else {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (fs::exists(e.path() / "eval.csv")) files.push_back(e.path() / "eval.csv");
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) logs.push_back(read_eval_csv(f));
    }
    if (logs.empty()) throw InvariantError("no eval.csv under " + in);
    curves.push_back(aggregate(label, logs));
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + out);
  f << render_svg(curves);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-state weighted OT reward experiments"};
  app.require_subcommand(1);

  Common gen, extract, bc, train, ablate;
  add_common(app.add_subcommand("gen-demos", "record expert demonstrations"), gen, false);
  add_common(app.add_subcommand("extract-keystates", "write key states per demo"),
             extract, true);
  add_common(app.add_subcommand("train-bc", "pretrain and evaluate BC policies"), bc,
             false);
  add_common(app.add_subcommand("train", "BC then online training per mode and seed"),
             train, true);
  add_common(app.add_subcommand("ablate", "train every reward mode"), ablate, false);

  std::vector<std::string> plot_inputs;
  std::string plot_out = "plot.svg";
  CLI::App* plot = app.add_subcommand("plot", "plot eval curves as SVG");
  plot->add_option("inputs", plot_inputs, "mode directories or eval.csv files")
      ->required();
  plot->add_option("--out", plot_out, "SVG path");

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("gen-demos")) return cmd_gen_demos(gen);
    if (app.got_subcommand("extract-keystates")) return cmd_extract(extract);
    if (app.got_subcommand("train-bc")) return cmd_train_bc(bc);
    if (app.got_subcommand("train")) return cmd_train(train);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate);
    if (app.got_subcommand("plot")) return cmd_plot(plot_inputs, plot_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
