// Command-line front end: `gcpo train` runs the optimization loop into a run
// directory, `gcpo analyze` runs the observation studies on a checkpoint.
// Exit codes: 0 ok, 1 runtime failure, 2 config/usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gcpo/gcpo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string preset;
  int threads = 0;  // 0: keep config value
  bool force = false;
};

struct AnalyzeArgs {
  std::string run_dir;
  std::string checkpoint_path;
  std::string config_path;
  std::string out_dir;
  double noise_scale = 3.0;
  int trials = 20;
  int prompt = 0;
  int sample_index = 0;
  int group_size = 0;  // 0: config value
  std::uint64_t seed = 0;
  bool seed_set = false;
  double temperature = 0.0;  // 0: config value
  int early_start = -1, early_count = -1;
  int middle_start = -1, middle_count = -1;
};

json load_user_config(const TrainArgs& args) {
  json user = json::object();
  if (!args.config_path.empty()) {
    user = gcpo::config::load_json_file(args.config_path);
    if (!user.is_object()) {
      throw gcpo::ConfigError("config root must be a JSON object: " +
                              args.config_path);
    }
  }
  for (const std::string& kv : args.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw gcpo::ConfigError("--set expects dotted.key=value, got '" + kv + "'");
    }
    gcpo::config::apply_override(user, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.threads > 0) user["threads"] = args.threads;

  // GCPO_SEED is the last-resort seed source: it applies only when neither the
  // config file nor an override named one.
  if (!user.contains("seed")) {
    if (const char* env = std::getenv("GCPO_SEED")) {
      try {
        user["seed"] = std::stoull(env);
      } catch (const std::exception&) {
        throw gcpo::ConfigError(std::string("GCPO_SEED is not an integer: ") + env);
      }
    }
  }
  return user;
}

void prepare_run_dir(const std::string& dir, bool force) {
  const fs::path p(dir);
  const bool occupied = fs::exists(p / "resolved_config.json") ||
                        fs::exists(p / "metrics.jsonl") ||
                        fs::exists(p / "checkpoint_final.bin");
  if (occupied && !force) {
    throw gcpo::ConfigError("run directory already holds a run: " + dir +
                            " (pass --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw gcpo::IoError("cannot create run directory " + dir + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gcpo::IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw gcpo::IoError("write failed: " + path);
}

void run_one(const gcpo::config::TrainConfig& cfg, const std::string& dir,
             bool force) {
  prepare_run_dir(dir, force);
  json resolved = gcpo::config::to_json(cfg);
  resolved["config_hash"] = gcpo::config::config_hash(resolved);
  write_text_file(dir + "/resolved_config.json", resolved.dump(2) + "\n");

  const auto art = gcpo::trainer::run_training(cfg, dir);
  const auto& last = art.metrics.back();
  std::cout << "run " << dir << ": method=" << gcpo::config::to_string(cfg.method)
            << " steps=" << art.metrics.size()
            << " final_mean_reward=" << last.mean_reward
            << " final_loss=" << last.loss << "\n";
}

int cmd_train(const TrainArgs& args) {
  const json user = load_user_config(args);
  const gcpo::config::TrainConfig base = gcpo::config::parse_config(user);

  if (args.preset.empty()) {
    run_one(base, args.out_dir, args.force);
    return 0;
  }
  if (args.preset != "fig8") {
    throw gcpo::ConfigError("unknown preset: " + args.preset +
                            " (available: fig8)");
  }
  // Four-arm ablation on a shared seed: critical-token selection vs full mask,
  // count-matched random masks, and the complement mask.
  for (const auto method :
       {gcpo::config::Method::kGcpo, gcpo::config::Method::kGrpoFull,
        gcpo::config::Method::kGrpoRandomMask,
        gcpo::config::Method::kGrpoOtherTokens}) {
    gcpo::config::TrainConfig cfg = base;
    cfg.method = method;
    run_one(cfg, args.out_dir + "/" + gcpo::config::to_string(method), args.force);
  }
  return 0;
}

struct AnalyzeContext {
  gcpo::config::TrainConfig cfg;
  gcpo::policy::Params params;
  std::string out_dir;
};

AnalyzeContext analyze_context(const AnalyzeArgs& args) {
  std::string checkpoint = args.checkpoint_path;
  std::string config_path = args.config_path;
  std::string out_dir = args.out_dir;
  if (!args.run_dir.empty()) {
    if (checkpoint.empty()) checkpoint = args.run_dir + "/checkpoint_final.bin";
    if (config_path.empty()) config_path = args.run_dir + "/resolved_config.json";
    if (out_dir.empty()) out_dir = args.run_dir;
  }
  if (checkpoint.empty() || config_path.empty()) {
    throw gcpo::ConfigError(
        "analyze needs --run DIR, or both --checkpoint and --config");
  }
  if (!fs::exists(checkpoint)) {
    throw gcpo::ConfigError("checkpoint not found: " + checkpoint);
  }
  if (!fs::exists(config_path)) {
    throw gcpo::ConfigError("config not found: " + config_path);
  }
  if (out_dir.empty()) out_dir = ".";
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  AnalyzeContext ctx{gcpo::config::parse_config(
                         gcpo::config::load_json_file(config_path)),
                     gcpo::policy::load_checkpoint(checkpoint), out_dir};
  if (ctx.params.dims().seq_len != ctx.cfg.seq_len() ||
      ctx.params.dims().vocab != ctx.cfg.vocab) {
    throw gcpo::ConfigError("checkpoint dims do not match the config");
  }
  if (args.prompt < 0 || args.prompt >= ctx.cfg.num_prompts()) {
    throw gcpo::ConfigError("prompt index out of range");
  }
  return ctx;
}

int cmd_analyze_perturb(const AnalyzeArgs& args) {
  AnalyzeContext ctx = analyze_context(args);
  const int n = ctx.cfg.seq_len();
  const int tenth = std::max(1, static_cast<int>(std::ceil(0.1 * n)));

  gcpo::analysis::PerturbationSpec spec;
  spec.early.start = args.early_start >= 0 ? args.early_start : 0;
  spec.early.count = args.early_count >= 0 ? args.early_count : tenth;
  spec.middle.start =
      args.middle_start >= 0 ? args.middle_start : (n - tenth) / 2;
  spec.middle.count = args.middle_count >= 0 ? args.middle_count : tenth;
  spec.noise_scale = args.noise_scale;
  spec.trials = args.trials;
  spec.prompt_id = args.prompt;
  spec.seed = args.seed_set ? args.seed : ctx.cfg.seed;
  spec.temperature = args.temperature > 0.0 ? args.temperature : ctx.cfg.temperature;

  const auto report = gcpo::analysis::perturbation_study(
      ctx.params, ctx.cfg.grid_h, ctx.cfg.grid_w, spec);
  const json doc = gcpo::analysis::to_json(report);
  write_text_file(ctx.out_dir + "/perturbation.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return 0;
}

std::vector<gcpo::policy::RolloutRecord> sample_group(const AnalyzeContext& ctx,
                                                      const AnalyzeArgs& args) {
  const int g = args.group_size > 0 ? args.group_size : ctx.cfg.group_size;
  const std::uint64_t seed = args.seed_set ? args.seed : ctx.cfg.seed;
  std::vector<gcpo::policy::RolloutRecord> group;
  group.reserve(g);
  for (int i = 0; i < g; ++i) {
    group.push_back(gcpo::policy::sample_rollout(
        ctx.params, ctx.cfg.grid_h, ctx.cfg.grid_w, args.prompt,
        gcpo::rng::derive(seed, gcpo::rng::kRollout, 0, args.prompt, i),
        ctx.cfg.temperature));
  }
  return group;
}

int cmd_analyze_entropy(const AnalyzeArgs& args) {
  AnalyzeContext ctx = analyze_context(args);
  const auto group = sample_group(ctx, args);

  // Group-mean entropy map: per-position entropy averaged over the rollouts.
  gcpo::Grid<double> mean_map(ctx.cfg.grid_h, ctx.cfg.grid_w, 0.0);
  for (const auto& rec : group) {
    const auto map = gcpo::stats::entropy_map_from_probs(
        rec.probs, ctx.cfg.grid_h, ctx.cfg.grid_w, ctx.cfg.vocab);
    for (int t = 0; t < mean_map.size(); ++t) mean_map.flat(t) += map.flat(t);
  }
  for (int t = 0; t < mean_map.size(); ++t) {
    mean_map.flat(t) /= static_cast<double>(group.size());
  }

  const auto mask = gcpo::analysis::subject_mask_from_reward(
      ctx.cfg.prompts[args.prompt], ctx.cfg.grid_h, ctx.cfg.grid_w);
  const auto stats = gcpo::analysis::entropy_region_stats(mean_map, mask);
  const json doc = gcpo::analysis::to_json(stats);
  write_text_file(ctx.out_dir + "/entropy_stats.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return 0;
}

int cmd_analyze_maps(const AnalyzeArgs& args) {
  AnalyzeContext ctx = analyze_context(args);
  const auto group = sample_group(ctx, args);
  gcpo::analysis::export_maps(group, ctx.cfg.budget, args.sample_index,
                              ctx.out_dir);
  std::cout << "wrote entropy.csv entropy_smoothed.csv entropy_gradient.csv "
               "similarity.csv selection_mask.csv selection_mask.json to "
            << ctx.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group critical-token policy optimization on toy token grids"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", train_args.config_path,
                    "JSON config file (defaults apply when omitted)");
  train->add_option("--out", train_args.out_dir, "run directory")->required();
  train->add_option("--set", train_args.overrides,
                    "override a config field: dotted.key=value");
  train->add_option("--preset", train_args.preset,
                    "experiment preset (fig8: four ablation arms)");
  train->add_option("--threads", train_args.threads, "worker threads");
  train->add_flag("--force", train_args.force, "overwrite an existing run");

  AnalyzeArgs an;
  CLI::App* analyze = app.add_subcommand("analyze", "observation studies");
  analyze->require_subcommand(1);
  CLI::App* perturb = analyze->add_subcommand(
      "perturb", "early vs middle perturbation propagation");
  CLI::App* entropy = analyze->add_subcommand(
      "entropy", "subject vs background entropy statistics");
  CLI::App* maps = analyze->add_subcommand(
      "maps", "export entropy / gradient / similarity / selection maps");
  for (CLI::App* sub : {perturb, entropy, maps}) {
    sub->add_option("--run", an.run_dir, "run directory with config + checkpoint");
    sub->add_option("--checkpoint", an.checkpoint_path, "checkpoint file");
    sub->add_option("--config", an.config_path, "config file");
    sub->add_option("--out", an.out_dir, "output directory");
    sub->add_option("--prompt", an.prompt, "prompt index");
    sub->add_option("--seed", an.seed, "analysis seed (default: config seed)")
        ->each([&an](const std::string&) { an.seed_set = true; });
  }
  perturb->add_option("--noise-scale", an.noise_scale, "logit noise half-width");
  perturb->add_option("--temperature", an.temperature,
                      "sampling temperature for the study (default: config)");
  perturb->add_option("--trials", an.trials, "trials per range");
  perturb->add_option("--early-start", an.early_start, "early range start");
  perturb->add_option("--early-count", an.early_count, "early range length");
  perturb->add_option("--middle-start", an.middle_start, "middle range start");
  perturb->add_option("--middle-count", an.middle_count, "middle range length");
  for (CLI::App* sub : {entropy, maps}) {
    sub->add_option("--group-size", an.group_size, "rollouts to sample");
  }
  maps->add_option("--sample-index", an.sample_index, "which rollout to export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (perturb->parsed()) return cmd_analyze_perturb(an);
    if (entropy->parsed()) return cmd_analyze_entropy(an);
    if (maps->parsed()) return cmd_analyze_maps(an);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const gcpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
