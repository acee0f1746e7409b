// End-to-end checks of the command-line interface: exit codes, run-directory
// contents, overrides, presets, env fallback, and analyze outputs. Each test
// spawns the real binary (path injected by the build).

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = GCPO_CLI_PATH;

struct Result {
  int exit_code = -1;
};

Result run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + kCli + " " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_args(const std::string& out) {
  return "train --out " + out +
         " --set steps=4 --set group_size=2 --set grid.h=4 --set grid.w=4 "
         "--set vocab=4 --set embed_dim=4 --set seed=3 --set "
         "'prompts=[{\"kind\":\"border_structure\",\"border_token\":1,"
         "\"interior_token\":2}]'";
}

}  // namespace

TEST_CASE("train: smoke run produces the run directory artifacts", "[cli]") {
  const auto out = fresh_dir("gcpo_cli_smoke");
  CHECK(run_cli(tiny_args(out)).exit_code == 0);
  CHECK(fs::exists(out + "/resolved_config.json"));
  CHECK(fs::exists(out + "/metrics.jsonl"));
  CHECK(fs::exists(out + "/checkpoint_final.bin"));

  std::ifstream metrics(out + "/metrics.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(metrics, line)) {
    const auto rec = json::parse(line);
    CHECK(rec.contains("mean_reward"));
    ++lines;
  }
  CHECK(lines == 4);

  const auto resolved = json::parse(slurp(out + "/resolved_config.json"));
  CHECK(resolved["steps"] == 4);
  CHECK(resolved.contains("config_hash"));
}

TEST_CASE("train: refuses to overwrite without --force", "[cli]") {
  const auto out = fresh_dir("gcpo_cli_force");
  CHECK(run_cli(tiny_args(out)).exit_code == 0);
  CHECK(run_cli(tiny_args(out)).exit_code == 2);
  CHECK(run_cli(tiny_args(out) + " --force").exit_code == 0);
}

TEST_CASE("train: config errors exit with 2", "[cli]") {
  const auto out = fresh_dir("gcpo_cli_bad");
  CHECK(run_cli("train --out " + out + " --set stepz=4").exit_code == 2);
  CHECK(run_cli("train --out " + out + " --set steps=0").exit_code == 2);
  CHECK(run_cli("train --out " + out + " --set method=ppo").exit_code == 2);
  CHECK(run_cli("train --out " + out + " --set steps").exit_code == 2);
  CHECK(run_cli("trane --out " + out).exit_code == 2);  // unknown subcommand
  CHECK(!fs::exists(out + "/metrics.jsonl"));
}

TEST_CASE("train: determinism and config round trip through the CLI", "[cli]") {
  const auto a = fresh_dir("gcpo_cli_det_a");
  const auto b = fresh_dir("gcpo_cli_det_b");
  CHECK(run_cli(tiny_args(a)).exit_code == 0);
  CHECK(run_cli(tiny_args(b)).exit_code == 0);
  CHECK(slurp(a + "/metrics.jsonl") == slurp(b + "/metrics.jsonl"));

  // Re-feeding the resolved config reproduces the identical metrics stream.
  const auto c = fresh_dir("gcpo_cli_det_c");
  CHECK(run_cli("train --out " + c + " --config " + a +
                "/resolved_config.json")
            .exit_code == 0);
  CHECK(slurp(a + "/metrics.jsonl") == slurp(c + "/metrics.jsonl"));
}

TEST_CASE("train: GCPO_SEED is the fallback seed source", "[cli]") {
  const auto a = fresh_dir("gcpo_cli_env_a");
  CHECK(run_cli("train --out " + a +
                " --set steps=2 --set group_size=2 --set grid.h=4 "
                "--set grid.w=4 --set embed_dim=4",
                "GCPO_SEED=77")
            .exit_code == 0);
  CHECK(json::parse(slurp(a + "/resolved_config.json"))["seed"] == 77);

  // An explicit --set wins over the environment.
  const auto b = fresh_dir("gcpo_cli_env_b");
  CHECK(run_cli("train --out " + b +
                " --set steps=2 --set group_size=2 --set grid.h=4 "
                "--set grid.w=4 --set embed_dim=4 --set seed=5",
                "GCPO_SEED=77")
            .exit_code == 0);
  CHECK(json::parse(slurp(b + "/resolved_config.json"))["seed"] == 5);

  CHECK(run_cli("train --out " + fresh_dir("gcpo_cli_env_c") +
                " --set steps=2",
                "GCPO_SEED=notanumber")
            .exit_code == 2);
}

TEST_CASE("train: fig8 preset launches the four arms with a shared seed",
          "[cli]") {
  const auto out = fresh_dir("gcpo_cli_fig8");
  CHECK(run_cli("train --out " + out + " --preset fig8 --set steps=2 "
                "--set group_size=2 --set grid.h=4 --set grid.w=4 "
                "--set embed_dim=4 --set seed=9")
            .exit_code == 0);
  for (const char* arm :
       {"gcpo", "grpo_full", "grpo_random_mask", "grpo_other_tokens"}) {
    CHECK(fs::exists(out + "/" + arm + "/metrics.jsonl"));
    const auto cfg = json::parse(slurp(out + "/" + arm + "/resolved_config.json"));
    CHECK(cfg["method"] == arm);
    CHECK(cfg["seed"] == 9);
  }
  CHECK(run_cli("train --out " + out + " --preset fig9 --set steps=2").exit_code ==
        2);
}

TEST_CASE("analyze: missing inputs exit with 2", "[cli]") {
  CHECK(run_cli("analyze perturb --checkpoint /nonexistent.bin --config "
                "/nonexistent.json")
            .exit_code == 2);
  CHECK(run_cli("analyze perturb").exit_code == 2);
  const auto out = fresh_dir("gcpo_cli_an_bad");
  CHECK(run_cli(tiny_args(out)).exit_code == 0);
  CHECK(run_cli("analyze perturb --run " + out + " --prompt 9").exit_code == 2);
}

TEST_CASE("analyze: perturb, entropy, and maps write their reports", "[cli]") {
  const auto run = fresh_dir("gcpo_cli_an_run");
  CHECK(run_cli(tiny_args(run)).exit_code == 0);

  const auto pdir = fresh_dir("gcpo_cli_an_perturb");
  CHECK(run_cli("analyze perturb --run " + run + " --out " + pdir +
                " --trials 3 --noise-scale 0")
            .exit_code == 0);
  const auto report = json::parse(slurp(pdir + "/perturbation.json"));
  CHECK(report["early"]["mean_divergence"] == 0.0);
  CHECK(report["middle"]["mean_divergence"] == 0.0);

  const auto edir = fresh_dir("gcpo_cli_an_entropy");
  CHECK(run_cli("analyze entropy --run " + run + " --out " + edir +
                " --group-size 3")
            .exit_code == 0);
  const auto stats = json::parse(slurp(edir + "/entropy_stats.json"));
  CHECK(stats.contains("mean_subject"));
  CHECK(stats.contains("mean_background"));
  CHECK(stats.contains("abs_difference"));

  const auto mdir = fresh_dir("gcpo_cli_an_maps");
  CHECK(run_cli("analyze maps --run " + run + " --out " + mdir +
                " --group-size 3")
            .exit_code == 0);
  for (const char* name :
       {"entropy.csv", "entropy_smoothed.csv", "entropy_gradient.csv",
        "similarity.csv", "selection_mask.csv", "selection_mask.json"}) {
    CHECK(fs::exists(mdir + "/" + name));
  }
  // CSV grids have the configured shape and the documented format.
  std::ifstream csv(mdir + "/entropy.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) {
    if (rows == 0) CHECK(std::count(line.begin(), line.end(), ',') == 3);
    ++rows;
  }
  CHECK(rows == 4);
}

TEST_CASE("help exits cleanly", "[cli]") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("train --help").exit_code == 0);
}
