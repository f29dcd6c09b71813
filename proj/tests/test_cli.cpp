// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end exercises of the command-line tool. The binary path arrives as
// the last command-line argument (the build system passes it).

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freqmoe/io.hpp"

using namespace freqmoe;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_tmp;

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > " +
                          (g_tmp / "stdout.txt").string() + " 2> " +
                          (g_tmp / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
#ifdef _WIN32
  return status;
#else
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
#endif
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

std::string p(const std::string& name) { return (g_tmp / name).string(); }

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("") == 1);                  // a subcommand is required
  CHECK(run_cli("no-such-command") == 1);   // unknown subcommand
  CHECK(run_cli("gen-data --out x.fqds") == 1);  // missing required --samples
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("gen-data --help") == 0);
}

TEST_CASE("gen-data: deterministic datasets, config errors exit 1") {
  CHECK(run_cli("gen-data --problem heat --size 16 --samples 8 --traj-len 4"
                " --seed 3 --out " + p("ds.fqds") +
                " --run-dir " + p("run-gen")) == 0);
  CHECK(fs::exists(p("ds.fqds")));
  CHECK(fs::exists(p("run-gen/run.json")));

  CHECK(run_cli("gen-data --problem heat --size 16 --samples 8 --traj-len 4"
                " --seed 3 --out " + p("ds-again.fqds") +
                " --run-dir " + p("run-gen2")) == 0);
  CHECK(sha256_file_hex(p("ds-again.fqds")) == sha256_file_hex(p("ds.fqds")));

  // Grid must be a power of two.
  CHECK(run_cli("gen-data --problem heat --size 48 --samples 4 --out " +
                p("bad.fqds") + " --run-dir " + p("run-bad")) == 1);
  // Unknown problem name.
  CHECK(run_cli("gen-data --problem wave --size 16 --samples 4 --out " +
                p("bad2.fqds") + " --run-dir " + p("run-bad2")) == 1);

  const nlohmann::json run = nlohmann::json::parse(slurp(p("run-gen/run.json")));
  CHECK(run["command"] == "gen-data");
  CHECK(run["outputs"].is_object());
}

TEST_CASE("full pipeline: train, upcycle, verify, finetune, eval, rollout") {
  REQUIRE(fs::exists(p("ds.fqds")));  // produced by the gen-data case

  // Train a tiny dense base.
  CHECK(run_cli("train-base --data " + p("ds.fqds") + " --out " + p("base.fqmo") +
                " --width 4 --layers 2 --modes1 2 --modes2 2"
                " --epochs 2 --batch 4 --warmup-steps 2 --seed 5"
                " --run-dir " + p("run-train")) == 0);
  CHECK(fs::exists(p("base.fqmo")));
  CHECK(count_lines(slurp(p("run-train/metrics.jsonl"))) == 2);
  DenseFno base = load_dense_checkpoint(p("base.fqmo"));
  CHECK(base.config.width == 4);
  CHECK(base.config.grid == 16);

  // Missing data file is a data error: exit 2.
  CHECK(run_cli("train-base --data " + p("nope.fqds") + " --out " + p("x.fqmo") +
                " --run-dir " + p("run-miss")) == 2);
  // Impossible mode count for the grid: exit 1.
  CHECK(run_cli("train-base --data " + p("ds.fqds") + " --out " + p("x.fqmo") +
                " --width 4 --layers 2 --modes1 32 --modes2 2 --epochs 1"
                " --run-dir " + p("run-badmodes")) == 1);

  // Upcycle into a 2x2 band mixture.
  CHECK(run_cli("upcycle --base " + p("base.fqmo") + " --out " + p("moe.fqmo") +
                " --experts 2 --rank 2 --chunks 2x2 --top-k 2 --seed 7"
                " --probes 4 --run-dir " + p("run-up")) == 0);
  FreqMoe moe = load_moe_checkpoint(p("moe.fqmo"));
  CHECK(moe.layout.bands1 == 2);
  CHECK(moe.layout.chunk1 == 2);
  CHECK(moe.num_experts() == 2);

  // A fresh upcycle is exactly equivalent to its base.
  CHECK(run_cli("verify --base " + p("base.fqmo") + " --model " + p("moe.fqmo") +
                " --probes 4 --require-exact --run-dir " + p("run-verify")) == 0);
  const nlohmann::json vj = nlohmann::json::parse(slurp(p("run-verify/verify.json")));
  CHECK(vj["max_masked_deviation"] == 0.0);

  // Feeding the mixture where a dense base is expected is a config error.
  CHECK(run_cli("upcycle --base " + p("moe.fqmo") + " --out " + p("y.fqmo") +
                " --experts 2 --run-dir " + p("run-up2")) == 1);
  CHECK(run_cli("finetune --model " + p("base.fqmo") + " --data " + p("ds.fqds") +
                " --out " + p("z.fqmo") + " --run-dir " + p("run-ft2")) == 1);

  // Finetune the mixture.
  CHECK(run_cli("finetune --model " + p("moe.fqmo") + " --data " + p("ds.fqds") +
                " --out " + p("tuned.fqmo") +
                " --epochs 1 --batch 4 --warmup-steps 2 --seed 9"
                " --run-dir " + p("run-ft")) == 0);
  CHECK(fs::exists(p("tuned.fqmo")));
  CHECK(count_lines(slurp(p("run-ft/metrics.jsonl"))) == 1);

  // Training moved the shared weights, so exact equivalence now fails: exit 2.
  CHECK(run_cli("verify --base " + p("base.fqmo") + " --model " + p("tuned.fqmo") +
                " --probes 4 --require-exact --run-dir " + p("run-verify2")) == 2);

  // Evaluate both checkpoints.
  CHECK(run_cli("eval --model " + p("tuned.fqmo") + " --data " + p("ds.fqds") +
                " --run-dir " + p("run-eval")) == 0);
  const nlohmann::json ej = nlohmann::json::parse(slurp(p("run-eval/eval.json")));
  CHECK(ej["mean_l2re"].get<double>() >= 0.0);
  CHECK(count_lines(slurp(p("run-eval/eval.csv"))) == 1 + 8);

  CHECK(run_cli("eval --model " + p("base.fqmo") + " --data " + p("ds.fqds") +
                " --run-dir " + p("run-eval-dense")) == 0);

  // Roll the dense model along trajectory 0.
  CHECK(run_cli("rollout --model " + p("base.fqmo") + " --data " + p("ds.fqds") +
                " --trajectory 0 --steps 3 --run-dir " + p("run-roll")) == 0);
  CHECK(count_lines(slurp(p("run-roll/rollout.csv"))) == 1 + 3);
  const nlohmann::json rj = nlohmann::json::parse(slurp(p("run-roll/rollout.json")));
  CHECK(rj["errors"].size() == 3);

  // Gate inspection: mixtures get a band map, dense models an explicit marker.
  CHECK(run_cli("inspect-gates --model " + p("moe.fqmo") + " --data " + p("ds.fqds") +
                " --dump-gates --run-dir " + p("run-gates")) == 0);
  const nlohmann::json gj = nlohmann::json::parse(slurp(p("run-gates/gates.json")));
  CHECK(gj["has_gates"] == true);
  CHECK(fs::exists(p("run-gates/gates.csv")));
  CHECK(count_lines(slurp(p("run-gates/gates.jsonl"))) > 0);

  CHECK(run_cli("inspect-gates --model " + p("base.fqmo") + " --data " + p("ds.fqds") +
                " --run-dir " + p("run-gates-dense")) == 0);
  const nlohmann::json gd = nlohmann::json::parse(slurp(p("run-gates-dense/gates.json")));
  CHECK(gd["has_gates"] == false);

  // Every run directory records its invocation.
  for (const char* d : {"run-train", "run-up", "run-ft", "run-eval", "run-roll",
                        "run-gates", "run-verify"})
    CHECK(fs::exists(g_tmp / d / "run.json"));
}

TEST_CASE("bench-modes writes the scaling table") {
  CHECK(run_cli("bench-modes --modes 2 --modes 4 --chunk 2 --top-k 1 --rank 2"
                " --width 4 --layers 2 --grid 16 --run-dir " + p("run-bench")) == 0);
  const std::string csv = slurp(p("run-bench/bench-modes.csv"));
  CHECK(csv.rfind("modes,", 0) == 0);
  CHECK(count_lines(csv) == 1 + 2);
  // The table is also printed to stdout.
  CHECK(slurp(g_tmp / "stdout.txt").find("modes,") != std::string::npos);
}

TEST_CASE("config file supplies defaults, explicit flags win") {
  REQUIRE(fs::exists(p("ds.fqds")));
  {
    std::ofstream cfg(p("train.json"));
    cfg << R"({"epochs": 3, "batch": 4, "width": 4, "layers": 2,)"
        << R"( "modes1": 2, "modes2": 2, "warmup-steps": 2})" << "\n";
  }
  CHECK(run_cli("train-base --data " + p("ds.fqds") + " --out " + p("cfg-a.fqmo") +
                " --config " + p("train.json") +
                " --run-dir " + p("run-cfg-a")) == 0);
  CHECK(count_lines(slurp(p("run-cfg-a/metrics.jsonl"))) == 3);

  CHECK(run_cli("train-base --data " + p("ds.fqds") + " --out " + p("cfg-b.fqmo") +
                " --config " + p("train.json") + " --epochs 1" +
                " --run-dir " + p("run-cfg-b")) == 0);
  CHECK(count_lines(slurp(p("run-cfg-b/metrics.jsonl"))) == 1);

  // Malformed config file is a config error.
  {
    std::ofstream cfg(p("broken.json"));
    cfg << "{not json";
  }
  CHECK(run_cli("train-base --data " + p("ds.fqds") + " --out " + p("cfg-c.fqmo") +
                " --config " + p("broken.json") +
                " --run-dir " + p("run-cfg-c")) == 1);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s [doctest options] <path-to-cli>\n", argv[0]);
    return 3;
  }
  g_cli = argv[argc - 1];
  if (!fs::exists(g_cli)) {
    std::fprintf(stderr, "cli binary not found: %s\n", g_cli.c_str());
    return 3;
  }
  g_tmp = fs::temp_directory_path() / "freqmoe_cli_test";
  fs::remove_all(g_tmp);
  fs::create_directories(g_tmp);

  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv);
  const int rc = ctx.run();
  fs::remove_all(g_tmp);
  return rc;
}
