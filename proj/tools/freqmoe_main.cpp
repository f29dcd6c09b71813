// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. One process per command; every command writes
// <run-dir>/run.json with its resolved configuration, seeds and input
// hashes, so a run is reproducible from that file alone.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "freqmoe/errors.hpp"
#include "freqmoe/evalx.hpp"
#include "freqmoe/io.hpp"
#include "freqmoe/train.hpp"
#include "freqmoe/upcycle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace freqmoe;

namespace {

// JSON config files hold defaults for long flags (keys without the leading
// "--"); anything given explicitly on the command line wins. Booleans map
// to bare flags, arrays repeat the flag per element.
std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end() || it + 1 == args.end()) return args;
  const std::string path = *(it + 1);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");

  auto given = [&args](const std::string& flag) {
    for (const std::string& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        args.push_back(flag);
        args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
    } else {
      args.push_back(flag);
      args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return args;
}

struct RunLog {
  std::string dir;
  json body;

  void input(const std::string& label, const std::string& path) {
    body["inputs"][label] = {{"path", path}, {"sha256", sha256_file_hex(path)}};
  }
  void finish() const { write_text_atomic(dir + "/run.json", body.dump(2) + "\n"); }
};

RunLog open_run(const std::string& dir, const std::string& command) {
  fs::create_directories(dir);
  RunLog log;
  log.dir = dir;
  log.body["command"] = command;
  return log;
}

std::pair<int, int> parse_grid_pair(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == text.size())
    throw ConfigError("expected a band grid like 8x8, got '" + text + "'");
  try {
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("expected a band grid like 8x8, got '" + text + "'");
  }
}

json train_config_json(const TrainConfig& tc, int epochs) {
  return json{{"epochs", epochs},
              {"batch", tc.batch},
              {"lr", tc.lr},
              {"beta1", tc.beta1},
              {"beta2", tc.beta2},
              {"warmup-steps", tc.warmup_steps},
              {"cosine-epochs", tc.cosine_epochs},
              {"steady-epochs", tc.steady_epochs},
              {"min-lr-ratio", tc.min_lr_ratio},
              {"sparsity-weight", tc.sparsity_weight},
              {"clip-norm", tc.clip_norm},
              {"seed", tc.seed},
              {"freeze-base", tc.freeze_base},
              {"burn-in-masked", tc.burn_in_masked}};
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc, int& epochs) {
  cmd->add_option("--epochs", epochs, "Training epochs");
  cmd->add_option("--batch", tc.batch, "Batch size");
  cmd->add_option("--lr", tc.lr, "Peak learning rate");
  cmd->add_option("--beta1", tc.beta1, "Adam beta1");
  cmd->add_option("--beta2", tc.beta2, "Adam beta2");
  cmd->add_option("--warmup-steps", tc.warmup_steps, "Linear warmup steps");
  cmd->add_option("--cosine-epochs", tc.cosine_epochs, "Cosine decay horizon in epochs");
  cmd->add_option("--steady-epochs", tc.steady_epochs, "Plateau epochs after the decay");
  cmd->add_option("--min-lr-ratio", tc.min_lr_ratio, "Learning-rate floor as a fraction of --lr");
  cmd->add_option("--sparsity-weight", tc.sparsity_weight, "Gate sparsity loss weight (mixtures)");
  cmd->add_option("--clip-norm", tc.clip_norm, "Global gradient-norm clip, 0 disables");
  cmd->add_option("--seed", tc.seed, "Seed for init, shuffling and splits");
  cmd->add_flag("--freeze-base", tc.freeze_base, "Freeze shared spectral weights (mixtures)");
  cmd->add_option("--burn-in-masked", tc.burn_in_masked,
                  "Mask expert contributions for the first N optimizer steps");
}

void add_common(CLI::App* cmd, std::string& config_path, std::string& run_dir,
                const std::string& name) {
  cmd->add_option("--config", config_path, "JSON file of flag defaults; explicit flags win");
  run_dir = "runs/" + name;
  cmd->add_option("--run-dir", run_dir, "Directory for run.json and artifacts");
}

ForwardFn forward_for(const Checkpoint& ck, int top_k) {
  if (ck.kind == "dense") return make_forward(ck.dense);
  return make_forward(ck.moe, top_k < 0 ? ck.moe.top_k : top_k);
}

std::string csv_escape_free(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fourier neural operator with frequency-band expert mixtures"};
  app.require_subcommand(1);

  // ---- gen-data ----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic PDE dataset");
  struct {
    std::string config, run_dir, problem = "heat", out;
    PdeDatasetMeta meta;
    double nu = -1.0;  // resolved per problem below
  } g;
  add_common(gen, g.config, g.run_dir, "gen-data");
  gen->add_option("--problem", g.problem, "heat | ns (incompressible vorticity)");
  gen->add_option("--size", g.meta.grid, "Grid resolution S (power of two)");
  gen->add_option("--samples", g.meta.samples, "Total (input, target) pairs")->required();
  gen->add_option("--traj-len", g.meta.traj_len, "Pairs per trajectory");
  gen->add_option("--seed", g.meta.seed, "Dataset seed");
  gen->add_option("--nu", g.nu, "Viscosity (default 1e-2 heat, 1e-3 ns)");
  gen->add_option("--dt", g.meta.dt, "Time between input and target");
  gen->add_option("--v-bar", g.meta.v_bar, "Initial velocity scale (ns)");
  gen->add_option("--burn-in", g.meta.burn_in, "Discarded warmup solver steps (ns)");
  gen->add_option("--substeps", g.meta.substeps, "Solver steps per pair (ns); 0 = pick by CFL");
  gen->add_option("--out", g.out, "Output dataset path")->required();
  gen->callback([&g]() {
    RunLog run = open_run(g.run_dir, "gen-data");
    if (g.problem == "ns") g.problem = "ns-vorticity";
    g.meta.problem = g.problem;
    g.meta.nu = g.nu >= 0 ? g.nu : (g.problem == "heat" ? 1e-2 : 1e-3);
    int cfl_warnings = 0;
    Dataset ds = generate_dataset(g.meta, &cfl_warnings);
    save_dataset(g.out, ds);
    run.body["config"] = {{"problem", g.meta.problem}, {"size", g.meta.grid},
                          {"samples", g.meta.samples}, {"traj-len", g.meta.traj_len},
                          {"seed", g.meta.seed},       {"nu", g.meta.nu},
                          {"dt", g.meta.dt},           {"v-bar", g.meta.v_bar},
                          {"burn-in", g.meta.burn_in}, {"substeps", ds.meta.substeps}};
    run.body["outputs"]["dataset"] = {{"path", g.out}, {"sha256", sha256_file_hex(g.out)}};
    run.body["result"] = {{"cfl_warnings", cfl_warnings}};
    run.finish();
    std::cout << "wrote " << ds.meta.samples << " " << ds.meta.problem << " pairs at "
              << ds.meta.grid << "^2 to " << g.out;
    if (cfl_warnings > 0) std::cout << " (" << cfl_warnings << " CFL warnings)";
    std::cout << "\n";
  });

  // ---- train-base --------------------------------------------------------
  auto* tb = app.add_subcommand("train-base", "Train a dense operator from scratch");
  struct {
    std::string config, run_dir, data, out;
    TrainConfig tc;
    int epochs = 20;
    int width = 32, layers = 4, modes1 = 4, modes2 = 4;
  } t;
  add_common(tb, t.config, t.run_dir, "train-base");
  tb->add_option("--data", t.data, "Training dataset")->required();
  tb->add_option("--out", t.out, "Output checkpoint path")->required();
  tb->add_option("--width", t.width, "Hidden channels");
  tb->add_option("--layers", t.layers, "Fourier layers");
  tb->add_option("--modes1", t.modes1, "Retained modes, axis 0");
  tb->add_option("--modes2", t.modes2, "Retained modes, axis 1");
  add_train_flags(tb, t.tc, t.epochs);
  tb->callback([&t]() {
    RunLog run = open_run(t.run_dir, "train-base");
    run.input("data", t.data);
    const Dataset data = load_dataset(t.data);
    FnoConfig cfg;
    cfg.grid = data.meta.grid;
    cfg.in_channels = cfg.out_channels = data.meta.channels;
    cfg.width = t.width;
    cfg.layers = t.layers;
    cfg.modes1 = t.modes1;
    cfg.modes2 = t.modes2;
    cfg.validate();
    t.tc.validate();
    Rng rng = Rng::stream(t.tc.seed, "init");
    DenseFno model = init_dense_fno(cfg, rng);
    std::ofstream metrics(run.dir + "/metrics.jsonl");
    const FitResult fit = fit_dense(model, data, t.tc, t.epochs, &metrics);
    json prov = {{"command", "train-base"},
                 {"dataset", run.body["inputs"]["data"]},
                 {"train", train_config_json(t.tc, t.epochs)},
                 {"final_val_l2re", fit.final_val_l2re}};
    save_dense_checkpoint(t.out, model, prov, t.tc.seed);
    run.body["config"] = train_config_json(t.tc, t.epochs);
    run.body["config"]["width"] = t.width;
    run.body["config"]["layers"] = t.layers;
    run.body["config"]["modes1"] = t.modes1;
    run.body["config"]["modes2"] = t.modes2;
    run.body["outputs"]["checkpoint"] = {{"path", t.out}, {"sha256", sha256_file_hex(t.out)}};
    run.body["result"] = {{"final_val_l2re", fit.final_val_l2re}, {"steps", fit.steps}};
    run.finish();
    std::cout << "trained dense model: final val L2RE " << fit.final_val_l2re << ", checkpoint "
              << t.out << "\n";
  });

  // ---- upcycle -----------------------------------------------------------
  auto* up = app.add_subcommand("upcycle", "Expand a dense checkpoint into an expert mixture");
  struct {
    std::string config, run_dir, base, out, chunks = "8x8";
    UpcycleSpec spec;
    std::vector<int> bands;
    int probes = 4;
  } u;
  add_common(up, u.config, u.run_dir, "upcycle");
  up->add_option("--base", u.base, "Pretrained dense checkpoint")->required();
  up->add_option("--out", u.out, "Output mixture checkpoint")->required();
  up->add_option("--experts", u.spec.n_experts, "Expert count")->required();
  up->add_option("--rank", u.spec.rank, "Low-rank delta rank");
  up->add_option("--alpha", u.spec.alpha, "Delta scale");
  up->add_option("--chunks", u.chunks, "Band grid J1xJ2 (chunk size comes from the base model)");
  up->add_option("--top-k", u.spec.top_k, "Default active experts at inference");
  up->add_option("--tau", u.spec.tau, "Gate temperature");
  up->add_option("--seed", u.spec.seed, "Seed for the A factors");
  up->add_option("--bands", u.bands, "Explicit expert band ids (default: lowest first)");
  up->add_option("--probes", u.probes, "Verification probe count");
  up->callback([&u]() {
    RunLog run = open_run(u.run_dir, "upcycle");
    run.input("base", u.base);
    const DenseFno base = load_dense_checkpoint(u.base);
    const auto [j1, j2] = parse_grid_pair(u.chunks);
    u.spec.layout.chunk1 = base.config.modes1;
    u.spec.layout.chunk2 = base.config.modes2;
    u.spec.layout.bands1 = j1;
    u.spec.layout.bands2 = j2;
    u.spec.bands = u.bands;
    const FreqMoe moe = upcycle(base, u.spec);
    const UpcycleReport report = verify_upcycle(base, moe, u.probes, u.spec.seed);
    json report_json = {{"max_masked_deviation", report.max_masked_deviation},
                        {"base_params", report.base_params},
                        {"moe_total_params", report.moe_total_params},
                        {"moe_active_params", report.moe_active_params}};
    json prov = {{"command", "upcycle"},
                 {"base", run.body["inputs"]["base"]},
                 {"experts", u.spec.n_experts},
                 {"rank", u.spec.rank},
                 {"alpha", u.spec.alpha},
                 {"chunks", u.chunks},
                 {"tau", u.spec.tau},
                 {"verify", report_json}};
    save_moe_checkpoint(u.out, moe, prov, u.spec.seed);
    run.body["config"] = {{"experts", u.spec.n_experts}, {"rank", u.spec.rank},
                          {"alpha", u.spec.alpha},       {"chunks", u.chunks},
                          {"top-k", u.spec.top_k},       {"tau", u.spec.tau},
                          {"seed", u.spec.seed},         {"probes", u.probes}};
    run.body["outputs"]["checkpoint"] = {{"path", u.out}, {"sha256", sha256_file_hex(u.out)}};
    run.body["result"] = report_json;
    run.finish();
    std::cout << "upcycled " << u.spec.n_experts << " experts (rank " << u.spec.rank
              << "); max masked deviation " << report.max_masked_deviation << "; active params "
              << report.moe_active_params << " of " << report.moe_total_params << "\n";
  });

  // ---- finetune ----------------------------------------------------------
  auto* ft = app.add_subcommand("finetune", "Train an upcycled mixture checkpoint");
  struct {
    std::string config, run_dir, model, data, out;
    TrainConfig tc;
    int epochs = 50;
  } f;
  add_common(ft, f.config, f.run_dir, "finetune");
  ft->add_option("--model", f.model, "Mixture checkpoint to start from")->required();
  ft->add_option("--data", f.data, "Training dataset")->required();
  ft->add_option("--out", f.out, "Output checkpoint path")->required();
  add_train_flags(ft, f.tc, f.epochs);
  ft->callback([&f]() {
    RunLog run = open_run(f.run_dir, "finetune");
    run.input("model", f.model);
    run.input("data", f.data);
    FreqMoe model = load_moe_checkpoint(f.model);
    const Dataset data = load_dataset(f.data);
    if (data.meta.grid != model.config.grid)
      throw ConfigError("dataset grid " + std::to_string(data.meta.grid) +
                        " does not match the checkpoint grid " +
                        std::to_string(model.config.grid));
    f.tc.validate();
    std::ofstream metrics(run.dir + "/metrics.jsonl");
    const FitResult fit = fit_moe(model, data, f.tc, f.epochs, &metrics);
    json prov = {{"command", "finetune"},
                 {"base_checkpoint", run.body["inputs"]["model"]},
                 {"dataset", run.body["inputs"]["data"]},
                 {"train", train_config_json(f.tc, f.epochs)},
                 {"final_val_l2re", fit.final_val_l2re}};
    save_moe_checkpoint(f.out, model, prov, f.tc.seed);
    run.body["config"] = train_config_json(f.tc, f.epochs);
    run.body["outputs"]["checkpoint"] = {{"path", f.out}, {"sha256", sha256_file_hex(f.out)}};
    run.body["result"] = {{"final_val_l2re", fit.final_val_l2re}, {"steps", fit.steps}};
    run.finish();
    std::cout << "finetuned mixture: final val L2RE " << fit.final_val_l2re << ", checkpoint "
              << f.out << "\n";
  });

  // ---- eval --------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Single-step error over a dataset");
  struct {
    std::string config, run_dir, model, data;
    int top_k = -1;
  } e;
  add_common(ev, e.config, e.run_dir, "eval");
  ev->add_option("--model", e.model, "Checkpoint (dense or mixture)")->required();
  ev->add_option("--data", e.data, "Evaluation dataset")->required();
  ev->add_option("--top-k", e.top_k, "Active experts (mixtures; default: checkpoint value)");
  ev->callback([&e]() {
    RunLog run = open_run(e.run_dir, "eval");
    run.input("model", e.model);
    run.input("data", e.data);
    const Checkpoint ck = load_checkpoint(e.model);
    const Dataset data = load_dataset(e.data);
    const EvalReport rep = eval_single_step(forward_for(ck, e.top_k), data);
    std::ostringstream csv;
    csv << "sample,l2re\n";
    for (std::size_t i = 0; i < rep.per_sample.size(); ++i)
      csv << i << ',' << csv_escape_free(rep.per_sample[i]) << '\n';
    write_text_atomic(run.dir + "/eval.csv", csv.str());
    json result = {{"mean_l2re", rep.mean},
                   {"stddev", rep.stddev},
                   {"per_channel", rep.per_channel},
                   {"samples", rep.per_sample.size()}};
    write_text_atomic(run.dir + "/eval.json", result.dump(2) + "\n");
    run.body["config"] = {{"top-k", e.top_k}};
    run.body["result"] = result;
    run.finish();
    std::cout << "mean L2RE " << rep.mean << " (std " << rep.stddev << ") over "
              << rep.per_sample.size() << " samples; kind " << ck.kind << "\n";
  });

  // ---- rollout -----------------------------------------------------------
  auto* ro = app.add_subcommand("rollout", "Autoregressive prediction along a trajectory");
  struct {
    std::string config, run_dir, model, data;
    int trajectory = 0, steps = -1, top_k = -1;
  } r;
  add_common(ro, r.config, r.run_dir, "rollout");
  ro->add_option("--model", r.model, "Checkpoint (dense or mixture)")->required();
  ro->add_option("--data", r.data, "Dataset holding the ground-truth trajectory")->required();
  ro->add_option("--trajectory", r.trajectory, "Trajectory index");
  ro->add_option("--steps", r.steps, "Steps to roll (default: full trajectory)");
  ro->add_option("--top-k", r.top_k, "Active experts (mixtures; default: checkpoint value)");
  ro->callback([&r]() {
    RunLog run = open_run(r.run_dir, "rollout");
    run.input("model", r.model);
    run.input("data", r.data);
    const Checkpoint ck = load_checkpoint(r.model);
    const Dataset data = load_dataset(r.data);
    const int traj_len = data.meta.traj_len;
    const int n_traj = data.num_trajectories();
    if (r.trajectory < 0 || r.trajectory >= n_traj)
      throw ConfigError("trajectory index " + std::to_string(r.trajectory) + " out of range, " +
                        std::to_string(n_traj) + " available");
    const int steps = r.steps < 0 ? traj_len : r.steps;
    if (steps < 1 || steps > traj_len)
      throw ConfigError("steps must lie in [1, " + std::to_string(traj_len) + "]");
    const int start = r.trajectory * traj_len;
    std::vector<Field> truth(data.targets.begin() + start,
                             data.targets.begin() + start + steps);
    const RolloutResult res = rollout(forward_for(ck, r.top_k), data.inputs[start], truth);
    std::ostringstream csv;
    csv << "step,l2re\n";
    for (std::size_t i = 0; i < res.errors.size(); ++i)
      csv << (i + 1) << ',' << csv_escape_free(res.errors[i]) << '\n';
    write_text_atomic(run.dir + "/rollout.csv", csv.str());
    json result = {{"steps_completed", res.errors.size()},
                   {"blew_up", res.blew_up},
                   {"errors", res.errors}};
    write_text_atomic(run.dir + "/rollout.json", result.dump(2) + "\n");
    run.body["config"] = {{"trajectory", r.trajectory}, {"steps", steps}, {"top-k", r.top_k}};
    run.body["result"] = result;
    run.finish();
    std::cout << "rolled " << res.errors.size() << "/" << steps << " steps";
    if (res.blew_up) std::cout << " (blew up, curve truncated)";
    if (!res.errors.empty())
      std::cout << "; final L2RE " << res.errors.back();
    std::cout << "\n";
  });

  // ---- bench-modes -------------------------------------------------------
  auto* bm = app.add_subcommand("bench-modes", "Dense vs mixture cost scaling over mode counts");
  struct {
    std::string config, run_dir;
    std::vector<int> modes{4, 8, 16, 32};
    int chunk = 4, top_k = 2, rank = 4, width = 32, layers = 4, grid = 64;
    bool time_it = false;
  } b;
  add_common(bm, b.config, b.run_dir, "bench-modes");
  bm->add_option("--modes", b.modes, "Mode counts to table (multiples of --chunk)");
  bm->add_option("--chunk", b.chunk, "Band chunk size per axis");
  bm->add_option("--top-k", b.top_k, "Active experts");
  bm->add_option("--rank", b.rank, "Expert delta rank");
  bm->add_option("--width", b.width, "Hidden channels");
  bm->add_option("--layers", b.layers, "Fourier layers");
  bm->add_option("--grid", b.grid, "Grid resolution");
  bm->add_flag("--time", b.time_it, "Add best-of-5 wall times per row");
  bm->callback([&b]() {
    RunLog run = open_run(b.run_dir, "bench-modes");
    FnoConfig cfg;
    cfg.grid = b.grid;
    cfg.width = b.width;
    cfg.layers = b.layers;
    const std::vector<BenchRow> rows =
        bench_modes(b.modes, b.chunk, b.top_k, b.rank, cfg, b.time_it);
    const std::string csv = bench_rows_csv(rows);
    write_text_atomic(run.dir + "/bench-modes.csv", csv);
    run.body["config"] = {{"modes", b.modes}, {"chunk", b.chunk},   {"top-k", b.top_k},
                          {"rank", b.rank},   {"width", b.width},   {"layers", b.layers},
                          {"grid", b.grid},   {"time", b.time_it}};
    run.body["result"]["csv"] = run.dir + "/bench-modes.csv";
    run.finish();
    std::cout << csv;
  });

  // ---- inspect-gates -----------------------------------------------------
  auto* ig = app.add_subcommand("inspect-gates", "Per-band gate statistics over a dataset");
  struct {
    std::string config, run_dir, model, data;
    int top_k = -1;
    bool dump = false;
  } i;
  add_common(ig, i.config, i.run_dir, "inspect-gates");
  ig->add_option("--model", i.model, "Checkpoint (dense or mixture)")->required();
  ig->add_option("--data", i.data, "Dataset to featurize")->required();
  ig->add_option("--top-k", i.top_k, "Active experts (default: checkpoint value)");
  ig->add_flag("--dump-gates", i.dump, "Also write per-sample gate records (gates.jsonl)");
  ig->callback([&i]() {
    RunLog run = open_run(i.run_dir, "inspect-gates");
    run.input("model", i.model);
    run.input("data", i.data);
    const Checkpoint ck = load_checkpoint(i.model);
    run.body["config"] = {{"top-k", i.top_k}, {"dump-gates", i.dump}};
    if (ck.kind == "dense") {
      const json result = {{"has_gates", false}, {"note", "dense model: no gates"}};
      write_text_atomic(run.dir + "/gates.json", result.dump(2) + "\n");
      run.body["result"] = result;
      run.finish();
      std::cout << "dense model: no gates\n";
      return;
    }
    const Dataset data = load_dataset(i.data);
    const int k = i.top_k < 0 ? ck.moe.top_k : i.top_k;
    const GateMap map = gate_activation_map(ck.moe, data, k);
    json mean_rows = json::array(), freq_rows = json::array();
    std::ostringstream csv;
    csv << "grid,row,col,value\n";
    for (int r1 = 0; r1 < map.bands1; ++r1) {
      json mr = json::array(), fr = json::array();
      for (int r2 = 0; r2 < map.bands2; ++r2) {
        mr.push_back(map.mean_gate(r1, r2));
        fr.push_back(map.active_freq(r1, r2));
        csv << "mean_gate," << r1 << ',' << r2 << ',' << csv_escape_free(map.mean_gate(r1, r2))
            << '\n';
      }
      mean_rows.push_back(mr);
      freq_rows.push_back(fr);
    }
    for (int r1 = 0; r1 < map.bands1; ++r1)
      for (int r2 = 0; r2 < map.bands2; ++r2)
        csv << "active_freq," << r1 << ',' << r2 << ','
            << csv_escape_free(map.active_freq(r1, r2)) << '\n';
    const json result = {{"has_gates", true},
                         {"bands1", map.bands1},
                         {"bands2", map.bands2},
                         {"top_k", k},
                         {"mean_gate", mean_rows},
                         {"active_freq", freq_rows}};
    write_text_atomic(run.dir + "/gates.json", result.dump(2) + "\n");
    write_text_atomic(run.dir + "/gates.csv", csv.str());
    if (i.dump) {
      std::ostringstream lines;
      for (std::size_t s = 0; s < data.inputs.size(); ++s) {
        std::vector<std::vector<int>> active;
        std::vector<Eigen::VectorXd> gates;
        (void)moe_forward_infer(ck.moe, data.inputs[s], k, &active, &gates);
        for (std::size_t l = 0; l < gates.size(); ++l) {
          json rec = {{"sample", s},
                      {"layer", l},
                      {"gates", std::vector<double>(gates[l].data(), gates[l].data() + gates[l].size())},
                      {"active", active[l]}};
          lines << rec.dump() << '\n';
        }
      }
      write_text_atomic(run.dir + "/gates.jsonl", lines.str());
    }
    run.body["result"] = result;
    run.finish();
    std::cout << "gate map over " << data.inputs.size() << " samples: " << map.bands1 << "x"
              << map.bands2 << " bands, top-" << k << "\n";
  });

  // ---- verify ------------------------------------------------------------
  auto* vf = app.add_subcommand("verify", "Check a mixture against its dense base");
  struct {
    std::string config, run_dir, base, model;
    int probes = 8;
    std::uint64_t seed = 0;
    bool require_exact = false;
  } v;
  add_common(vf, v.config, v.run_dir, "verify");
  vf->add_option("--base", v.base, "Dense checkpoint")->required();
  vf->add_option("--model", v.model, "Mixture checkpoint")->required();
  vf->add_option("--probes", v.probes, "Probe input count");
  vf->add_option("--seed", v.seed, "Probe seed");
  vf->add_flag("--require-exact", v.require_exact,
               "Fail (exit 2) unless the masked deviation is exactly zero");
  vf->callback([&v]() {
    RunLog run = open_run(v.run_dir, "verify");
    run.input("base", v.base);
    run.input("model", v.model);
    const DenseFno base = load_dense_checkpoint(v.base);
    const FreqMoe moe = load_moe_checkpoint(v.model);
    const UpcycleReport report = verify_upcycle(base, moe, v.probes, v.seed);
    json deltas = json::array();
    for (const auto& layer : report.delta_norms) deltas.push_back(layer);
    const json result = {{"max_masked_deviation", report.max_masked_deviation},
                         {"delta_norms", deltas},
                         {"base_params", report.base_params},
                         {"moe_total_params", report.moe_total_params},
                         {"moe_active_params", report.moe_active_params}};
    write_text_atomic(run.dir + "/verify.json", result.dump(2) + "\n");
    run.body["config"] = {{"probes", v.probes}, {"seed", v.seed}};
    run.body["result"] = result;
    run.finish();
    std::cout << "max masked deviation " << report.max_masked_deviation << "; active params "
              << report.moe_active_params << " of " << report.moe_total_params << "\n";
    if (v.require_exact && report.max_masked_deviation != 0.0)
      throw RuntimeError("masked deviation is nonzero");
  });

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config_args(args);
    // CLI11 parses the reversed vector form.
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
