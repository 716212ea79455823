/* Copyright 2026 The ServeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// servesim: run, sweep and plot simulations from config files.

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "servesim/cli/config.h"
#include "servesim/cli/plot.h"
#include "servesim/cli/runner.h"

namespace fs = std::filesystem;
using namespace servesim;

namespace {

struct RunArgs {
  std::string config;
  std::string workload;
  std::string traces;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string event_log;
  bool plot = false;
};

fs::path traces_dir(const RunArgs& args, const cli::RunConfig& config) {
  if (!args.traces.empty()) return args.traces;
  if (!config.traces.empty()) return config.traces;
  fail(ErrorCode::kInvalidArgument, "no trace directory: pass --traces or set \"traces\" in the config");
}

// One full run; returns the exit status and reports errors on `err`.
int run_one(const RunArgs& args, const fs::path& config_path, const fs::path& out_dir, std::ostream& err) {
  try {
    cli::RunConfig config = cli::load_config(config_path);
    if (args.seed) config.cluster.seed = *args.seed;
    const auto tables = perf::load_trace_dir(traces_dir(args, config));
    auto workload = cli::load_run_workload(args.workload);
    std::ofstream log;
    if (!args.event_log.empty()) {
      const fs::path parent = fs::path(args.event_log).parent_path();
      std::error_code ec;
      if (!parent.empty()) fs::create_directories(parent, ec);
      log.open(args.event_log);
      if (!log) fail(ErrorCode::kIoError, fmt::format("cannot open event log '{}'", args.event_log));
    }
    const auto result = cli::run_simulation(config, std::move(workload), tables, log.is_open() ? &log : nullptr);
    cli::write_outputs(result, out_dir);
    if (args.plot) {
      std::ofstream svg(out_dir / "cdf.svg");
      svg << cli::render_cdf_svg(result.report.requests, config_path.stem().string());
      if (!svg) fail(ErrorCode::kIoError, "cannot write cdf.svg");
    }
    return cli::kExitOk;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument && std::string(e.what()).find("no trace directory") != std::string::npos) {
      err << "servesim: " << e.what() << '\n';
      return cli::kExitUsage;
    }
    err << fmt::format("servesim: {}: {}\n", config_path.string(), e.what());
    return cli::exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << fmt::format("servesim: {}: internal error: {}\n", config_path.string(), e.what());
    return cli::kExitSimulation;
  }
}

int plot_report(const std::string& report, const std::string& out) {
  try {
    fs::path rows = report;
    if (fs::is_directory(rows)) rows /= "requests.jsonl";
    std::ifstream in(rows);
    if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open '{}'", rows.string()));
    const auto records = metrics::read_requests_jsonl(in);
    std::ofstream svg(out);
    svg << cli::render_cdf_svg(records, rows.parent_path().filename().string());
    if (!svg) fail(ErrorCode::kIoError, fmt::format("cannot write '{}'", out));
    return cli::kExitOk;
  } catch (const Error& e) {
    std::cerr << "servesim: " << e.what() << '\n';
    return cli::exit_code_for(e.code());
  }
}

int echo(const std::string& config_path) {
  try {
    std::cout << cli::echo_config(cli::load_config(config_path)).dump(2) << '\n';
    return cli::kExitOk;
  } catch (const Error& e) {
    std::cerr << "servesim: " << e.what() << '\n';
    return cli::exit_code_for(e.code());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator for LLM serving clusters"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Simulate one config and write requests.jsonl and summary.json");
  run->add_option("--config", run_args.config, "Cluster config (servesim.config/v1)")->required()->check(CLI::ExistingFile);
  run->add_option("--workload", run_args.workload, "Workload CSV; a .tokens sidecar is picked up")->required();
  run->add_option("--traces", run_args.traces, "Directory of operator trace CSVs with .meta.json sidecars");
  run->add_option("--seed", run_args.seed, "Overrides the config seed");
  run->add_option("--out", run_args.out, "Output directory")->required();
  run->add_option("--event-log", run_args.event_log, "Write one line per dispatched event to this file");
  run->add_flag("--plot", run_args.plot, "Also write cdf.svg into the output directory");

  RunArgs sweep_args;
  std::vector<std::string> sweep_configs;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "Run several configs concurrently, one output subdirectory each");
  sweep->add_option("--config", sweep_configs, "Cluster configs")->required()->check(CLI::ExistingFile);
  sweep->add_option("--workload", sweep_args.workload, "Workload CSV")->required();
  sweep->add_option("--traces", sweep_args.traces, "Trace directory");
  sweep->add_option("--seed", sweep_args.seed, "Overrides every config seed");
  sweep->add_option("--out", sweep_args.out, "Output root; each run writes <out>/<config stem>")->required();
  sweep->add_option("--jobs", jobs, "Concurrent simulations")->check(CLI::PositiveNumber);
  sweep->add_flag("--plot", sweep_args.plot, "Also write cdf.svg per run");

  std::string report;
  std::string svg_out;
  auto* plot = app.add_subcommand("plot", "Render TTFT/TPOT/ITL CDFs from a report");
  plot->add_option("--report", report, "Run output directory or requests.jsonl")->required();
  plot->add_option("--out", svg_out, "SVG file to write")->required();

  std::string echo_path;
  auto* config = app.add_subcommand("config", "Validate a config and print it with defaults filled in");
  config->add_option("--config", echo_path, "Cluster config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  if (*run) return run_one(run_args, run_args.config, run_args.out, std::cerr);
  if (*plot) return plot_report(report, svg_out);
  if (*config) return echo(echo_path);

  std::atomic<std::size_t> next{0};
  std::atomic<int> worst{cli::kExitOk};
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < sweep_configs.size(); i = next++) {
      const fs::path path = sweep_configs[i];
      std::ostringstream err;
      const int code = run_one(sweep_args, path, fs::path(sweep_args.out) / path.stem(), err);
      std::lock_guard lock(err_mu);
      std::cerr << err.str();
      std::cout << fmt::format("{} {}\n", code == 0 ? "ok  " : "FAIL", path.string());
      int cur = worst.load();
      while (code > cur && !worst.compare_exchange_weak(cur, code)) {
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, sweep_configs.size()); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return worst.load();
}
