// Copyright 2026 The FedKLPR Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// fedklpr: run experiments, inspect upload messages and summarise runs.
//
//   fedklpr run <config.json> --out <dir> [--dump-data]
//   fedklpr inspect <message.fklp>
//   fedklpr report <dir>
//   fedklpr --print-defaults
//
// FEDKLPR_SEED, when set, overrides the config's seed.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedklpr.hpp"

namespace fs = std::filesystem;
using namespace fedklpr;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

ExperimentConfig effective_config(const std::string& path) {
  ExperimentConfig cfg = load_config(path);
  if (const char* seed = std::getenv("FEDKLPR_SEED")) cfg.seed = parse_seed(seed);
  return cfg;
}

void dump_datasets(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const auto data = make_datasets(cfg);
  for (const auto& d : data) {
    const std::pair<const char*, const SampleSet*> splits[] = {
        {"train", &d.train}, {"holdout", &d.holdout}, {"test", &d.test}};
    for (const auto& [split, set] : splits) {
      auto out = open_out(dir / ("client" + std::to_string(d.client_id) + "_" + split + ".bin"),
                          true);
      write_sample_set(out, *set);
    }
  }
  open_out(dir / "manifest.json") << dataset_manifest(cfg, data).dump(2) << '\n';
}

int cmd_run(const std::string& config_path, const fs::path& out_dir, bool dump_data,
            bool quiet) {
  const ExperimentConfig cfg = effective_config(config_path);
  fs::create_directories(out_dir / "messages");
  open_out(out_dir / "config.json") << config_to_json(cfg).dump(2) << '\n';
  if (dump_data) dump_datasets(cfg, out_dir / "data");

  auto log = open_out(out_dir / "run_log.jsonl");
  const ExperimentResult result = run_experiment(cfg, [&](const RoundRecord& r) {
    write_run_log_line(log, r);
    log.flush();
    if (quiet) return;
    double rank1 = 0.0, ratio = 0.0;
    for (const auto& c : r.clients) {
      rank1 += c.rank1;
      ratio += c.pruning_ratio;
    }
    const double n = static_cast<double>(r.clients.size());
    std::fprintf(stderr, "round %3zu  rank1 %.4f  pruned %.4f\n", r.round, rank1 / n,
                 ratio / n);
  });

  {
    auto csv = open_out(out_dir / "rounds.csv");
    write_rounds_csv(csv, result.rounds);
  }
  open_out(out_dir / "summary.json") << summary_json(to_rows(result.rounds), cfg).dump(2)
                                     << '\n';
  for (std::size_t k = 0; k < result.last_messages.size(); ++k) {
    auto out = open_out(out_dir / "messages" / ("client" + std::to_string(k) + ".fklp"), true);
    const auto& m = result.last_messages[k];
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size()));
  }
  if (!quiet) std::cerr << "wrote " << out_dir.string() << '\n';
  return 0;
}

int cmd_inspect(const std::string& path) {
  const auto bytes = read_bytes(path);
  const ClientReport r = wire::decode(bytes);
  std::printf("file           %s\n", path.c_str());
  std::printf("bytes          %zu\n", bytes.size());
  std::printf("version        %u\n", static_cast<unsigned>(wire::kVersion));
  std::printf("client_id      %u\n", static_cast<unsigned>(r.client_id));
  std::printf("round          %u\n", static_cast<unsigned>(r.round));
  std::printf("pruning_ratio  %.6f\n", static_cast<double>(r.pruning_ratio));
  std::printf("klaw_raw       %.9g\n", static_cast<double>(r.klaw_raw));
  std::printf("layers         %zu\n", r.model.layers.size());
  std::printf("  %-16s %-12s %8s %8s %9s %s\n", "name", "shape", "values", "kept",
              "sparsity", "prunable");
  for (std::size_t li = 0; li < r.model.layers.size(); ++li) {
    const auto& layer = r.model.layers[li];
    std::string shape;
    for (auto d : layer.shape) shape += (shape.empty() ? "" : "x") + std::to_string(d);
    std::size_t kept = 0;
    for (auto b : r.mask.layers[li].bits) kept += b;
    const double n = static_cast<double>(layer.size());
    std::printf("  %-16s %-12s %8zu %8zu %8.2f%% %s\n", layer.name.c_str(), shape.c_str(),
                layer.size(), kept, n > 0 ? 100.0 * (1.0 - kept / n) : 0.0,
                layer.prunable ? "yes" : "no");
  }
  const std::size_t prunable = prunable_count(r.mask);
  if (prunable > 0) {
    const double actual = pruning_ratio(r.mask);
    std::printf("prunable sparsity %.6f over %zu coordinates (header %s)\n", actual, prunable,
                std::fabs(actual - r.pruning_ratio) <= 1.0 / static_cast<double>(prunable)
                    ? "consistent"
                    : "INCONSISTENT");
  }
  return 0;
}

int cmd_report(const fs::path& dir) {
  const ExperimentConfig cfg = load_config((dir / "config.json").string());
  std::ifstream in(dir / "rounds.csv");
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + (dir / "rounds.csv").string());
  std::cout << report_table(read_rounds_csv(in), cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedKLPR federated re-identification simulator"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print the default configuration");

  std::string config_path, out_dir, message_path, report_dir;
  bool dump_data = false, quiet = false, run_defaults = false;
  auto* run = app.add_subcommand("run", "Run an experiment");
  run->add_option("config", config_path, "JSON configuration file");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--dump-data", dump_data, "Also write the synthetic datasets");
  run->add_flag("--quiet", quiet, "No progress output");
  run->add_flag("--print-defaults", run_defaults, "Print the default configuration");

  auto* inspect = app.add_subcommand("inspect", "Decode and describe an upload message");
  inspect->add_option("message", message_path, "Message file")->required();

  auto* report = app.add_subcommand("report", "Per-client summary of a finished run");
  report->add_option("dir", report_dir, "Run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_defaults || run_defaults) {
      std::cout << default_config_text();
      return 0;
    }
    if (*run) {
      if (config_path.empty() || out_dir.empty()) {
        std::cerr << "run needs <config> and --out <dir>\n";
        return 2;
      }
      return cmd_run(config_path, out_dir, dump_data, quiet);
    }
    if (*inspect) return cmd_inspect(message_path);
    if (*report) return cmd_report(report_dir);
    std::cout << app.help();
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
