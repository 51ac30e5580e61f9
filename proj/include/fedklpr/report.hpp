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

// Run outputs: per-round CSV, newline-delimited run log, summary, the
// per-client report table and optional dataset dumps. All text is produced
// with fixed formatting so reruns are byte-identical.

#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedklpr/config.hpp"
#include "fedklpr/error.hpp"
#include "fedklpr/fed.hpp"
#include "fedklpr/wire.hpp"

namespace fedklpr {

inline constexpr const char* kCsvHeader =
    "round,client,rank1,mAP,pruning_ratio,klaw,weight,upload_bytes,download_bytes";

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& rounds) {
  out << kCsvHeader << '\n';
  for (const auto& r : rounds)
    for (const auto& c : r.clients)
      out << r.round << ',' << c.client << ',' << fmt_real(c.rank1) << ','
          << fmt_real(c.mean_ap) << ',' << fmt_real(c.pruning_ratio) << ','
          << fmt_real(c.klaw) << ',' << fmt_real(c.weight) << ',' << c.upload_bytes
          << ',' << c.download_bytes << '\n';
}

inline void write_run_log_line(std::ostream& out, const RoundRecord& r) {
  for (const auto& c : r.clients) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["client"] = c.client;
    j["rank1"] = c.rank1;
    j["mAP"] = c.mean_ap;
    j["pruning_ratio"] = c.pruning_ratio;
    j["klaw"] = c.klaw;
    j["weight"] = c.weight;
    j["upload_bytes"] = c.upload_bytes;
    j["download_bytes"] = c.download_bytes;
    j["holdout_acc"] = c.holdout_acc;
    j["prune_event"] = to_string(c.prune_event);
    j["skipped_epochs"] = c.skipped_epochs;
    j["global_checksum"] = r.global_checksum;
    out << j.dump() << '\n';
  }
}

// One parsed CSV row.
struct CsvRow {
  std::size_t round = 0;
  std::size_t client = 0;
  double rank1 = 0.0;
  double mean_ap = 0.0;
  double pruning_ratio = 0.0;
  double klaw = 0.0;
  double weight = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
};

inline std::vector<CsvRow> read_rounds_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw Error(ErrorCode::kMalformed, "rounds.csv: missing or unexpected header");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    CsvRow r;
    char tail = 0;
    const int n = std::sscanf(
        line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf,%lf,%" SCNu64 ",%" SCNu64 "%c", &r.round,
        &r.client, &r.rank1, &r.mean_ap, &r.pruning_ratio, &r.klaw, &r.weight,
        &r.upload_bytes, &r.download_bytes, &tail);
    if (n != 9)
      throw Error(ErrorCode::kMalformed,
                  "rounds.csv line " + std::to_string(lineno) + " is malformed");
    rows.push_back(r);
  }
  return rows;
}

// Traffic of the reference run: no pruning, dense model both ways.
inline std::uint64_t dense_baseline_bytes(const ExperimentConfig& cfg) {
  const ParamVector structure = init_params(cfg.derived_net());
  return 2ull * cfg.rounds * cfg.num_clients * wire::dense_message_bytes(structure);
}

struct ClientSummary {
  std::size_t client = 0;
  double rank1 = 0.0;
  double mean_ap = 0.0;
  double pruning_ratio = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::uint64_t baseline_bytes = 0;

  std::uint64_t total_bytes() const { return upload_bytes + download_bytes; }
  double reduction() const { return wire::reduction(total_bytes(), baseline_bytes); }
};

// Final-round metrics and traffic summed over all rounds, per client.
inline std::vector<ClientSummary> summarize(const std::vector<CsvRow>& rows,
                                            const ExperimentConfig& cfg) {
  std::map<std::size_t, ClientSummary> by_client;
  std::map<std::size_t, std::size_t> last_round;
  for (const auto& r : rows) {
    auto& s = by_client[r.client];
    s.client = r.client;
    s.upload_bytes += r.upload_bytes;
    s.download_bytes += r.download_bytes;
    if (r.round >= last_round[r.client]) {
      last_round[r.client] = r.round;
      s.rank1 = r.rank1;
      s.mean_ap = r.mean_ap;
      s.pruning_ratio = r.pruning_ratio;
    }
  }
  const std::uint64_t per_client = dense_baseline_bytes(cfg) / cfg.num_clients;
  std::vector<ClientSummary> out;
  for (auto& [k, s] : by_client) {
    s.baseline_bytes = per_client;
    out.push_back(s);
  }
  return out;
}

inline std::vector<CsvRow> to_rows(const std::vector<RoundRecord>& rounds) {
  std::vector<CsvRow> rows;
  for (const auto& r : rounds)
    for (const auto& c : r.clients)
      rows.push_back({r.round, c.client, c.rank1, c.mean_ap, c.pruning_ratio, c.klaw,
                      c.weight, c.upload_bytes, c.download_bytes});
  return rows;
}

inline nlohmann::ordered_json summary_json(const std::vector<CsvRow>& rows,
                                           const ExperimentConfig& cfg) {
  const auto clients = summarize(rows, cfg);
  const ParamVector structure = init_params(cfg.derived_net());
  double rank1 = 0.0, map = 0.0, ratio = 0.0;
  std::uint64_t up = 0, down = 0;
  for (const auto& c : clients) {
    rank1 += c.rank1;
    map += c.mean_ap;
    ratio += c.pruning_ratio;
    up += c.upload_bytes;
    down += c.download_bytes;
  }
  const double n = clients.empty() ? 1.0 : static_cast<double>(clients.size());
  const std::uint64_t baseline = dense_baseline_bytes(cfg);
  nlohmann::ordered_json j;
  j["rounds"] = cfg.rounds;
  j["clients"] = cfg.num_clients;
  j["seed"] = cfg.seed;
  j["final_mean_rank1"] = rank1 / n;
  j["final_mean_mAP"] = map / n;
  j["final_mean_pruning_ratio"] = ratio / n;
  j["upload_bytes"] = up;
  j["download_bytes"] = down;
  j["total_cc_bytes"] = up + down;
  j["dense_message_bytes"] = wire::dense_message_bytes(structure);
  j["dense_baseline_bytes"] = baseline;
  j["cc_reduction"] = wire::reduction(up + down, baseline);
  j["upload_reduction"] = wire::reduction(up, baseline / 2);
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& c : clients)
    per.push_back({{"client", c.client},
                   {"rank1", c.rank1},
                   {"mAP", c.mean_ap},
                   {"pruning_ratio", c.pruning_ratio},
                   {"total_cc_bytes", c.total_bytes()},
                   {"cc_reduction", c.reduction()}});
  j["per_client"] = per;
  return j;
}

inline std::string report_table(const std::vector<CsvRow>& rows,
                                const ExperimentConfig& cfg) {
  const auto clients = summarize(rows, cfg);
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s %14s %14s %10s\n", "client", "rank1",
                "mAP", "pruned", "cc_bytes", "dense_bytes", "cc_saved");
  out << buf;
  std::uint64_t total = 0, baseline = 0;
  double rank1 = 0.0, map = 0.0, ratio = 0.0;
  for (const auto& c : clients) {
    std::snprintf(buf, sizeof buf, "%-8zu %7.2f%% %7.2f%% %7.2f%% %14llu %14llu %9.2f%%\n",
                  c.client, 100.0 * c.rank1, 100.0 * c.mean_ap, 100.0 * c.pruning_ratio,
                  static_cast<unsigned long long>(c.total_bytes()),
                  static_cast<unsigned long long>(c.baseline_bytes), 100.0 * c.reduction());
    out << buf;
    total += c.total_bytes();
    baseline += c.baseline_bytes;
    rank1 += c.rank1;
    map += c.mean_ap;
    ratio += c.pruning_ratio;
  }
  const double n = clients.empty() ? 1.0 : static_cast<double>(clients.size());
  std::snprintf(buf, sizeof buf, "%-8s %7.2f%% %7.2f%% %7.2f%% %14llu %14llu %9.2f%%\n",
                "all", 100.0 * rank1 / n, 100.0 * map / n, 100.0 * ratio / n,
                static_cast<unsigned long long>(total),
                static_cast<unsigned long long>(baseline),
                100.0 * wire::reduction(total, baseline));
  out << buf;
  return out.str();
}

// -- dataset dump ------------------------------------------------------------

// Binary layout, little-endian: u64 rows, u64 cols, rows*cols f64 features,
// then rows x i32 identity, rows x i32 camera, rows x u8 query flag.
inline void write_sample_set(std::ostream& out, const SampleSet& s) {
  auto put = [&](const auto& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  put(static_cast<std::uint64_t>(s.x.rows()));
  put(static_cast<std::uint64_t>(s.x.cols()));
  for (std::size_t i = 0; i < s.x.rows(); ++i)
    for (std::size_t c = 0; c < s.x.cols(); ++c) put(s.x(i, c));
  for (int v : s.identity) put(static_cast<std::int32_t>(v));
  for (int v : s.camera) put(static_cast<std::int32_t>(v));
  for (char v : s.is_query) put(static_cast<std::uint8_t>(v));
}

inline nlohmann::ordered_json dataset_manifest(const ExperimentConfig& cfg,
                                               const std::vector<ClientDataset>& data) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["data_seed"] = cfg.derived_data().seed;
  j["spec"] = config_to_json(cfg)["data"];
  j["layout"] =
      "u64 rows, u64 cols, f64 features row-major, i32 identity, i32 camera, u8 is_query";
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (const auto& d : data) {
    const std::pair<const char*, const SampleSet*> splits[] = {
        {"train", &d.train}, {"holdout", &d.holdout}, {"test", &d.test}};
    for (const auto& [split, set] : splits) {
      const SampleSet& s = *set;
      files.push_back({{"file", "client" + std::to_string(d.client_id) + "_" + split + ".bin"},
                       {"client", d.client_id},
                       {"cameras", d.num_cameras},
                       {"rows", s.x.rows()},
                       {"cols", s.x.cols()}});
    }
  }
  j["files"] = files;
  return j;
}

}  // namespace fedklpr
