#pragma once

// CSV metric rows plus a JSON summary sidecar.

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "remax/errors.hpp"
#include "remax/harness.hpp"

namespace remax::harness {

inline constexpr const char* kCsvHeader = "episode,init_source,success,return_mean,consec_successes,wall_ms";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_row(const MetricRow& r) {
  return std::to_string(r.episode) + ',' + r.init_source + ',' + (r.success ? "1" : "0") + ',' +
         format_double(r.return_mean) + ',' + std::to_string(r.consec_successes) + ',' + format_double(r.wall_ms);
}

inline nlohmann::ordered_json summary_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["env"] = s.env;
  j["explorer"] = s.explorer;
  j["budget"] = s.budget;
  if (s.completion_episode)
    j["completion_episode"] = *s.completion_episode;
  else
    j["completion_episode"] = "DNF";
  j["episodes_run"] = s.episodes_run;
  j["eval_episodes"] = s.eval_episodes;
  j["refreshes"] = s.refreshes;
  j["env_steps"] = s.env_steps;
  j["generated_starts"] = s.generated_starts;
  j["mean_return"] = s.mean_return;
  if (s.occupation_rate) j["occupation_rate"] = *s.occupation_rate;
  return j;
}

inline std::string summary_path(const std::string& csv_path) { return csv_path + ".summary.json"; }

// Writes `path` (CSV) and `path`.summary.json.
inline void write_metrics(const RunMetrics& m, const std::string& path) {
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write metrics: " + path);
    os << kCsvHeader << '\n';
    for (const auto& r : m.rows) os << format_row(r) << '\n';
    if (!os) throw IoError("failed writing metrics: " + path);
  }
  std::ofstream js(summary_path(path), std::ios::binary);
  if (!js) throw IoError("cannot write metrics summary: " + summary_path(path));
  js << summary_json(m.summary).dump(2) << '\n';
}

inline std::vector<MetricRow> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read metrics: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw IoError("unexpected metrics header in " + path);
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw IoError("malformed metrics row in " + path + ": " + line);
    MetricRow r;
    r.episode = std::stoi(f[0]);
    r.init_source = f[1];
    r.success = f[2] == "1";
    r.return_mean = std::strtod(f[3].c_str(), nullptr);
    r.consec_successes = std::stoi(f[4]);
    r.wall_ms = std::strtod(f[5].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace remax::harness
