#pragma once

// Per-run manifest: resolved config, seed, version, the files each stage
// wrote with their SHA-256 digests, and a status. Wall-clock times go to a
// separate timing.json so that run.json stays byte-reproducible.

#include "scorelab/experiment/io.hpp"

#include <chrono>
#include <ctime>
#include <set>

#ifndef SCORELAB_VERSION
#define SCORELAB_VERSION "0.0.0-dev"
#endif

namespace scorelab::experiment {

inline constexpr const char* kRunFile = "run.json";
inline constexpr const char* kTimingFile = "timing.json";

struct OutputRef {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct StageRecord {
  std::string name;
  std::vector<OutputRef> outputs;
};

struct RunRecord {
  std::string command;
  Json config;
  std::uint64_t seed = 0;
  std::string version = SCORELAB_VERSION;
  std::vector<StageRecord> stages;
  std::string status = "running";
};

inline Json to_json(const RunRecord& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    Json outs = Json::array();
    for (const auto& o : s.outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}});
    stages.push_back({{"name", s.name}, {"outputs", outs}});
  }
  return {{"command", r.command}, {"version", r.version}, {"seed", r.seed}, {"status", r.status},
          {"config", r.config},   {"stages", stages}};
}

inline RunRecord run_record_from_json(const Json& j) {
  RunRecord r;
  try {
    r.command = j.at("command").get<std::string>();
    r.version = j.at("version").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.config = j.at("config");
    for (const auto& s : j.at("stages")) {
      StageRecord st{s.at("name").get<std::string>(), {}};
      for (const auto& o : s.at("outputs"))
        st.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
      r.stages.push_back(std::move(st));
    }
  } catch (const Json::exception& e) {
    throw MissingInput(std::string("run.json: ") + e.what());
  }
  return r;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Collects the files a command writes and seals them into run.json. Stages
/// recorded by earlier commands in the same directory are kept unless this
/// command writes a stage of the same name.
class RunWriter {
 public:
  RunWriter(fs::path dir, std::string command, const Config& config)
      : dir_(std::move(dir)), started_(utc_now()) {
    fs::create_directories(dir_);
    if (fs::exists(dir_ / kRunFile)) {
      try {
        record_.stages = run_record_from_json(read_json(dir_ / kRunFile)).stages;
      } catch (const Error&) {
        record_.stages.clear();
      }
    }
    record_.command = std::move(command);
    record_.config = to_json(config);
    record_.seed = config.seed;
    write_file(dir_ / "config.resolved.yaml", to_yaml(config));
    stage("config").outputs.push_back({"config.resolved.yaml", ""});
  }

  const fs::path& dir() const { return dir_; }

  StageRecord& stage(const std::string& name) {
    const bool fresh = touched_.insert(name).second;
    for (auto& s : record_.stages)
      if (s.name == name) {
        if (fresh) s.outputs.clear();
        return s;
      }
    record_.stages.push_back({name, {}});
    return record_.stages.back();
  }

  /// Registers a file already written under the run directory.
  void add(const std::string& stage_name, const std::string& relative) {
    auto& s = stage(stage_name);
    for (const auto& o : s.outputs)
      if (o.path == relative) return;
    s.outputs.push_back({relative, ""});
  }

  void write(const std::string& stage_name, const std::string& relative, const std::string& content) {
    write_file(dir_ / relative, content);
    add(stage_name, relative);
  }

  void write_json(const std::string& stage_name, const std::string& relative, const Json& j) {
    write(stage_name, relative, j.dump(2) + "\n");
  }

  void write_table(const std::string& stage_name, const std::string& stem, OutputFormat f, const Table& t) {
    experiment::write_table(dir_, stem, f, t);
    add(stage_name, table_filename(stem, f));
  }

  /// Hashes every registered output and writes run.json and timing.json.
  void finish(const std::string& status) {
    record_.status = status;
    for (auto& s : record_.stages)
      for (auto& o : s.outputs) o.sha256 = fs::exists(dir_ / o.path) ? sha256_file(dir_ / o.path) : "missing";
    experiment::write_json(dir_ / kRunFile, to_json(record_));
    experiment::write_json(dir_ / kTimingFile, {{"start", started_}, {"end", utc_now()}});
  }

 private:
  fs::path dir_;
  std::string started_;
  RunRecord record_;
  std::set<std::string> touched_;
};

/// Problems found when re-hashing a run directory; empty when consistent.
inline std::vector<std::string> audit_run(const fs::path& dir) {
  std::vector<std::string> problems;
  const auto rec = run_record_from_json(read_json(dir / kRunFile));
  for (const auto& s : rec.stages)
    for (const auto& o : s.outputs) {
      if (!fs::exists(dir / o.path))
        problems.push_back(o.path + ": missing");
      else if (sha256_file(dir / o.path) != o.sha256)
        problems.push_back(o.path + ": digest mismatch");
    }
  return problems;
}

}  // namespace scorelab::experiment
