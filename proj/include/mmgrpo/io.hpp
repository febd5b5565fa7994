#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmgrpo/envs.hpp"
#include "mmgrpo/trainer.hpp"

namespace mmgrpo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EnvSelection {
  std::string name;
  EnvParams params;
};

struct PolicySetup {
  int context_window = 2;
  PolicyKind kind = PolicyKind::table;
  int hidden_size = 16;
  bool share_all = false;
};

struct TeacherFileSpec {
  std::string id;
  std::string checkpoint;
  int rollouts = 0;
};

// Parsed and validated run configuration (schema version 1).
struct RunConfig {
  EnvSelection env;
  PolicySetup policy;
  TrainConfig train;
  std::vector<TeacherFileSpec> teachers;
  std::string stage = "plain";  // "plain" | "better-together"
  std::string init_bank;        // checkpoint path; required for better-together
  nlohmann::json raw;
};

// Throws ConfigError naming the offending field (dotted path) on any
// missing, unknown, or ill-typed entry.
RunConfig parse_run_config(const nlohmann::json& config);
RunConfig load_run_config(const std::string& path);

// Canonical text: parsed JSON re-serialized with sorted keys, so key order
// in the source file cannot change the hash.
std::string canonical_config_text(const nlohmann::json& config);
std::string config_hash_hex(const nlohmann::json& config);

// Shortest representation that parses back to the identical double.
std::string format_double(double value);

// --- checkpoints (versioned, bit-exact round trip) -------------------------

void save_checkpoint(const std::string& path, const PolicyBank& bank);
PolicyBank load_checkpoint(const std::string& path);

// --- line-delimited trajectory logs ----------------------------------------

struct TrajectoryLogRecord {
  Trajectory trajectory;
  std::optional<double> reward;  // absent for incomplete trajectories
};

std::string trajectory_record_line(const Trajectory& trajectory, std::optional<double> reward);
TrajectoryLogRecord parse_trajectory_record(const std::string& line, std::size_t line_number);
std::vector<TrajectoryLogRecord> load_trajectory_log(const std::string& path);

// --- metrics (append-only CSV) ----------------------------------------------

class MetricsWriter {
 public:
  MetricsWriter(const std::string& groups_csv_path, const std::string& steps_csv_path,
                bool append = false);
  void write_group(const GroupMetricsRow& row);
  void write_step(const StepMetricsRow& row);
  void flush();

 private:
  std::ofstream groups_;
  std::ofstream steps_;
};

// --- run manifest -----------------------------------------------------------

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string environment;
  std::string started_at;
  std::string finished_at;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string steps_path;
  int last_step = 0;
  std::string status;  // "complete" | "interrupted"
};

void save_manifest(const std::string& path, const RunManifest& manifest);
RunManifest load_manifest(const std::string& path);

std::string iso_timestamp_now();

}  // namespace mmgrpo
