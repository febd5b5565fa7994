#include "mmgrpo/io.hpp"

#include <chrono>
#include <cinttypes>
#include <ctime>
#include <set>
#include <sstream>

namespace mmgrpo {

using nlohmann::json;

namespace {

std::string type_name(const json& j) { return j.type_name(); }

const json& require_field(const json& obj, const std::string& section, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ConfigError("config error at " + (section.empty() ? key : section + "." + key) +
                      ": missing required field");
  return *it;
}

template <typename T>
T field_as(const json& obj, const std::string& section, const std::string& key) {
  try {
    return require_field(obj, section, key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config error at " + (section.empty() ? key : section + "." + key) +
                      ": wrong type (found " + type_name(obj.at(key)) + ")");
  }
}

template <typename T>
T field_or(const json& obj, const std::string& section, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return field_as<T>(obj, section, key);
}

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config error at " + (section.empty() ? it.key() : section + "." + it.key()) +
                        ": unknown field");
}

}  // namespace

RunConfig parse_run_config(const json& config) {
  if (!config.is_object()) throw ConfigError("config error: top level must be an object");
  reject_unknown_keys(config, "",
                      {"version", "env", "policy", "train", "teachers", "stage", "init_bank"});
  const int version = field_as<int>(config, "", "version");
  if (version != 1)
    throw ConfigError("config error at version: unsupported schema version " +
                      std::to_string(version));

  RunConfig rc;
  rc.raw = config;

  const json& env = require_field(config, "", "env");
  reject_unknown_keys(env, "env",
                      {"name", "vocab", "chain_len", "hops", "out_len", "dataset_size",
                       "dataset_seed"});
  rc.env.name = field_as<std::string>(env, "env", "name");
  rc.env.params.vocab = field_or<int>(env, "env", "vocab", rc.env.params.vocab);
  rc.env.params.chain_len = field_or<int>(env, "env", "chain_len", rc.env.params.chain_len);
  rc.env.params.hops = field_or<int>(env, "env", "hops", rc.env.params.hops);
  rc.env.params.out_len = field_or<int>(env, "env", "out_len", rc.env.params.out_len);
  rc.env.params.dataset_size =
      field_or<int>(env, "env", "dataset_size", rc.env.params.dataset_size);
  rc.env.params.dataset_seed =
      field_or<std::uint64_t>(env, "env", "dataset_seed", rc.env.params.dataset_seed);

  if (config.contains("policy")) {
    const json& pol = config.at("policy");
    reject_unknown_keys(pol, "policy", {"context_window", "kind", "hidden_size", "share_all"});
    rc.policy.context_window = field_or<int>(pol, "policy", "context_window", 2);
    rc.policy.hidden_size = field_or<int>(pol, "policy", "hidden_size", 16);
    rc.policy.share_all = field_or<bool>(pol, "policy", "share_all", false);
    if (pol.contains("kind")) {
      try {
        rc.policy.kind = policy_kind_from_string(field_as<std::string>(pol, "policy", "kind"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config error at policy.kind: ") + e.what());
      }
    }
  }

  const json& train = require_field(config, "", "train");
  reject_unknown_keys(train, "train",
                      {"steps", "batch_size", "student_rollouts", "group_size", "learning_rate",
                       "weight_decay", "clip_epsilon", "kl_beta", "advantage_eps",
                       "length_normalize", "kl_mode", "padding_mode", "fallback_reward", "seed",
                       "snapshot_cadence", "eval_every", "eval_mode", "eval_samples",
                       "padding_duplicate_weight"});
  TrainConfig& tc = rc.train;
  tc.group_size = field_as<int>(train, "train", "group_size");
  tc.steps = field_or<int>(train, "train", "steps", tc.steps);
  tc.batch_size = field_or<int>(train, "train", "batch_size", tc.batch_size);
  tc.student_rollouts = field_or<int>(train, "train", "student_rollouts", tc.student_rollouts);
  tc.learning_rate = field_or<double>(train, "train", "learning_rate", tc.learning_rate);
  tc.weight_decay = field_or<double>(train, "train", "weight_decay", tc.weight_decay);
  tc.objective.clip_epsilon =
      field_or<double>(train, "train", "clip_epsilon", tc.objective.clip_epsilon);
  tc.objective.kl_beta = field_or<double>(train, "train", "kl_beta", tc.objective.kl_beta);
  tc.objective.advantage_eps =
      field_or<double>(train, "train", "advantage_eps", tc.objective.advantage_eps);
  tc.objective.length_normalize =
      field_or<bool>(train, "train", "length_normalize", tc.objective.length_normalize);
  tc.objective.padding_duplicate_weight = field_or<double>(
      train, "train", "padding_duplicate_weight", tc.objective.padding_duplicate_weight);
  tc.fallback_reward = field_or<double>(train, "train", "fallback_reward", tc.fallback_reward);
  tc.seed = field_or<std::uint64_t>(train, "train", "seed", tc.seed);
  tc.snapshot_cadence = field_or<int>(train, "train", "snapshot_cadence", tc.snapshot_cadence);
  tc.eval_every = field_or<int>(train, "train", "eval_every", tc.eval_every);
  tc.eval_samples = field_or<int>(train, "train", "eval_samples", tc.eval_samples);
  try {
    if (train.contains("kl_mode"))
      tc.objective.kl_mode = kl_mode_from_string(field_as<std::string>(train, "train", "kl_mode"));
    if (train.contains("padding_mode"))
      tc.padding = padding_mode_from_string(field_as<std::string>(train, "train", "padding_mode"));
    if (train.contains("eval_mode")) {
      const std::string mode = field_as<std::string>(train, "train", "eval_mode");
      if (mode == "exact")
        tc.eval_mode = EvalMode::exact;
      else if (mode == "monte_carlo")
        tc.eval_mode = EvalMode::monte_carlo;
      else
        throw std::invalid_argument("unknown eval mode: " + mode);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config error in train: ") + e.what());
  }

  if (config.contains("teachers")) {
    const json& teachers = config.at("teachers");
    if (!teachers.is_array()) throw ConfigError("config error at teachers: expected an array");
    for (std::size_t i = 0; i < teachers.size(); ++i) {
      const std::string section = "teachers[" + std::to_string(i) + "]";
      const json& t = teachers.at(i);
      reject_unknown_keys(t, section, {"id", "checkpoint", "rollouts"});
      TeacherFileSpec spec;
      spec.id = field_as<std::string>(t, section, "id");
      spec.checkpoint = field_as<std::string>(t, section, "checkpoint");
      spec.rollouts = field_or<int>(t, section, "rollouts", 0);
      rc.teachers.push_back(std::move(spec));
    }
  }

  rc.stage = field_or<std::string>(config, "", "stage", std::string("plain"));
  if (rc.stage != "plain" && rc.stage != "better-together")
    throw ConfigError("config error at stage: must be \"plain\" or \"better-together\"");
  rc.init_bank = field_or<std::string>(config, "", "init_bank", std::string());
  if (rc.stage == "better-together" && rc.init_bank.empty())
    throw ConfigError("config error at init_bank: required when stage is \"better-together\"");

  int teacher_rollouts = 0;
  for (const TeacherFileSpec& t : rc.teachers) teacher_rollouts += t.rollouts;
  try {
    rc.train.validate(teacher_rollouts);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config error in train: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json config;
  try {
    in >> config;
  } catch (const json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
  return parse_run_config(config);
}

std::string canonical_config_text(const json& config) { return config.dump(); }

std::string config_hash_hex(const json& config) {
  const std::string text = canonical_config_text(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return std::string(buf);
}

std::string format_double(double value) { return json(value).dump(); }

// --- checkpoints ------------------------------------------------------------

namespace {
constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "mmgrpo-checkpoint";
}  // namespace

void save_checkpoint(const std::string& path, const PolicyBank& bank) {
  json slots = json::array();
  for (std::size_t i = 0; i < bank.slot_count(); ++i) {
    const ModulePolicy& p = bank.slot(i);
    json slot{{"name", p.name()},
              {"kind", to_string(p.kind())},
              {"vocab_size", p.vocab_size()},
              {"context_window", p.context_window()},
              {"hidden_size", p.hidden_size()},
              {"params", std::vector<double>(p.params().begin(), p.params().end())}};
    if (p.eos_token())
      slot["eos_token"] = *p.eos_token();
    else
      slot["eos_token"] = nullptr;
    slots.push_back(std::move(slot));
  }
  json modules = json::object();
  for (const auto& [id, slot] : bank.sharing_map()) modules[id] = slot;
  const json doc{{"format", kCheckpointFormat},
                 {"version", kCheckpointVersion},
                 {"slots", std::move(slots)},
                 {"modules", std::move(modules)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

PolicyBank load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint parse failure in " + path + ": " + e.what());
  }
  if (doc.value("format", std::string()) != kCheckpointFormat)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (doc.value("version", -1) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path + ": expected " +
                             std::to_string(kCheckpointVersion));

  const json& slots = doc.at("slots");
  std::vector<std::vector<std::string>> ids_per_slot(slots.size());
  for (const auto& [id, slot] : doc.at("modules").items()) {
    const std::size_t s = slot.get<std::size_t>();
    if (s >= slots.size()) throw std::runtime_error("checkpoint module '" + id + "' references missing slot");
    ids_per_slot[s].push_back(id);
  }
  PolicyBank bank;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const json& s = slots.at(i);
    std::optional<int> eos;
    if (!s.at("eos_token").is_null()) eos = s.at("eos_token").get<int>();
    ModulePolicy policy = rebuild_policy(
        s.at("name").get<std::string>(), policy_kind_from_string(s.at("kind").get<std::string>()),
        s.at("vocab_size").get<int>(), s.at("context_window").get<int>(),
        s.at("hidden_size").get<int>(), eos, s.at("params").get<std::vector<double>>());
    if (ids_per_slot[i].empty())
      throw std::runtime_error("checkpoint slot " + std::to_string(i) + " has no modules");
    bank.add_policy(std::move(policy), ids_per_slot[i]);
  }
  return bank;
}

// --- trajectory logs ---------------------------------------------------------

std::string trajectory_record_line(const Trajectory& trajectory, std::optional<double> reward) {
  json traces = json::array();
  for (const Trace& t : trajectory.traces)
    traces.push_back(json{{"module", t.module_id}, {"prompt", t.prompt}, {"output", t.output}});
  json record{{"program_input_id", trajectory.program_input_id},
              {"status", to_string(trajectory.status)},
              {"traces", std::move(traces)}};
  record["reward"] = reward ? json(*reward) : json(nullptr);
  if (trajectory.final_output) record["final_output"] = *trajectory.final_output;
  return record.dump();
}

TrajectoryLogRecord parse_trajectory_record(const std::string& line, std::size_t line_number) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error("trajectory log line " + std::to_string(line_number) +
                             ": parse failure: " + e.what());
  }
  try {
    TrajectoryLogRecord out;
    out.trajectory.program_input_id = record.at("program_input_id").get<int>();
    out.trajectory.status = traj_status_from_string(record.at("status").get<std::string>());
    if (record.contains("final_output"))
      out.trajectory.final_output = record.at("final_output").get<StructuredValue>();
    if (!record.at("reward").is_null()) out.reward = record.at("reward").get<double>();
    int index = 0;
    for (const json& t : record.at("traces")) {
      Trace trace;
      trace.module_id = t.at("module").get<std::string>();
      trace.prompt = t.at("prompt").get<TokenSeq>();
      trace.output = t.at("output").get<TokenSeq>();
      trace.invocation_index_global = index++;
      out.trajectory.traces.push_back(std::move(trace));
    }
    if (out.trajectory.complete() != out.trajectory.final_output.has_value())
      throw std::runtime_error("status/final_output mismatch");
    return out;
  } catch (const std::exception& e) {
    throw std::runtime_error("trajectory log line " + std::to_string(line_number) + ": " +
                             e.what());
  }
}

std::vector<TrajectoryLogRecord> load_trajectory_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory log: " + path);
  std::vector<TrajectoryLogRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_trajectory_record(line, line_number));
  }
  return records;
}

// --- metrics -----------------------------------------------------------------

MetricsWriter::MetricsWriter(const std::string& groups_csv_path, const std::string& steps_csv_path,
                             bool append) {
  const auto mode = append ? std::ios::app : std::ios::trunc;
  groups_.open(groups_csv_path, mode);
  steps_.open(steps_csv_path, mode);
  if (!groups_ || !steps_)
    throw std::runtime_error("cannot open metrics files: " + groups_csv_path + ", " +
                             steps_csv_path);
  if (!append) {
    groups_ << "step,group,objective,mean_abs_advantage,clip_fraction,mean_kl\n";
    steps_ << "step,mean_rollout_reward,rollouts,groups,eval_reward\n";
  }
}

void MetricsWriter::write_group(const GroupMetricsRow& row) {
  groups_ << row.step << ',' << to_string(row.key) << ',' << format_double(row.objective) << ','
          << format_double(row.mean_abs_advantage) << ',' << format_double(row.clip_fraction)
          << ',' << format_double(row.mean_kl) << '\n';
}

void MetricsWriter::write_step(const StepMetricsRow& row) {
  steps_ << row.step << ',' << format_double(row.mean_rollout_reward) << ',' << row.rollouts << ','
         << row.groups << ',' << (row.eval_reward ? format_double(*row.eval_reward) : std::string())
         << '\n';
}

void MetricsWriter::flush() {
  groups_.flush();
  steps_.flush();
}

// --- manifest ------------------------------------------------------------------

void save_manifest(const std::string& path, const RunManifest& manifest) {
  const json doc{{"config_hash", manifest.config_hash},
                 {"seed", manifest.seed},
                 {"environment", manifest.environment},
                 {"started_at", manifest.started_at},
                 {"finished_at", manifest.finished_at},
                 {"checkpoint", manifest.checkpoint_path},
                 {"metrics", manifest.metrics_path},
                 {"steps", manifest.steps_path},
                 {"last_step", manifest.last_step},
                 {"status", manifest.status}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << doc.dump(2) << "\n";
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  json doc;
  in >> doc;
  RunManifest m;
  m.config_hash = doc.at("config_hash").get<std::string>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.environment = doc.at("environment").get<std::string>();
  m.started_at = doc.at("started_at").get<std::string>();
  m.finished_at = doc.at("finished_at").get<std::string>();
  m.checkpoint_path = doc.at("checkpoint").get<std::string>();
  m.metrics_path = doc.at("metrics").get<std::string>();
  m.steps_path = doc.at("steps").get<std::string>();
  m.last_step = doc.at("last_step").get<int>();
  m.status = doc.at("status").get<std::string>();
  return m;
}

std::string iso_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return std::string(buf);
}

}  // namespace mmgrpo
