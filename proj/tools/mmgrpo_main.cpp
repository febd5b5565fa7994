#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mmgrpo/envs.hpp"
#include "mmgrpo/io.hpp"
#include "mmgrpo/log.hpp"
#include "mmgrpo/oracle.hpp"
#include "mmgrpo/rollout.hpp"
#include "mmgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmgrpo;

namespace {

std::atomic<bool> g_interrupted{false};

void handle_sigint(int) { g_interrupted.store(true); }

struct TrainCliArgs {
  std::string config_path;
  std::string out_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> stage;
  std::optional<std::string> init_bank;
  bool resume = false;
  int halt_after = 0;  // stop after N steps as if interrupted (0 = never)
};

// CLI overrides are folded into the raw config before hashing so a run's
// manifest identifies the effective configuration.
nlohmann::json effective_config(const TrainCliArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) throw ConfigError("cannot open config file: " + args.config_path);
  nlohmann::json raw;
  try {
    in >> raw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse failure in " + args.config_path + ": " + e.what());
  }
  if (args.seed) raw["train"]["seed"] = *args.seed;
  if (args.steps) raw["train"]["steps"] = *args.steps;
  if (args.stage) raw["stage"] = *args.stage;
  if (args.init_bank) raw["init_bank"] = *args.init_bank;
  return raw;
}

std::vector<TeacherSpec> load_teachers(const RunConfig& rc, const ProgramSpec& program) {
  std::vector<TeacherSpec> teachers;
  for (const TeacherFileSpec& t : rc.teachers) {
    TeacherSpec spec;
    spec.id = t.id;
    spec.program = program;
    spec.bank = load_checkpoint(t.checkpoint);
    spec.rollouts_per_example = t.rollouts;
    teachers.push_back(std::move(spec));
  }
  return teachers;
}

int run_train(const TrainCliArgs& args) {
  const nlohmann::json raw = effective_config(args);
  RunConfig rc = parse_run_config(raw);
  const std::string hash = config_hash_hex(raw);

  BuiltinEnv env = make_builtin_env(rc.env.name, rc.env.params);
  fs::create_directories(args.out_dir);
  const std::string manifest_path = args.out_dir + "/manifest.json";
  const std::string checkpoint_path = args.out_dir + "/checkpoint.json";
  const std::string reference_path = args.out_dir + "/reference.json";
  const std::string metrics_path = args.out_dir + "/metrics.csv";
  const std::string steps_path = args.out_dir + "/steps.csv";

  SnapshotSet snapshots;
  if (args.resume) {
    const RunManifest previous = load_manifest(manifest_path);
    if (previous.config_hash != hash) {
      std::cerr << "error: config hash " << hash << " does not match the interrupted run ("
                << previous.config_hash << ")\n";
      return 1;
    }
    rc.train.first_step = previous.last_step + 1;
    // The KL reference is the run-start bank, not the interrupted state.
    snapshots.current = load_checkpoint(checkpoint_path);
    snapshots.old_policy = snapshots.current;
    snapshots.reference = load_checkpoint(reference_path);
  } else {
    PolicyBank initial;
    if (!rc.init_bank.empty()) {
      initial = load_checkpoint(rc.init_bank);
    } else {
      initial = make_uniform_bank(env.program, rc.policy.context_window, rc.policy.kind,
                                  rc.policy.hidden_size, rc.policy.share_all);
    }
    save_checkpoint(reference_path, initial);
    snapshots = make_snapshots(std::move(initial));
  }

  const std::vector<TeacherSpec> teachers = load_teachers(rc, env.program);

  RunManifest manifest;
  manifest.config_hash = hash;
  manifest.seed = rc.train.seed;
  manifest.environment = env.name;
  manifest.started_at = iso_timestamp_now();
  manifest.checkpoint_path = checkpoint_path;
  manifest.metrics_path = metrics_path;
  manifest.steps_path = steps_path;
  manifest.status = "interrupted";

  MetricsWriter metrics(metrics_path, steps_path, args.resume);
  std::signal(SIGINT, handle_sigint);

  TrainHooks hooks;
  hooks.on_group = [&](const GroupMetricsRow& row) { metrics.write_group(row); };
  hooks.on_step = [&](const StepMetricsRow& row, const PolicyBank& bank) {
    metrics.write_step(row);
    std::ostringstream progress;
    progress << "step " << row.step << " reward " << format_double(row.mean_rollout_reward);
    if (row.eval_reward) progress << " eval " << format_double(*row.eval_reward);
    log_debug(progress.str());
    manifest.last_step = row.step;
    const bool stop =
        g_interrupted.load() || (args.halt_after > 0 && row.step >= args.halt_after);
    if (stop) {
      // Flush a resumable state before bailing out.
      save_checkpoint(checkpoint_path, bank);
      manifest.finished_at = iso_timestamp_now();
      save_manifest(manifest_path, manifest);
      metrics.flush();
    }
    return !stop;
  };

  const TrainResult result =
      train(env.program, std::move(snapshots), teachers, env.dataset, env.reward, rc.train, &hooks);

  save_checkpoint(checkpoint_path, result.bank);
  manifest.last_step = result.last_step;
  manifest.finished_at = iso_timestamp_now();
  manifest.status = result.last_step >= rc.train.steps && !g_interrupted.load() ? "complete"
                                                                                : "interrupted";
  save_manifest(manifest_path, manifest);
  metrics.flush();

  std::cout << "environment " << env.name << "; final eval reward "
            << format_double(result.final_eval_reward) << " (optimum "
            << format_double(env.optimal_expected_reward) << ")\n"
            << "wrote " << checkpoint_path << ", " << metrics_path << ", " << steps_path << "\n";
  return g_interrupted.load() ? 130 : 0;
}

int run_rollout(const std::string& config_path, const std::string& checkpoint_path, int count,
                const std::string& out_path, std::optional<int> input_id,
                std::uint64_t sample_seed) {
  const RunConfig rc = load_run_config(config_path);
  const BuiltinEnv env = make_builtin_env(rc.env.name, rc.env.params);
  const PolicyBank bank = load_checkpoint(checkpoint_path);
  for (const ModuleSpec& m : env.program.modules) {
    if (!bank.contains(m.module_id))
      throw std::runtime_error("checkpoint does not cover module '" + m.module_id + "'");
    if (bank.policy_for(m.module_id).vocab_size() != m.vocab_size)
      throw std::runtime_error("checkpoint vocabulary mismatch for module '" + m.module_id + "'");
  }

  std::vector<RolloutPlan> plans;
  plans.reserve(count);
  std::vector<int> example_ids(count);
  for (int i = 0; i < count; ++i) {
    example_ids[i] = input_id ? *input_id : i % static_cast<int>(env.dataset.size());
    plans.push_back({&env.program, &bank, &env.dataset[example_ids[i]].input, example_ids[i],
                     "student", derive_seed(sample_seed, 0x5011, i)});
  }
  const std::vector<RolloutRecord> records = collect_rollouts(plans);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write trajectory log: " + out_path);
  for (int i = 0; i < count; ++i) {
    const Trajectory& traj = records[i].trajectory;
    std::optional<double> reward;
    if (traj.complete())
      reward = env.reward(*traj.final_output, traj, env.dataset[example_ids[i]].metadata);
    out << trajectory_record_line(traj, reward) << "\n";
  }
  std::cout << "wrote " << count << " trajectories to " << out_path << "\n";
  return 0;
}

int run_inspect_groups(const std::string& log_path, int group_size, const std::string& padding,
                       double fallback_reward, const std::string& out_path) {
  const std::vector<TrajectoryLogRecord> records = load_trajectory_log(log_path);
  const PaddingMode mode = padding_mode_from_string(padding);

  // One meta-group per program input id, in order of first appearance.
  std::vector<int> input_order;
  std::map<int, std::vector<TrajectoryLogRecord>> by_input;
  for (const TrajectoryLogRecord& r : records) {
    if (!by_input.count(r.trajectory.program_input_id))
      input_order.push_back(r.trajectory.program_input_id);
    by_input[r.trajectory.program_input_id].push_back(r);
  }

  std::ofstream dump;
  if (!out_path.empty()) {
    dump.open(out_path);
    if (!dump) throw std::runtime_error("cannot write group dump: " + out_path);
  }

  for (int input : input_order) {
    const std::vector<TrajectoryLogRecord>& metas = by_input[input];
    std::vector<RolloutRecord> rollouts;
    std::vector<double> rewards;
    for (const TrajectoryLogRecord& r : metas) {
      rollouts.push_back({r.trajectory, "log"});
      rewards.push_back(r.reward.value_or(fallback_reward));
    }
    const std::vector<GrpoGroup> pre = align_module_groups(rollouts, rewards);
    std::map<GroupKey, std::size_t> pre_sizes;
    for (const GrpoGroup& g : pre) pre_sizes[g.key] = g.items.size();
    const GroupBuildResult built = form_groups_from_scored(rollouts, rewards, group_size, mode);

    std::cout << "input " << input << ": " << rollouts.size() << " rollouts, " << pre.size()
              << " groups pre-padding, " << built.groups.size() << " after " << padding << "\n";
    for (const GrpoGroup& g : built.groups) {
      double mean = 0.0;
      int duplicates = 0;
      for (const GroupItem& item : g.items) {
        mean += item.reward;
        duplicates += item.is_padding_duplicate ? 1 : 0;
      }
      mean /= static_cast<double>(g.items.size());
      double var = 0.0;
      for (const GroupItem& item : g.items) var += (item.reward - mean) * (item.reward - mean);
      var /= static_cast<double>(g.items.size());
      std::cout << "  " << to_string(g.key) << ": pre=" << pre_sizes[g.key]
                << " post=" << g.items.size() << " reward_mean=" << format_double(mean)
                << " reward_var=" << format_double(var) << " padding_duplicates=" << duplicates
                << "\n";
      if (dump.is_open()) {
        nlohmann::json rewards_json = nlohmann::json::array();
        nlohmann::json flags_json = nlohmann::json::array();
        for (const GroupItem& item : g.items) {
          rewards_json.push_back(item.reward);
          flags_json.push_back(item.is_padding_duplicate);
        }
        dump << nlohmann::json{{"input", input},
                               {"key", to_string(g.key)},
                               {"item_count", g.items.size()},
                               {"rewards", std::move(rewards_json)},
                               {"padding_flags", std::move(flags_json)}}
                    .dump()
             << "\n";
      }
    }
  }
  if (records.empty()) std::cout << "empty log: no groups\n";
  return 0;
}

int run_verify(double mutate_gradient) {
  const OracleReport report = run_verification_suite(mutate_gradient);
  for (const OracleCase& c : report.cases) {
    std::printf("[%s] %-28s %7.2fs  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds,
                c.detail.c_str());
  }
  return report.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group-relative policy optimization for multi-module token programs"};
  app.require_subcommand(1);

  TrainCliArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "run a training loop from a config file");
  train_cmd->add_option("--config", train_args.config_path, "config file (json, schema v1)")
      ->required();
  train_cmd->add_option("--out", train_args.out_dir, "output directory");
  train_cmd->add_option("--seed", train_args.seed, "override train.seed");
  train_cmd->add_option("--steps", train_args.steps, "override train.steps");
  train_cmd->add_option("--stage", train_args.stage, "override stage (plain|better-together)");
  train_cmd->add_option("--init-bank", train_args.init_bank, "checkpoint to initialize from");
  train_cmd->add_flag("--resume", train_args.resume, "continue an interrupted run in --out");
  train_cmd->add_option("--halt-after", train_args.halt_after,
                        "stop after this step with resumable state (as if interrupted)");

  std::string ro_config, ro_checkpoint, ro_out = "trajectories.jsonl";
  int ro_count = 10;
  std::optional<int> ro_input_id;
  std::uint64_t ro_seed = 0;
  CLI::App* rollout_cmd = app.add_subcommand("rollout", "sample trajectories under a checkpoint");
  rollout_cmd->add_option("--config", ro_config, "config file")->required();
  rollout_cmd->add_option("--checkpoint", ro_checkpoint, "policy checkpoint")->required();
  rollout_cmd->add_option("-n,--count", ro_count, "number of trajectories");
  rollout_cmd->add_option("--out", ro_out, "output log path");
  rollout_cmd->add_option("--input-id", ro_input_id, "fix the dataset example");
  rollout_cmd->add_option("--seed", ro_seed, "sampling seed");

  std::string ig_log, ig_padding = "fill", ig_out;
  int ig_group_size = 0;
  double ig_fallback = 0.0;
  CLI::App* inspect_cmd =
      app.add_subcommand("inspect-groups", "form module-level groups from a trajectory log");
  inspect_cmd->add_option("--log", ig_log, "trajectory log (jsonl)")->required();
  inspect_cmd->add_option("--group-size", ig_group_size, "target group size G")->required();
  inspect_cmd->add_option("--padding", ig_padding, "truncate|fill");
  inspect_cmd->add_option("--fallback-reward", ig_fallback, "reward for incomplete trajectories");
  inspect_cmd->add_option("--out", ig_out, "write group dump records (jsonl)");

  double verify_mutate = 0.0;
  CLI::App* verify_cmd = app.add_subcommand("verify", "run the brute-force verification suite");
  verify_cmd->add_option("--mutate-gradient", verify_mutate,
                         "perturb one analytic gradient coordinate (harness self-test)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (rollout_cmd->parsed())
      return run_rollout(ro_config, ro_checkpoint, ro_count, ro_out, ro_input_id, ro_seed);
    if (inspect_cmd->parsed())
      return run_inspect_groups(ig_log, ig_group_size, ig_padding, ig_fallback, ig_out);
    if (verify_cmd->parsed()) return run_verify(verify_mutate);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
