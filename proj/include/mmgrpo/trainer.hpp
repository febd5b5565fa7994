#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmgrpo/groups.hpp"
#include "mmgrpo/objective.hpp"
#include "mmgrpo/program.hpp"

namespace mmgrpo {

// A frozen rollout source structurally identical to the student: same module
// count and per-position shapes, possibly different prompt templates or
// parameters. Trace module ids are remapped onto the student's by position.
struct TeacherSpec {
  std::string id;
  ProgramSpec program;
  PolicyBank bank;
  int rollouts_per_example = 0;
};

enum class EvalMode { exact, monte_carlo };

struct TrainConfig {
  int steps = 750;
  int first_step = 1;          // > 1 when resuming a run
  int batch_size = 4;
  int student_rollouts = 12;   // rollouts per example drawn from the student
  int group_size = 12;
  double learning_rate = 0.2;
  double weight_decay = 0.0;
  ObjectiveConfig objective;
  PaddingMode padding = PaddingMode::fill;
  double fallback_reward = 0.0;
  std::uint64_t seed = 1;
  int snapshot_cadence = 1;    // refresh the old snapshot every this many steps
  int eval_every = 25;         // 0 disables periodic evaluation
  EvalMode eval_mode = EvalMode::exact;
  int eval_samples = 2000;     // per example, monte_carlo mode only

  void validate(int total_teacher_rollouts) const;
};

struct GroupMetricsRow {
  int step = 0;
  GroupKey key;
  double objective = 0.0;
  double mean_abs_advantage = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

struct StepMetricsRow {
  int step = 0;
  double mean_rollout_reward = 0.0;
  int rollouts = 0;
  int groups = 0;
  std::optional<double> eval_reward;
};

struct TrainHooks {
  // Called after each step; return false to stop early (state stays valid).
  std::function<bool(const StepMetricsRow&, const PolicyBank& current)> on_step;
  std::function<void(const GroupMetricsRow&)> on_group;
};

struct TrainResult {
  PolicyBank bank;
  PolicyBank reference_bank;  // the run's KL reference, as the loop left it
  std::vector<StepMetricsRow> step_metrics;
  std::vector<GroupMetricsRow> group_metrics;
  double final_eval_reward = 0.0;
  int last_step = 0;
};

// Rollouts for one example from the student plus every teacher, in teacher
// order. Teacher traces come back keyed by student module ids.
std::vector<RolloutRecord> sample_teacher_rollouts(
    const ProgramSpec& student_program, const PolicyBank& student_bank, int student_rollouts,
    std::span<const TeacherSpec> teachers, const StructuredValue& x, int program_input_id,
    std::uint64_t stream_seed);

// Throws if the teacher's module structure cannot stand in for the student's.
void validate_teacher(const ProgramSpec& student_program, const TeacherSpec& teacher);

// The full training loop: per step, draw a batch, roll out the teacher
// mixture per example, form module-level groups and apply one gradient
// ascent update per group (deterministic key order). The old snapshot
// refreshes on its cadence; the reference never moves.
TrainResult train(const ProgramSpec& program, SnapshotSet student,
                  std::span<const TeacherSpec> teachers, std::span<const DatasetExample> dataset,
                  const RewardFn& reward_fn, const TrainConfig& cfg,
                  const TrainHooks* hooks = nullptr);

// Staged composition: same loop, student initialized from a pre-optimized
// bank (which also becomes the KL reference).
TrainResult better_together(const ProgramSpec& program, const PolicyBank& pre_optimized_bank,
                            std::span<const TeacherSpec> teachers,
                            std::span<const DatasetExample> dataset, const RewardFn& reward_fn,
                            const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

// Mean expected reward over the dataset under the given bank, exact
// (enumeration) or sampled depending on cfg.
double evaluate_bank(const ProgramSpec& program, const PolicyBank& bank,
                     std::span<const DatasetExample> dataset, const RewardFn& reward_fn,
                     const TrainConfig& cfg);

}  // namespace mmgrpo
