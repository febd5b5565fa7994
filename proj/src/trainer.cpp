#include "mmgrpo/trainer.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "mmgrpo/log.hpp"
#include "mmgrpo/oracle.hpp"
#include "mmgrpo/rollout.hpp"

namespace mmgrpo {

void TrainConfig::validate(int total_teacher_rollouts) const {
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (first_step < 1) throw std::invalid_argument("first_step must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  if (student_rollouts < 0) throw std::invalid_argument("student_rollouts must be >= 0");
  if (student_rollouts + total_teacher_rollouts < group_size)
    throw std::invalid_argument("total rollouts per example must be >= group_size");
  if (student_rollouts + total_teacher_rollouts < 1)
    throw std::invalid_argument("at least one rollout per example required");
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (snapshot_cadence < 1) throw std::invalid_argument("snapshot_cadence must be >= 1");
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
  objective.validate();
}

void validate_teacher(const ProgramSpec& student_program, const TeacherSpec& teacher) {
  teacher.program.validate();
  if (teacher.program.modules.size() != student_program.modules.size())
    throw std::invalid_argument("teacher '" + teacher.id + "' has a different module count");
  for (std::size_t i = 0; i < student_program.modules.size(); ++i) {
    const ModuleSpec& s = student_program.modules[i];
    const ModuleSpec& t = teacher.program.modules[i];
    if (t.vocab_size != s.vocab_size || t.max_output_len != s.max_output_len ||
        t.eos_token != s.eos_token)
      throw std::invalid_argument("teacher '" + teacher.id + "' module '" + t.module_id +
                                  "' does not match student module '" + s.module_id + "'");
    if (!teacher.bank.contains(t.module_id))
      throw std::invalid_argument("teacher '" + teacher.id + "' bank missing module '" +
                                  t.module_id + "'");
  }
  if (teacher.rollouts_per_example < 0)
    throw std::invalid_argument("teacher rollout count must be >= 0");
}

std::vector<RolloutRecord> sample_teacher_rollouts(
    const ProgramSpec& student_program, const PolicyBank& student_bank, int student_rollouts,
    std::span<const TeacherSpec> teachers, const StructuredValue& x, int program_input_id,
    std::uint64_t stream_seed) {
  std::vector<RolloutPlan> plans;
  std::uint64_t slot = 0;
  for (int k = 0; k < student_rollouts; ++k)
    plans.push_back({&student_program, &student_bank, &x, program_input_id, "student",
                     derive_seed(stream_seed, 0x601, slot++)});
  for (const TeacherSpec& teacher : teachers)
    for (int k = 0; k < teacher.rollouts_per_example; ++k)
      plans.push_back({&teacher.program, &teacher.bank, &x, program_input_id, teacher.id,
                       derive_seed(stream_seed, 0x601, slot++)});

  std::vector<RolloutRecord> records = collect_rollouts(plans);

  // Teacher trace module ids become the positionally matching student ids.
  for (std::size_t p = 0; p < plans.size(); ++p) {
    if (records[p].teacher_id == "student") continue;
    const ProgramSpec& teacher_program = *plans[p].program;
    std::map<std::string, std::string> rename;
    for (std::size_t i = 0; i < teacher_program.modules.size(); ++i)
      rename[teacher_program.modules[i].module_id] = student_program.modules[i].module_id;
    for (Trace& trace : records[p].trajectory.traces) trace.module_id = rename.at(trace.module_id);
  }
  return records;
}

double evaluate_bank(const ProgramSpec& program, const PolicyBank& bank,
                     std::span<const DatasetExample> dataset, const RewardFn& reward_fn,
                     const TrainConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (cfg.eval_mode == EvalMode::exact) {
      total += enumerate_expected_reward(program, bank, dataset[i], reward_fn, cfg.fallback_reward)
                   .expected_reward;
    } else {
      total += mc_expected_reward(program, bank, dataset[i], reward_fn, cfg.eval_samples,
                                  derive_seed(cfg.seed, 0xE7A1, i), cfg.fallback_reward);
    }
  }
  return total / static_cast<double>(dataset.size());
}

TrainResult train(const ProgramSpec& program, SnapshotSet student,
                  std::span<const TeacherSpec> teachers, std::span<const DatasetExample> dataset,
                  const RewardFn& reward_fn, const TrainConfig& cfg, const TrainHooks* hooks) {
  program.validate();
  if (dataset.empty()) throw std::invalid_argument("dataset must be nonempty");
  int teacher_rollouts = 0;
  for (const TeacherSpec& t : teachers) {
    validate_teacher(program, t);
    teacher_rollouts += t.rollouts_per_example;
  }
  cfg.validate(teacher_rollouts);
  for (const ModuleSpec& m : program.modules)
    if (!student.current.contains(m.module_id))
      throw std::invalid_argument("student bank missing module '" + m.module_id + "'");

  TrainResult result;
  result.last_step = cfg.first_step - 1;

  for (int step = cfg.first_step; step <= cfg.steps; ++step) {
    if ((step - 1) % cfg.snapshot_cadence == 0) snapshot_refresh(student);

    StepMetricsRow step_row;
    step_row.step = step;
    double reward_sum = 0.0;

    Rng batch_rng(derive_seed(cfg.seed, 0xBA7C, step));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t example_ix = batch_rng.next_below(dataset.size());
      const DatasetExample& example = dataset[example_ix];

      const std::vector<RolloutRecord> rollouts = sample_teacher_rollouts(
          program, student.current, cfg.student_rollouts, teachers, example.input,
          static_cast<int>(example_ix), derive_seed(cfg.seed, 0x5A3, step, b));

      const GroupBuildResult built = form_module_level_groups(
          rollouts, reward_fn, example.metadata, cfg.group_size, cfg.padding, cfg.fallback_reward);
      for (double r : built.rollout_rewards) reward_sum += r;
      step_row.rollouts += static_cast<int>(rollouts.size());
      if (built.groups.empty()) {
        log_warn("step " + std::to_string(step) + " example " + std::to_string(example_ix) +
                 " produced no groups; skipping");
        continue;
      }
      step_row.groups += static_cast<int>(built.groups.size());

      for (const GrpoGroup& group : built.groups) {
        const GroupLossReport report = group_objective(group, student, cfg.objective);
        ModulePolicy& target = student.current.policy_for(group.target_policy());
        std::span<double> theta = target.params();
        for (std::size_t i = 0; i < theta.size(); ++i)
          theta[i] += cfg.learning_rate * (report.gradient[i] - cfg.weight_decay * theta[i]);

        double abs_adv = 0.0;
        for (double a : report.advantages) abs_adv += std::fabs(a);
        GroupMetricsRow row{step, group.key, report.objective,
                            abs_adv / static_cast<double>(report.advantages.size()),
                            report.clip_fraction, report.mean_kl};
        if (hooks && hooks->on_group) hooks->on_group(row);
        result.group_metrics.push_back(std::move(row));
      }
    }

    step_row.mean_rollout_reward =
        step_row.rollouts > 0 ? reward_sum / static_cast<double>(step_row.rollouts) : 0.0;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0)
      step_row.eval_reward = evaluate_bank(program, student.current, dataset, reward_fn, cfg);
    result.last_step = step;

    const bool keep_going = !hooks || !hooks->on_step || hooks->on_step(step_row, student.current);
    result.step_metrics.push_back(std::move(step_row));
    if (!keep_going) break;
  }

  result.final_eval_reward = evaluate_bank(program, student.current, dataset, reward_fn, cfg);
  result.bank = std::move(student.current);
  result.reference_bank = std::move(student.reference);
  return result;
}

TrainResult better_together(const ProgramSpec& program, const PolicyBank& pre_optimized_bank,
                            std::span<const TeacherSpec> teachers,
                            std::span<const DatasetExample> dataset, const RewardFn& reward_fn,
                            const TrainConfig& cfg, const TrainHooks* hooks) {
  return train(program, make_snapshots(pre_optimized_bank), teachers, dataset, reward_fn, cfg,
               hooks);
}

}  // namespace mmgrpo
