#include "mmgrpo/rollout.hpp"

#include <stdexcept>

namespace mmgrpo {

namespace {

RolloutRecord run_plan(const RolloutPlan& plan) {
  Rng rng(plan.seed);
  RolloutRecord record;
  record.teacher_id = plan.teacher_id;
  record.trajectory =
      execute_program(*plan.program, *plan.bank, *plan.input, rng, plan.program_input_id);
  return record;
}

}  // namespace

std::vector<RolloutRecord> collect_rollouts_serial(std::span<const RolloutPlan> plans) {
  std::vector<RolloutRecord> records(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) records[i] = run_plan(plans[i]);
  return records;
}

std::vector<RolloutRecord> collect_rollouts(std::span<const RolloutPlan> plans) {
  std::vector<RolloutRecord> records(plans.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(plans.size()); ++i)
    records[i] = run_plan(plans[i]);
  return records;
}

namespace {

double reward_of_sample(const ProgramSpec& program, const PolicyBank& bank,
                        const DatasetExample& example, const RewardFn& reward_fn,
                        std::uint64_t seed, double fallback_reward) {
  Rng rng(seed);
  const Trajectory traj = execute_program(program, bank, example.input, rng);
  if (!traj.complete()) return fallback_reward;
  return reward_fn(*traj.final_output, traj, example.metadata);
}

}  // namespace

double mc_expected_reward_serial(const ProgramSpec& program, const PolicyBank& bank,
                                 const DatasetExample& example, const RewardFn& reward_fn,
                                 int num_samples, std::uint64_t seed, double fallback_reward) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  double sum = 0.0;
  for (int i = 0; i < num_samples; ++i)
    sum += reward_of_sample(program, bank, example, reward_fn, derive_seed(seed, 0x3C, i),
                            fallback_reward);
  return sum / num_samples;
}

double mc_expected_reward(const ProgramSpec& program, const PolicyBank& bank,
                          const DatasetExample& example, const RewardFn& reward_fn,
                          int num_samples, std::uint64_t seed, double fallback_reward) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  // Per-slot rewards, reduced serially so the sum never depends on thread
  // interleaving.
  std::vector<double> rewards(num_samples);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < num_samples; ++i)
    rewards[i] = reward_of_sample(program, bank, example, reward_fn, derive_seed(seed, 0x3C, i),
                                  fallback_reward);
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / num_samples;
}

}  // namespace mmgrpo
