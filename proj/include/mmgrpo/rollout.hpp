#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmgrpo/groups.hpp"
#include "mmgrpo/program.hpp"

namespace mmgrpo {

// One planned program execution. Every slot carries its own derived rng
// seed, so the collected batch is bitwise identical no matter how many
// threads run it (or whether the serial reference runs it).
struct RolloutPlan {
  const ProgramSpec* program = nullptr;
  const PolicyBank* bank = nullptr;
  const StructuredValue* input = nullptr;
  int program_input_id = -1;
  std::string teacher_id = "student";
  std::uint64_t seed = 0;
};

// Serial reference implementation.
std::vector<RolloutRecord> collect_rollouts_serial(std::span<const RolloutPlan> plans);

// OpenMP-parallel collection; falls back to the serial loop when built
// without OpenMP. Output is identical to collect_rollouts_serial.
std::vector<RolloutRecord> collect_rollouts(std::span<const RolloutPlan> plans);

// Monte-Carlo estimate of the expected program reward on one example.
// Incomplete trajectories score fallback_reward. Deterministic in seed and
// independent of thread count (per-slot streams, serial reduction).
double mc_expected_reward_serial(const ProgramSpec& program, const PolicyBank& bank,
                                 const DatasetExample& example, const RewardFn& reward_fn,
                                 int num_samples, std::uint64_t seed, double fallback_reward = 0.0);
double mc_expected_reward(const ProgramSpec& program, const PolicyBank& bank,
                          const DatasetExample& example, const RewardFn& reward_fn,
                          int num_samples, std::uint64_t seed, double fallback_reward = 0.0);

}  // namespace mmgrpo
