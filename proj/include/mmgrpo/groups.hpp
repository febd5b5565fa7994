#pragma once

#include <compare>
#include <span>
#include <string>
#include <vector>

#include "mmgrpo/types.hpp"

namespace mmgrpo {

// One (prompt, output, reward) triple inside a module-level group. The reward
// is the program-level reward of the trajectory the trace came from (uniform
// credit assignment), or the fallback reward when that trajectory did not
// complete.
struct GroupItem {
  TokenSeq prompt;
  TokenSeq output;
  double reward = 0.0;
  int source_trajectory = -1;
  bool is_padding_duplicate = false;
};

// Alignment key: a module identity plus how many prior calls to the same
// module the trajectory already made.
struct GroupKey {
  std::string module_id;
  int invocation_index = 0;

  auto operator<=>(const GroupKey&) const = default;
};

std::string to_string(const GroupKey& key);

struct GrpoGroup {
  GroupKey key;
  std::vector<GroupItem> items;

  // Module whose policy parameters this group updates.
  const std::string& target_policy() const { return key.module_id; }
};

enum class PaddingMode { truncate, fill };

const char* to_string(PaddingMode mode);
PaddingMode padding_mode_from_string(std::string_view text);

// One sampled (final output, trajectory) pair plus which teacher produced it.
struct RolloutRecord {
  Trajectory trajectory;
  std::string teacher_id = "student";
};

struct GroupBuildResult {
  std::vector<GrpoGroup> groups;             // sorted by key
  std::vector<std::string> target_modules;   // index-aligned with groups
  std::vector<double> rollout_rewards;       // per rollout, fallback applied
};

// Program-level reward per rollout: reward_fn on complete trajectories
// (failures there propagate), fallback_reward otherwise.
std::vector<double> score_rollouts(std::span<const RolloutRecord> rollouts, const RewardFn& reward_fn,
                                   const StructuredValue& metadata, double fallback_reward);

// Raw alignment: every trace of every rollout lands in exactly one group,
// keyed by (module id, relative invocation index). Groups come back sorted
// by key; items keep rollout order.
std::vector<GrpoGroup> align_module_groups(std::span<const RolloutRecord> rollouts,
                                           std::span<const double> rewards);

// truncate: keep only groups with one item from every rollout (invocation
//           index below the per-module minimum count).
// fill:     bring every group up to rollout_count items by duplicating
//           existing items (diverse-selection order), duplicates flagged.
std::vector<GrpoGroup> pad_groups(std::vector<GrpoGroup> groups, PaddingMode mode,
                                  int rollout_count);

// Returns exactly k items. Downsampling maximizes the sample variance of the
// selected rewards (ties resolved toward earlier items); upsampling
// duplicates items round-robin in descending |reward - mean| order.
std::vector<GroupItem> select_k_diverse(const std::vector<GroupItem>& items, int k);

// Full pipeline: score, align, pad, then size every group to group_size.
GroupBuildResult form_module_level_groups(std::span<const RolloutRecord> rollouts,
                                          const RewardFn& reward_fn, const StructuredValue& metadata,
                                          int group_size, PaddingMode mode, double fallback_reward);

// Same pipeline over already-scored rollouts (offline/log-replay path).
GroupBuildResult form_groups_from_scored(std::span<const RolloutRecord> rollouts,
                                         std::span<const double> rewards, int group_size,
                                         PaddingMode mode);

}  // namespace mmgrpo
