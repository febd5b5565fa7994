#include "mmgrpo/groups.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mmgrpo/log.hpp"

namespace mmgrpo {

std::string to_string(const GroupKey& key) {
  return key.module_id + "#" + std::to_string(key.invocation_index);
}

const char* to_string(PaddingMode mode) {
  return mode == PaddingMode::truncate ? "truncate" : "fill";
}

PaddingMode padding_mode_from_string(std::string_view text) {
  if (text == "truncate") return PaddingMode::truncate;
  if (text == "fill") return PaddingMode::fill;
  throw std::invalid_argument("unknown padding mode: " + std::string(text));
}

std::vector<double> score_rollouts(std::span<const RolloutRecord> rollouts, const RewardFn& reward_fn,
                                   const StructuredValue& metadata, double fallback_reward) {
  std::vector<double> rewards;
  rewards.reserve(rollouts.size());
  for (const RolloutRecord& r : rollouts) {
    if (!r.trajectory.complete()) {
      rewards.push_back(fallback_reward);
      continue;
    }
    const double value = reward_fn(*r.trajectory.final_output, r.trajectory, metadata);
    if (!std::isfinite(value))
      throw std::runtime_error("reward function returned a non-finite value on a complete trajectory");
    rewards.push_back(value);
  }
  return rewards;
}

std::vector<GrpoGroup> align_module_groups(std::span<const RolloutRecord> rollouts,
                                           std::span<const double> rewards) {
  if (rollouts.size() != rewards.size())
    throw std::invalid_argument("one reward per rollout required");
  std::map<GroupKey, std::vector<GroupItem>> grouped;
  for (int j = 0; j < static_cast<int>(rollouts.size()); ++j) {
    std::map<std::string, int> relative_order;
    for (const Trace& trace : rollouts[j].trajectory.traces) {
      const GroupKey key{trace.module_id, relative_order[trace.module_id]++};
      grouped[key].push_back({trace.prompt, trace.output, rewards[j], j, false});
    }
  }
  std::vector<GrpoGroup> groups;
  groups.reserve(grouped.size());
  for (auto& [key, items] : grouped) groups.push_back({key, std::move(items)});
  return groups;
}

namespace {

double reward_sum_sq_dev(const std::vector<GroupItem>& items, std::span<const std::size_t> picked) {
  double mean = 0.0;
  for (std::size_t i : picked) mean += items[i].reward;
  mean /= static_cast<double>(picked.size());
  double ss = 0.0;
  for (std::size_t i : picked) {
    const double d = items[i].reward - mean;
    ss += d * d;
  }
  return ss;
}

// Duplication order shared by fill-padding and up-sampling: items furthest
// from the group's mean reward first, earlier items breaking ties.
std::vector<std::size_t> duplication_order(const std::vector<GroupItem>& items) {
  double mean = 0.0;
  for (const GroupItem& it : items) mean += it.reward;
  mean /= static_cast<double>(items.size());
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(items[a].reward - mean) > std::fabs(items[b].reward - mean);
  });
  return order;
}

void append_duplicates(std::vector<GroupItem>& items, std::size_t target) {
  const std::vector<std::size_t> order = duplication_order(items);
  std::size_t cursor = 0;
  while (items.size() < target) {
    GroupItem copy = items[order[cursor % order.size()]];
    copy.is_padding_duplicate = true;
    items.push_back(std::move(copy));
    ++cursor;
  }
}

std::size_t binomial_or_cap(std::size_t n, std::size_t k, std::size_t cap) {
  std::size_t c = 1;
  for (std::size_t i = 0; i < k; ++i) {
    c = c * (n - i) / (i + 1);
    if (c > cap) return cap + 1;
  }
  return c;
}

// Exhaustive max-variance subset, lexicographic combination order so the
// earliest-index subset wins ties.
std::vector<std::size_t> best_subset_exhaustive(const std::vector<GroupItem>& items, std::size_t k) {
  const std::size_t n = items.size();
  std::vector<std::size_t> comb(k);
  std::iota(comb.begin(), comb.end(), 0);
  std::vector<std::size_t> best = comb;
  double best_ss = reward_sum_sq_dev(items, comb);
  while (true) {
    // next combination
    std::size_t i = k;
    while (i > 0 && comb[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++comb[i - 1];
    for (std::size_t j = i; j < k; ++j) comb[j] = comb[j - 1] + 1;
    const double ss = reward_sum_sq_dev(items, comb);
    if (ss > best_ss) {
      best_ss = ss;
      best = comb;
    }
  }
  return best;
}

// A variance-maximizing subset always consists of the lowest i and highest
// k - i rewards, so large groups only need the k + 1 split candidates.
std::vector<std::size_t> best_subset_extremes(const std::vector<GroupItem>& items, std::size_t k) {
  const std::size_t n = items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].reward < items[b].reward; });
  std::vector<std::size_t> best;
  double best_ss = -1.0;
  for (std::size_t low = 0; low <= k; ++low) {
    std::vector<std::size_t> picked;
    picked.reserve(k);
    for (std::size_t i = 0; i < low; ++i) picked.push_back(order[i]);
    for (std::size_t i = n - (k - low); i < n; ++i) picked.push_back(order[i]);
    std::sort(picked.begin(), picked.end());
    const double ss = reward_sum_sq_dev(items, picked);
    if (ss > best_ss || (ss == best_ss && picked < best)) {
      best_ss = ss;
      best = picked;
    }
  }
  return best;
}

}  // namespace

std::vector<GroupItem> select_k_diverse(const std::vector<GroupItem>& items, int k) {
  if (items.empty()) throw std::invalid_argument("select_k_diverse: items must be nonempty");
  if (k < 1) throw std::invalid_argument("select_k_diverse: k must be >= 1");
  const std::size_t target = static_cast<std::size_t>(k);
  if (items.size() == target) return items;
  if (items.size() < target) {
    std::vector<GroupItem> out = items;
    append_duplicates(out, target);
    return out;
  }
  const std::vector<std::size_t> picked =
      binomial_or_cap(items.size(), target, 200000) <= 200000
          ? best_subset_exhaustive(items, target)
          : best_subset_extremes(items, target);
  std::vector<GroupItem> out;
  out.reserve(target);
  for (std::size_t i : picked) out.push_back(items[i]);
  return out;
}

std::vector<GrpoGroup> pad_groups(std::vector<GrpoGroup> groups, PaddingMode mode,
                                  int rollout_count) {
  if (rollout_count < 1) throw std::invalid_argument("pad_groups: rollout_count must be >= 1");
  const std::size_t full = static_cast<std::size_t>(rollout_count);
  std::vector<GrpoGroup> out;
  out.reserve(groups.size());
  for (GrpoGroup& g : groups) {
    if (g.items.empty()) {
      log_warn("dropping empty group " + to_string(g.key));
      continue;
    }
    if (g.items.size() > full)
      throw std::logic_error("group larger than rollout count: " + to_string(g.key));
    if (mode == PaddingMode::truncate) {
      if (g.items.size() == full) out.push_back(std::move(g));
      continue;
    }
    append_duplicates(g.items, full);
    out.push_back(std::move(g));
  }
  return out;
}

GroupBuildResult form_groups_from_scored(std::span<const RolloutRecord> rollouts,
                                         std::span<const double> rewards, int group_size,
                                         PaddingMode mode) {
  if (rollouts.empty()) throw std::invalid_argument("no rollouts to group");
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  GroupBuildResult result;
  result.rollout_rewards.assign(rewards.begin(), rewards.end());
  std::vector<GrpoGroup> groups =
      pad_groups(align_module_groups(rollouts, rewards), mode, static_cast<int>(rollouts.size()));
  for (GrpoGroup& g : groups) {
    g.items = select_k_diverse(g.items, group_size);
    result.target_modules.push_back(g.target_policy());
    result.groups.push_back(std::move(g));
  }
  return result;
}

GroupBuildResult form_module_level_groups(std::span<const RolloutRecord> rollouts,
                                          const RewardFn& reward_fn, const StructuredValue& metadata,
                                          int group_size, PaddingMode mode, double fallback_reward) {
  if (rollouts.empty()) throw std::invalid_argument("no rollouts to group");
  const std::vector<double> rewards =
      score_rollouts(rollouts, reward_fn, metadata, fallback_reward);
  return form_groups_from_scored(rollouts, rewards, group_size, mode);
}

}  // namespace mmgrpo
