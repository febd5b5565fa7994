#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmgrpo/groups.hpp"
#include "mmgrpo/policy.hpp"

namespace mmgrpo {

enum class KlMode { k3, exact };

const char* to_string(KlMode mode);
KlMode kl_mode_from_string(std::string_view text);

struct ObjectiveConfig {
  double clip_epsilon = 0.2;   // must lie in (0, 1)
  double kl_beta = 0.01;
  double advantage_eps = 1e-8;
  bool length_normalize = true;     // the 1/|o_i| factor
  KlMode kl_mode = KlMode::k3;
  // Loss weight applied to padding duplicates (1.0 = count them like any
  // other item; advantages are always computed from the full reward list).
  double padding_duplicate_weight = 1.0;

  void validate() const;
};

struct GroupLossReport {
  double objective = 0.0;
  std::vector<double> advantages;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;   // share of tokens where the clipped branch wins
  double mean_kl = 0.0;
  std::vector<double> gradient;  // d objective / d theta, target policy's shape
  bool zero_signal = false;      // all advantages vanished (degenerate group)

  double loss() const { return -objective; }
};

// Group-relative advantages: (r_i - mean) / (population std + advantage_eps).
// A zero-variance group with advantage_eps == 0 yields all-zero advantages.
std::vector<double> compute_advantages(std::span<const double> rewards, double advantage_eps);

// Per-token importance ratios current/old for output o given prompt q.
std::vector<double> token_ratio(const ModulePolicy& current, const ModulePolicy& old_policy,
                                const TokenSeq& q, const TokenSeq& o);

// Per-token k3 KL estimate against the reference policy:
// rho_t = p_ref(o_t|.) / p_cur(o_t|.),  kl_t = rho_t - log(rho_t) - 1 >= 0.
std::vector<double> kl_penalty(const ModulePolicy& current, const ModulePolicy& reference,
                               const TokenSeq& q, const TokenSeq& o);

// Clipped group-relative surrogate with KL penalty for one module-level
// group, plus its analytic gradient with respect to the current policy's
// parameters (advantages, old and reference log-probs held constant).
GroupLossReport group_objective(const GrpoGroup& group, const SnapshotSet& snapshots,
                                const ObjectiveConfig& cfg);

}  // namespace mmgrpo
