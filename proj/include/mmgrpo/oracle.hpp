#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmgrpo/objective.hpp"
#include "mmgrpo/program.hpp"

namespace mmgrpo {

// Exact expectation summary from exhaustive trajectory enumeration.
struct EnumerationReport {
  std::size_t trajectory_count = 0;
  double probability_mass = 0.0;  // must come back 1 within 1e-9
  double expected_reward = 0.0;
  double second_moment = 0.0;     // E[r^2]
  std::map<TrajStatus, double> status_mass;

  double reward_variance() const {
    return second_moment - expected_reward * expected_reward;
  }
};

class EnumerationLimitError : public std::runtime_error {
 public:
  EnumerationLimitError(std::size_t seen, std::size_t cap)
      : std::runtime_error("enumeration refused: visited " + std::to_string(seen) +
                           " trajectories with more remaining (cap " + std::to_string(cap) + ")"),
        trajectories_seen(seen),
        limit(cap) {}
  std::size_t trajectories_seen;
  std::size_t limit;
};

// Walks every trajectory the program can produce under the bank, summing
// reward times path probability. Incomplete trajectories score
// fallback_reward, mirroring training and Monte-Carlo evaluation.
EnumerationReport enumerate_expected_reward(const ProgramSpec& program, const PolicyBank& bank,
                                            const DatasetExample& example, const RewardFn& reward_fn,
                                            double fallback_reward = 0.0,
                                            std::size_t max_trajectories = 1000000);

// Central-difference check of an analytic gradient. Returns the worst
// relative error over coordinates where either gradient is above 1e-8.
double fd_gradient_check(const std::function<double(std::span<const double>)>& objective,
                         std::span<const double> params, std::span<const double> analytic_grad,
                         double step);

// Minimal standalone single-group GRPO objective (all completions share one
// prompt, the bank holds a single module). Written against the public policy
// surface only; deliberately shares no code with group_objective.
double reference_grpo_single_stage(const TokenSeq& prompt, const std::vector<TokenSeq>& completions,
                                   std::span<const double> rewards, const SnapshotSet& snapshots,
                                   const ObjectiveConfig& cfg);

struct OracleCase {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct OracleReport {
  std::vector<OracleCase> cases;
  bool all_passed() const {
    for (const OracleCase& c : cases)
      if (!c.passed) return false;
    return true;
  }
};

// Full verification sweep backing the `verify` CLI command.
// gradient_perturbation is a mutation hook for testing the harness itself:
// a nonzero value is added to one analytic gradient coordinate and must make
// the finite-difference oracle fail.
OracleReport run_verification_suite(double gradient_perturbation = 0.0);

}  // namespace mmgrpo
