#include "mmgrpo/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmgrpo/envs.hpp"
#include "mmgrpo/rollout.hpp"
#include "mmgrpo/rng.hpp"

namespace mmgrpo {

namespace {

struct EnumerationWalker {
  const ProgramSpec& program;
  const PolicyBank& bank;
  const DatasetExample& example;
  const RewardFn& reward_fn;
  double fallback_reward;
  std::size_t cap;

  EnumerationReport report;
  std::vector<ModuleCallView> history;
  std::vector<Trace> traces;

  void leaf_incomplete(TrajStatus status, double prob) {
    if (report.trajectory_count >= cap)
      throw EnumerationLimitError(report.trajectory_count, cap);
    ++report.trajectory_count;
    report.probability_mass += prob;
    report.status_mass[status] += prob;
    report.expected_reward += prob * fallback_reward;
    report.second_moment += prob * fallback_reward * fallback_reward;
  }

  void leaf_complete(StructuredValue final_output, double prob) {
    if (report.trajectory_count >= cap)
      throw EnumerationLimitError(report.trajectory_count, cap);
    Trajectory traj;
    traj.traces = traces;
    traj.status = TrajStatus::complete;
    traj.final_output = std::move(final_output);
    const double reward = reward_fn(*traj.final_output, traj, example.metadata);
    ++report.trajectory_count;
    report.probability_mass += prob;
    report.status_mass[TrajStatus::complete] += prob;
    report.expected_reward += prob * reward;
    report.second_moment += prob * reward * reward;
  }

  // Enumerates every output the sampler could produce for this module call,
  // then continues the program walk.
  void walk_outputs(const ModuleSpec& mod, const ModulePolicy& policy, const TokenSeq& prompt,
                    TokenSeq& output, double prob) {
    const std::vector<int> ctx =
        policy.context_at(prompt, output, static_cast<int>(output.size()));
    const std::vector<double> probs = policy.probs_at(ctx);
    for (int tok = 0; tok < policy.vocab_size(); ++tok) {
      output.push_back(tok);
      const double p = prob * probs[tok];
      const bool hit_eos = policy.eos_token() && tok == *policy.eos_token();
      const bool at_cap = static_cast<int>(output.size()) == mod.max_output_len;
      if (hit_eos || at_cap) {
        finish_call(mod, prompt, output, p, hit_eos);
      } else {
        walk_outputs(mod, policy, prompt, output, p);
      }
      output.pop_back();
    }
  }

  void finish_call(const ModuleSpec& mod, const TokenSeq& prompt, const TokenSeq& output,
                   double prob, bool ended_with_eos) {
    traces.push_back({mod.module_id, prompt, output, static_cast<int>(traces.size())});
    if (mod.parse_check && !mod.parse_check(output)) {
      leaf_incomplete(TrajStatus::parse_failure, prob);
    } else if (mod.require_eos && !ended_with_eos) {
      leaf_incomplete(TrajStatus::length_overflow, prob);
    } else {
      history.push_back({mod.module_id, output});
      walk_program(prob);
      history.pop_back();
    }
    traces.pop_back();
  }

  void walk_program(double prob) {
    ControlDecision decision = program.control_flow(example.input, history);
    if (std::holds_alternative<Halt>(decision)) {
      leaf_complete(std::move(std::get<Halt>(decision).final_output), prob);
      return;
    }
    if (static_cast<int>(traces.size()) >= program.max_invocations) {
      leaf_incomplete(TrajStatus::early_termination, prob);
      return;
    }
    const NextCall& call = std::get<NextCall>(decision);
    const ModuleSpec& mod = program.module(call.module_id);
    const ModulePolicy& policy = bank.policy_for(call.module_id);
    const TokenSeq prompt = mod.prompt_template(call.input);
    TokenSeq output;
    walk_outputs(mod, policy, prompt, output, prob);
  }
};

}  // namespace

EnumerationReport enumerate_expected_reward(const ProgramSpec& program, const PolicyBank& bank,
                                            const DatasetExample& example, const RewardFn& reward_fn,
                                            double fallback_reward, std::size_t max_trajectories) {
  EnumerationWalker walker{program, bank, example, reward_fn, fallback_reward, max_trajectories, {}, {}, {}};
  walker.walk_program(1.0);
  return walker.report;
}

double fd_gradient_check(const std::function<double(std::span<const double>)>& objective,
                         std::span<const double> params, std::span<const double> analytic_grad,
                         double step) {
  if (step <= 0.0) throw std::invalid_argument("fd step must be positive");
  if (params.size() != analytic_grad.size())
    throw std::invalid_argument("params/gradient size mismatch");
  std::vector<double> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    const double keep = work[i];
    work[i] = keep + step;
    const double up = objective(work);
    work[i] = keep - step;
    const double down = objective(work);
    work[i] = keep;
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max(std::fabs(fd), std::fabs(analytic_grad[i]));
    if (denom <= 1e-8) continue;
    worst = std::max(worst, std::fabs(fd - analytic_grad[i]) / denom);
  }
  return worst;
}

double reference_grpo_single_stage(const TokenSeq& prompt, const std::vector<TokenSeq>& completions,
                                   std::span<const double> rewards, const SnapshotSet& snapshots,
                                   const ObjectiveConfig& cfg) {
  if (completions.empty() || completions.size() != rewards.size())
    throw std::invalid_argument("need one reward per completion");
  if (snapshots.current.sharing_map().size() != 1)
    throw std::invalid_argument("single-stage reference expects a single-module bank");
  const std::string module_id = snapshots.current.sharing_map().begin()->first;
  const ModulePolicy& cur = snapshots.current.policy_for(module_id);
  const ModulePolicy& old_policy = snapshots.old_policy.policy_for(module_id);
  const ModulePolicy& ref = snapshots.reference.policy_for(module_id);

  const std::size_t n = completions.size();
  double reward_mean = 0.0;
  for (double r : rewards) reward_mean += r;
  reward_mean /= static_cast<double>(n);
  double reward_var = 0.0;
  for (double r : rewards) reward_var += (r - reward_mean) * (r - reward_mean);
  const double reward_std = std::sqrt(reward_var / static_cast<double>(n));

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double advantage = 0.0;
    if (reward_std != 0.0 || cfg.advantage_eps != 0.0)
      advantage = (rewards[i] - reward_mean) / (reward_std + cfg.advantage_eps);
    const TokenSeq& o = completions[i];
    const std::vector<double> lp_cur = log_prob(cur, prompt, o);
    const std::vector<double> lp_old = log_prob(old_policy, prompt, o);
    const std::vector<double> lp_ref = log_prob(ref, prompt, o);
    double item_total = 0.0;
    for (std::size_t t = 0; t < o.size(); ++t) {
      const double omega = std::exp(lp_cur[t] - lp_old[t]);
      const double lo = 1.0 - cfg.clip_epsilon;
      const double hi = 1.0 + cfg.clip_epsilon;
      const double clipped = omega < lo ? lo : (omega > hi ? hi : omega);
      const double surrogate = std::min(omega * advantage, clipped * advantage);
      double kl;
      if (cfg.kl_mode == KlMode::k3) {
        const double rho = std::exp(lp_ref[t] - lp_cur[t]);
        kl = rho - std::log(rho) - 1.0;
      } else {
        const std::vector<int> ctx = cur.context_at(prompt, o, static_cast<int>(t));
        const std::vector<double> row_cur = cur.log_probs_at(ctx);
        const std::vector<double> row_ref = ref.log_probs_at(ctx);
        kl = 0.0;
        for (int u = 0; u < cur.vocab_size(); ++u)
          kl += std::exp(row_cur[u]) * (row_cur[u] - row_ref[u]);
      }
      item_total += surrogate - cfg.kl_beta * kl;
    }
    if (cfg.length_normalize) item_total /= static_cast<double>(o.size());
    total += item_total;
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Verification sweep
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ModulePolicy random_table_policy(const std::string& name, int vocab, int ctx, Rng& rng,
                                 double scale) {
  ModulePolicy p = ModulePolicy::make_table(name, vocab, ctx, vocab - 1);
  p.init_random(rng, scale);
  return p;
}

// Random single-module, single-call instance for the equivalence sweep.
struct SingleStageCase {
  GrpoGroup group;
  SnapshotSet snapshots;
  ObjectiveConfig cfg;
  TokenSeq prompt;
  std::vector<TokenSeq> completions;
  std::vector<double> rewards;
};

SingleStageCase random_single_stage_case(Rng& rng) {
  SingleStageCase c;
  const int vocab = 2 + static_cast<int>(rng.next_below(7));
  const int ctx = 1 + static_cast<int>(rng.next_below(2));
  PolicyBank cur, old_bank, ref;
  cur.add_policy(random_table_policy("m", vocab, ctx, rng, 1.5), {"m"});
  old_bank.add_policy(random_table_policy("m", vocab, ctx, rng, 1.5), {"m"});
  ref.add_policy(random_table_policy("m", vocab, ctx, rng, 1.5), {"m"});
  c.snapshots = SnapshotSet{cur, old_bank, ref};

  const int prompt_len = static_cast<int>(rng.next_below(3));
  for (int i = 0; i < prompt_len; ++i)
    c.prompt.push_back(static_cast<int>(rng.next_below(vocab)));

  const int group_size = 2 + static_cast<int>(rng.next_below(7));
  for (int i = 0; i < group_size; ++i) {
    const int len = 1 + static_cast<int>(rng.next_below(3));
    TokenSeq o;
    for (int t = 0; t < len; ++t) o.push_back(static_cast<int>(rng.next_below(vocab)));
    const double reward = rng.next_below(2) == 0 ? rng.next_double() : (rng.next_below(2) ? 1.0 : 0.0);
    c.completions.push_back(o);
    c.rewards.push_back(reward);
    c.group.items.push_back({c.prompt, o, reward, i, false});
  }
  c.group.key = {"m", 0};

  c.cfg.clip_epsilon = 0.05 + 0.9 * rng.next_double();
  c.cfg.kl_beta = rng.next_below(2) ? 0.0 : rng.next_double() * 0.2;
  c.cfg.advantage_eps = rng.next_below(2) ? 0.0 : 1e-8;
  c.cfg.length_normalize = rng.next_below(2) == 0;
  c.cfg.kl_mode = rng.next_below(4) == 0 ? KlMode::exact : KlMode::k3;
  return c;
}

OracleCase check_single_stage_equivalence() {
  const auto start = Clock::now();
  Rng rng(0x5157a9e);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    SingleStageCase c = random_single_stage_case(rng);
    const double engine = group_objective(c.group, c.snapshots, c.cfg).objective;
    const double reference =
        reference_grpo_single_stage(c.prompt, c.completions, c.rewards, c.snapshots, c.cfg);
    worst = std::max(worst, std::fabs(engine - reference));
  }
  std::ostringstream detail;
  detail << "max |engine - reference| = " << worst << " over 200 fuzzed instances";
  return {"single_stage_equivalence", worst <= 1e-10, detail.str(), seconds_since(start)};
}

OracleCase check_gradient_fd(double perturbation) {
  const auto start = Clock::now();
  Rng rng(0xfd9e11);
  double worst = 0.0;
  for (int i = 0; i < 60; ++i) {
    SingleStageCase c = random_single_stage_case(rng);
    GroupLossReport report = group_objective(c.group, c.snapshots, c.cfg);
    if (i == 0 && perturbation != 0.0) report.gradient[0] += perturbation;
    SnapshotSet probe = c.snapshots;
    ModulePolicy& target = probe.current.policy_for("m");
    const auto eval = [&](std::span<const double> params) {
      std::copy(params.begin(), params.end(), target.params().begin());
      return group_objective(c.group, probe, c.cfg).objective;
    };
    worst = std::max(worst, fd_gradient_check(eval, c.snapshots.current.policy_for("m").params(),
                                              report.gradient, 1e-5));
  }
  std::ostringstream detail;
  detail << "max relative error = " << worst << " over 60 random groups";
  return {"gradient_finite_difference", worst <= 1e-4, detail.str(), seconds_since(start)};
}

OracleCase check_enumeration_closed_form() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  for (const char* name : {"chain-1", "chain-2", "branch", "multihop-copy-1"}) {
    const BuiltinEnv env = make_builtin_env(name);
    const PolicyBank bank = make_uniform_bank(env.program, 2);
    const EnumerationReport report =
        enumerate_expected_reward(env.program, bank, env.dataset.front(), env.reward);
    const bool mass_ok = std::fabs(report.probability_mass - 1.0) <= 1e-9;
    const bool reward_ok = std::fabs(report.expected_reward - env.uniform_expected_reward) <= 1e-12;
    if (!(mass_ok && reward_ok)) ok = false;
    detail << name << ": E[r] = " << report.expected_reward << " (closed form "
           << env.uniform_expected_reward << "); ";
  }
  return {"enumeration_closed_form", ok, detail.str(), seconds_since(start)};
}

OracleCase check_monte_carlo() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  const int samples = 20000;
  for (const char* name : {"chain-2", "branch", "multihop-copy-1"}) {
    const BuiltinEnv env = make_builtin_env(name);
    const PolicyBank bank = make_uniform_bank(env.program, 2);
    const EnumerationReport exact =
        enumerate_expected_reward(env.program, bank, env.dataset.front(), env.reward);
    const double estimate = mc_expected_reward(env.program, bank, env.dataset.front(), env.reward,
                                               samples, 0xac5u);
    const double sigma = std::sqrt(exact.reward_variance() / samples);
    const double gap = std::fabs(estimate - exact.expected_reward);
    if (gap > 3.0 * sigma) ok = false;
    detail << name << ": |mc - exact| = " << gap << " vs 3 sigma = " << 3.0 * sigma << "; ";
  }
  return {"monte_carlo_consistency", ok, detail.str(), seconds_since(start)};
}

// Independent exhaustive reference for the diverse-selection rule.
std::vector<std::size_t> brute_force_max_variance(const std::vector<double>& rewards, int k) {
  const std::size_t n = rewards.size();
  std::vector<std::size_t> best;
  double best_ss = -1.0;
  std::vector<std::size_t> idx(k);
  const std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t from) {
    if (pos == static_cast<std::size_t>(k)) {
      double mean = 0.0;
      for (std::size_t i : idx) mean += rewards[i];
      mean /= k;
      double ss = 0.0;
      for (std::size_t i : idx) ss += (rewards[i] - mean) * (rewards[i] - mean);
      if (ss > best_ss) {
        best_ss = ss;
        best = idx;
      }
      return;
    }
    for (std::size_t i = from; i < n; ++i) {
      idx[pos] = i;
      rec(pos + 1, i + 1);
    }
  };
  rec(0, 0);
  return best;
}

OracleCase check_diverse_selection() {
  const auto start = Clock::now();
  Rng rng(0xd1ce);
  bool ok = true;
  int cases = 0;
  for (int trial = 0; trial < 300 && ok; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(7));  // up to 8 items
    std::vector<GroupItem> items;
    std::vector<double> rewards;
    for (int i = 0; i < n; ++i) {
      const double r = rng.next_below(3) == 0 ? (rng.next_below(2) ? 1.0 : 0.0) : rng.next_double();
      items.push_back({{}, {0}, r, i, false});
      rewards.push_back(r);
    }
    for (int k = 1; k <= n && ok; ++k) {
      const std::vector<GroupItem> picked = select_k_diverse(items, k);
      const std::vector<std::size_t> expect = brute_force_max_variance(rewards, k);
      if (picked.size() != static_cast<std::size_t>(k)) ok = false;
      for (int i = 0; i < k && ok; ++i)
        if (picked[i].source_trajectory != static_cast<int>(expect[i])) ok = false;
      ++cases;
    }
  }
  std::ostringstream detail;
  detail << cases << " (items, k) cases vs exhaustive search";
  return {"diverse_selection_exhaustive", ok, detail.str(), seconds_since(start)};
}

OracleCase check_group_count_formula() {
  const auto start = Clock::now();
  Rng rng(0x6f0c);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int num_modules = 1 + static_cast<int>(rng.next_below(4));
    const int num_rollouts = 1 + static_cast<int>(rng.next_below(6));
    std::vector<RolloutRecord> rollouts(num_rollouts);
    std::vector<double> rewards(num_rollouts);
    std::map<std::string, int> max_calls;
    std::size_t total_traces = 0;
    for (int j = 0; j < num_rollouts; ++j) {
      rewards[j] = rng.next_double();
      std::vector<std::pair<std::string, int>> calls;
      for (int m = 0; m < num_modules; ++m) {
        const std::string id = "mod" + std::to_string(m);
        const int count = static_cast<int>(rng.next_below(4));  // 0..3 calls
        if (count > 0) calls.emplace_back(id, count);
        max_calls[id] = std::max(max_calls[id], count);
      }
      // interleave deterministically: repeat module list, consuming counts
      int global = 0;
      bool remaining = true;
      while (remaining) {
        remaining = false;
        for (auto& [id, count] : calls) {
          if (count > 0) {
            --count;
            remaining = remaining || count > 0;
            rollouts[j].trajectory.traces.push_back({id, {0}, {0}, global++});
          }
        }
      }
      total_traces += rollouts[j].trajectory.traces.size();
      rollouts[j].trajectory.status = TrajStatus::complete;
      rollouts[j].trajectory.final_output = StructuredValue{};
    }
    std::size_t expected_groups = 0;
    for (auto& [id, count] : max_calls) expected_groups += static_cast<std::size_t>(count);
    const std::vector<GrpoGroup> groups = align_module_groups(rollouts, rewards);
    std::size_t grouped_items = 0;
    for (const GrpoGroup& g : groups) grouped_items += g.items.size();
    if (groups.size() != expected_groups || grouped_items != total_traces) ok = false;
  }
  return {"group_count_formula", ok, "1000 fuzzed rollout sets", seconds_since(start)};
}

}  // namespace

OracleReport run_verification_suite(double gradient_perturbation) {
  OracleReport report;
  report.cases.push_back(check_single_stage_equivalence());
  report.cases.push_back(check_gradient_fd(gradient_perturbation));
  report.cases.push_back(check_enumeration_closed_form());
  report.cases.push_back(check_monte_carlo());
  report.cases.push_back(check_diverse_selection());
  report.cases.push_back(check_group_count_formula());
  return report;
}

}  // namespace mmgrpo
