// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each check is self-contained and pins its thresholds in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "mmgrpo/envs.hpp"
#include "mmgrpo/io.hpp"
#include "mmgrpo/oracle.hpp"
#include "mmgrpo/rollout.hpp"
#include "mmgrpo/trainer.hpp"

using namespace mmgrpo;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool passed, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %d: %-28s %7.2fs  %s\n", passed ? "PASS" : "FAIL", number,
              name.c_str(), seconds, detail.c_str());
  std::fflush(stdout);
  if (!passed) ++g_failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ModulePolicy random_table(const std::string& name, int vocab, int ctx, Rng& rng, double scale) {
  ModulePolicy p = ModulePolicy::make_table(name, vocab, ctx, vocab - 1);
  p.init_random(rng, scale);
  return p;
}

struct FuzzInstance {
  GrpoGroup group;
  SnapshotSet snapshots;
  ObjectiveConfig cfg;
  TokenSeq prompt;
  std::vector<TokenSeq> completions;
  std::vector<double> rewards;
};

FuzzInstance random_instance(Rng& rng, bool allow_exact_kl) {
  FuzzInstance f;
  const int vocab = 2 + static_cast<int>(rng.next_below(7));
  const int ctx = 1 + static_cast<int>(rng.next_below(2));
  PolicyBank cur, old_bank, ref;
  cur.add_policy(random_table("m", vocab, ctx, rng, 1.5), {"m"});
  old_bank.add_policy(random_table("m", vocab, ctx, rng, 1.5), {"m"});
  ref.add_policy(random_table("m", vocab, ctx, rng, 1.5), {"m"});
  f.snapshots = SnapshotSet{cur, old_bank, ref};
  const int prompt_len = static_cast<int>(rng.next_below(3));
  for (int i = 0; i < prompt_len; ++i) f.prompt.push_back(static_cast<int>(rng.next_below(vocab)));
  const int size = 2 + static_cast<int>(rng.next_below(7));
  for (int i = 0; i < size; ++i) {
    TokenSeq o;
    const int len = 1 + static_cast<int>(rng.next_below(3));
    for (int t = 0; t < len; ++t) o.push_back(static_cast<int>(rng.next_below(vocab)));
    const double r = rng.next_below(2) ? (rng.next_below(2) ? 1.0 : 0.0) : rng.next_double();
    f.completions.push_back(o);
    f.rewards.push_back(r);
    f.group.items.push_back({f.prompt, o, r, i, false});
  }
  f.group.key = {"m", 0};
  f.cfg.clip_epsilon = 0.05 + 0.9 * rng.next_double();
  f.cfg.kl_beta = rng.next_below(2) ? 0.0 : 0.25 * rng.next_double();
  f.cfg.advantage_eps = rng.next_below(2) ? 0.0 : 1e-8;
  f.cfg.length_normalize = rng.next_below(2) == 0;
  f.cfg.kl_mode = allow_exact_kl && rng.next_below(4) == 0 ? KlMode::exact : KlMode::k3;
  return f;
}

// --- 1. single-stage equivalence -------------------------------------------

void criterion_equivalence() {
  const auto start = Clock::now();
  Rng rng(0xACC1);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    FuzzInstance f = random_instance(rng, true);
    const double engine = group_objective(f.group, f.snapshots, f.cfg).objective;
    const double reference =
        reference_grpo_single_stage(f.prompt, f.completions, f.rewards, f.snapshots, f.cfg);
    worst = std::max(worst, std::fabs(engine - reference));
  }
  const double elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << "max |objective - single-stage reference| = " << worst << " over 200 instances";
  report(1, "single-stage equivalence", worst <= 1e-10 && elapsed < 10.0, detail.str(), elapsed);
}

// --- 2. gradient fidelity ----------------------------------------------------

void criterion_gradient() {
  const auto start = Clock::now();
  Rng rng(0xACC2);
  double worst = 0.0;
  int clipped_cases = 0, kl_cases = 0;
  for (int i = 0; i < 100; ++i) {
    FuzzInstance f = random_instance(rng, true);
    if (i % 3 == 0) f.cfg.clip_epsilon = 0.02 + 0.05 * rng.next_double();  // force clipping
    if (i % 2 == 0) f.cfg.kl_beta = 0.05 + 0.2 * rng.next_double();
    const GroupLossReport rep = group_objective(f.group, f.snapshots, f.cfg);
    clipped_cases += rep.clip_fraction > 0.0 ? 1 : 0;
    kl_cases += f.cfg.kl_beta > 0.0 ? 1 : 0;
    SnapshotSet probe = f.snapshots;
    ModulePolicy& target = probe.current.policy_for("m");
    const auto eval = [&](std::span<const double> params) {
      std::copy(params.begin(), params.end(), target.params().begin());
      return group_objective(f.group, probe, f.cfg).objective;
    };
    worst = std::max(
        worst, fd_gradient_check(eval, f.snapshots.current.policy_for("m").params(), rep.gradient,
                                 1e-5));
  }
  const double elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << "max relative error = " << worst << " (" << clipped_cases << " clip-active, "
         << kl_cases << " beta>0 cases)";
  report(2, "gradient fidelity", worst <= 1e-4 && clipped_cases > 0 && kl_cases > 0 &&
                                     elapsed < 30.0,
         detail.str(), elapsed);
}

// --- 3. group-formation combinatorics ---------------------------------------

void criterion_group_formation() {
  const auto start = Clock::now();
  Rng rng(0xACC3);
  bool ok = true;
  std::string why;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int num_modules = 1 + static_cast<int>(rng.next_below(4));
    const int num_rollouts = 1 + static_cast<int>(rng.next_below(6));
    std::vector<RolloutRecord> rollouts(num_rollouts);
    std::vector<double> rewards(num_rollouts);
    std::map<std::string, int> max_calls;
    std::multiset<std::string> trace_tags;
    for (int j = 0; j < num_rollouts; ++j) {
      rewards[j] = rng.next_double();
      std::map<std::string, int> counts;
      const int len = static_cast<int>(rng.next_below(8));
      for (int t = 0; t < len; ++t) {
        const std::string id = "mod" + std::to_string(rng.next_below(num_modules));
        rollouts[j].trajectory.traces.push_back({id, {j, t}, {t % 3}, t});
        ++counts[id];
        trace_tags.insert(id + ":" + std::to_string(j) + ":" + std::to_string(t));
      }
      for (const auto& [id, c] : counts) max_calls[id] = std::max(max_calls[id], c);
      rollouts[j].trajectory.status = TrajStatus::complete;
      rollouts[j].trajectory.final_output = StructuredValue{};
    }
    std::size_t expected = 0;
    for (const auto& [id, c] : max_calls) expected += static_cast<std::size_t>(c);
    const std::vector<GrpoGroup> groups = align_module_groups(rollouts, rewards);
    if (groups.size() != expected) {
      ok = false;
      why = "group count mismatch";
      break;
    }
    // partition bijection: items correspond one-to-one with traces
    std::multiset<std::string> item_tags;
    for (const GrpoGroup& g : groups)
      for (const GroupItem& item : g.items) {
        if (item.is_padding_duplicate || item.reward != rewards[item.source_trajectory]) {
          ok = false;
          why = "reward attachment broken";
        }
        item_tags.insert(g.key.module_id + ":" + std::to_string(item.source_trajectory) + ":" +
                         std::to_string(item.prompt.at(1)));
      }
    if (item_tags != trace_tags) {
      ok = false;
      why = "trace/item bijection broken";
    }
  }
  // the documented two-module three-rollout example
  std::vector<RolloutRecord> rollouts(3);
  for (int j = 0; j < 3; ++j) {
    rollouts[j].trajectory.status = TrajStatus::complete;
    rollouts[j].trajectory.final_output = StructuredValue{};
    int pos = 0;
    for (const char* id : {"m1", "m2", "m1"})
      rollouts[j].trajectory.traces.push_back({id, {j, pos}, {0}, pos}), ++pos;
  }
  const std::vector<double> rewards{1.0, 0.0, 1.0};
  const std::vector<GrpoGroup> groups = align_module_groups(rollouts, rewards);
  bool example_ok = groups.size() == 3;
  for (const GrpoGroup& g : groups) example_ok = example_ok && g.items.size() == 3;
  const double elapsed = seconds_since(start);
  report(3, "group-formation combinatorics", ok && example_ok,
         ok ? "1000 fuzzed rollout sets + the 2-module/3-rollout example" : why, elapsed);
}

// --- 4. padding semantics -----------------------------------------------------

void criterion_padding() {
  const auto start = Clock::now();
  Rng rng(0xACC4);
  bool ok = true;
  std::string why = "truncate keys exact, fill sizes exact, identical-structure agreement";
  for (int trial = 0; trial < 500 && ok; ++trial) {
    const int num_rollouts = 1 + static_cast<int>(rng.next_below(5));
    const bool identical_structure = rng.next_below(4) == 0;
    std::vector<RolloutRecord> rollouts(num_rollouts);
    std::vector<double> rewards(num_rollouts);
    std::map<std::string, int> min_calls, max_calls;
    std::vector<int> shared_shape;
    for (int m = 0; m < 2; ++m) shared_shape.push_back(static_cast<int>(rng.next_below(4)));
    for (int j = 0; j < num_rollouts; ++j) {
      rewards[j] = rng.next_double();
      std::map<std::string, int> counts;
      for (int m = 0; m < 2; ++m) {
        const std::string id = "mod" + std::to_string(m);
        const int calls =
            identical_structure ? shared_shape[m] : static_cast<int>(rng.next_below(4));
        for (int c = 0; c < calls; ++c)
          rollouts[j].trajectory.traces.push_back(
              {id, {j}, {c}, static_cast<int>(rollouts[j].trajectory.traces.size())});
        counts[id] = calls;
      }
      for (const auto& [id, c] : counts) {
        max_calls[id] = std::max(max_calls[id], c);
        if (auto it = min_calls.find(id); it != min_calls.end())
          it->second = std::min(it->second, c);
        else
          min_calls[id] = c;
      }
      rollouts[j].trajectory.status = TrajStatus::complete;
      rollouts[j].trajectory.final_output = StructuredValue{};
    }
    const std::vector<GrpoGroup> pre = align_module_groups(rollouts, rewards);
    const std::vector<GrpoGroup> truncated = pad_groups(pre, PaddingMode::truncate, num_rollouts);
    const std::vector<GrpoGroup> filled = pad_groups(pre, PaddingMode::fill, num_rollouts);

    std::set<GroupKey> expected_truncate;
    for (const auto& [id, kmin] : min_calls)
      for (int k = 0; k < kmin; ++k) expected_truncate.insert({id, k});
    std::set<GroupKey> got_truncate;
    for (const GrpoGroup& g : truncated) {
      got_truncate.insert(g.key);
      if (g.items.size() != static_cast<std::size_t>(num_rollouts)) ok = false;
    }
    if (got_truncate != expected_truncate) {
      ok = false;
      why = "truncate retained the wrong keys";
    }
    if (filled.size() != pre.size()) {
      ok = false;
      why = "fill dropped a group";
    }
    for (std::size_t gi = 0; gi < filled.size() && ok; ++gi) {
      if (filled[gi].items.size() != static_cast<std::size_t>(num_rollouts)) {
        ok = false;
        why = "fill missed the target size";
      }
      const std::size_t original = pre[gi].items.size();
      for (std::size_t k = 0; k < filled[gi].items.size(); ++k)
        if (filled[gi].items[k].is_padding_duplicate != (k >= original)) {
          ok = false;
          why = "duplicate flags misplaced";
        }
    }
    if (identical_structure && ok) {
      if (truncated.size() != filled.size()) {
        ok = false;
        why = "modes disagree on identical structure";
      }
      for (std::size_t gi = 0; gi < truncated.size() && ok; ++gi) {
        if (truncated[gi].key != filled[gi].key ||
            truncated[gi].items.size() != filled[gi].items.size()) {
          ok = false;
          why = "modes disagree on identical structure";
        }
        for (std::size_t k = 0; k < truncated[gi].items.size() && ok; ++k)
          if (truncated[gi].items[k].is_padding_duplicate ||
              filled[gi].items[k].is_padding_duplicate) {
            ok = false;
            why = "identical structure should need no padding";
          }
      }
    }
  }
  report(4, "padding semantics", ok, why, seconds_since(start));
}

// --- 5. diverse selection optimality ----------------------------------------

std::vector<std::size_t> exhaustive_max_variance(const std::vector<double>& rewards, int k) {
  const std::size_t n = rewards.size();
  std::vector<std::size_t> best, idx(static_cast<std::size_t>(k));
  double best_ss = -1.0;
  const std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos,
                                                                std::size_t from) {
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

void criterion_diverse_selection() {
  const auto start = Clock::now();
  Rng rng(0xACC5);
  bool ok = true;
  int cases = 0;
  for (int trial = 0; trial < 400 && ok; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_below(8));  // all |items| <= 8
    std::vector<GroupItem> items;
    std::vector<double> rewards;
    for (int i = 0; i < n; ++i) {
      const double r = rng.next_below(3) == 0 ? static_cast<double>(rng.next_below(2))
                                              : rng.next_double();
      items.push_back({{}, {0}, r, i, false});
      rewards.push_back(r);
    }
    for (int k = 1; k <= n && ok; ++k) {
      const std::vector<GroupItem> picked = select_k_diverse(items, k);
      const std::vector<std::size_t> expected = exhaustive_max_variance(rewards, k);
      if (picked.size() != static_cast<std::size_t>(k)) ok = false;
      for (int i = 0; i < k && ok; ++i)
        if (picked[i].source_trajectory != static_cast<int>(expected[i])) ok = false;
      ++cases;
    }
  }
  std::ostringstream detail;
  detail << cases << " (items, k) pairs vs exhaustive subset search";
  report(5, "diverse selection optimality", ok, detail.str(), seconds_since(start));
}

// --- 6. learning at desk scale ------------------------------------------------

void criterion_learning() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  for (const char* name : {"chain-2", "multihop-copy-2"}) {
    const BuiltinEnv env = make_builtin_env(name);
    const PolicyBank bank = make_uniform_bank(env.program, 2);
    TrainConfig cfg;  // defaults: B=4, 12 rollouts, G=12, eta=0.2, beta=0.01
    cfg.steps = 750;
    cfg.eval_every = 0;
    const double uniform = enumerate_expected_reward(env.program, bank, env.dataset[0], env.reward)
                               .expected_reward;
    if (uniform > 0.05 * env.optimal_expected_reward) {
      ok = false;
      detail << name << ": uniform baseline too strong; ";
      continue;
    }
    double mean_final = 0.0;
    double slowest_run = 0.0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      TrainConfig c = cfg;
      c.seed = seed;
      const auto run_start = Clock::now();
      const TrainResult result =
          train(env.program, make_snapshots(bank), {}, env.dataset, env.reward, c);
      slowest_run = std::max(slowest_run, seconds_since(run_start));
      mean_final += result.final_eval_reward;
    }
    mean_final /= 3.0;
    detail << name << ": mean final " << mean_final << " vs optimum "
           << env.optimal_expected_reward << " (uniform " << uniform << ", slowest run "
           << slowest_run << "s); ";
    if (mean_final < 0.85 * env.optimal_expected_reward) ok = false;
    if (slowest_run > 300.0) ok = false;  // five minutes per run
  }
  report(6, "learning at desk scale", ok, detail.str(), seconds_since(start));
}

// --- 7. staging trend ----------------------------------------------------------

void criterion_staging() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  for (const char* name : {"chain-2", "multihop-copy-2"}) {
    const BuiltinEnv env = make_builtin_env(name);
    const PolicyBank cold = make_uniform_bank(env.program, 2);
    TrainConfig warmup;
    warmup.steps = 400;
    warmup.seed = 1234;
    warmup.eval_every = 0;
    const TrainResult pre =
        train(env.program, make_snapshots(cold), {}, env.dataset, env.reward, warmup);
    int wins = 0;
    for (std::uint64_t seed : {11ull, 22ull, 33ull}) {
      TrainConfig cfg;
      cfg.steps = 150;
      cfg.seed = seed;
      cfg.eval_every = 0;
      const TrainResult plain =
          train(env.program, make_snapshots(cold), {}, env.dataset, env.reward, cfg);
      const TrainResult staged =
          better_together(env.program, pre.bank, {}, env.dataset, env.reward, cfg);
      wins += staged.final_eval_reward >= plain.final_eval_reward ? 1 : 0;
    }
    detail << name << ": staged >= plain on " << wins << "/3 seeds; ";
    if (wins < 2) ok = false;
  }
  report(7, "staging trend", ok, detail.str(), seconds_since(start));
}

// --- 8. invariances -------------------------------------------------------------

void criterion_invariances() {
  const auto start = Clock::now();
  bool ok = true;
  std::string why = "shift exact to 1e-9; teacher/reference bit-exact; runs bit-identical";

  Rng rng(0xACC8);
  for (int trial = 0; trial < 50 && ok; ++trial) {
    FuzzInstance f = random_instance(rng, false);
    const GroupLossReport base = group_objective(f.group, f.snapshots, f.cfg);
    GrpoGroup shifted = f.group;
    for (GroupItem& item : shifted.items) item.reward += 3.25;
    const GroupLossReport moved = group_objective(shifted, f.snapshots, f.cfg);
    for (std::size_t i = 0; i < base.advantages.size(); ++i)
      if (std::fabs(base.advantages[i] - moved.advantages[i]) > 1e-9) ok = false;
    if (std::fabs(base.objective - moved.objective) > 1e-9) ok = false;
    for (std::size_t i = 0; i < base.gradient.size(); ++i)
      if (std::fabs(base.gradient[i] - moved.gradient[i]) > 1e-9) ok = false;
    if (!ok) why = "reward-shift invariance violated";
  }

  const BuiltinEnv env = make_builtin_env("multihop-copy-2");
  const PolicyBank cold = make_uniform_bank(env.program, 2);
  TeacherSpec teacher;
  teacher.id = "expert";
  teacher.program = env.program;
  teacher.bank = make_uniform_bank(env.program, 2);
  Rng init(9);
  for (std::size_t s = 0; s < teacher.bank.slot_count(); ++s)
    teacher.bank.slot(s).init_random(init, 1.0);
  teacher.rollouts_per_example = 4;
  const std::vector<std::vector<double>> teacher_before = [&] {
    std::vector<std::vector<double>> copy;
    for (std::size_t s = 0; s < teacher.bank.slot_count(); ++s)
      copy.emplace_back(teacher.bank.slot(s).params().begin(),
                        teacher.bank.slot(s).params().end());
    return copy;
  }();

  TrainConfig cfg;
  cfg.steps = 40;
  cfg.seed = 77;
  cfg.student_rollouts = 8;
  cfg.eval_every = 20;
  const TrainResult a = train(env.program, make_snapshots(cold), {&teacher, 1}, env.dataset,
                              env.reward, cfg);
  const TrainResult b = train(env.program, make_snapshots(cold), {&teacher, 1}, env.dataset,
                              env.reward, cfg);

  for (std::size_t s = 0; s < teacher.bank.slot_count() && ok; ++s) {
    const std::span<const double> now = teacher.bank.slot(s).params();
    if (std::memcmp(now.data(), teacher_before[s].data(), now.size() * sizeof(double)) != 0) {
      ok = false;
      why = "teacher parameters moved";
    }
  }
  for (std::size_t s = 0; s < a.reference_bank.slot_count() && ok; ++s) {
    const std::span<const double> ref = a.reference_bank.slot(s).params();
    const std::span<const double> initial = cold.slot(s).params();
    if (ref.size() != initial.size() ||
        std::memcmp(ref.data(), initial.data(), ref.size() * sizeof(double)) != 0) {
      ok = false;
      why = "reference policy moved during the run";
    }
  }
  if (a.step_metrics.size() != b.step_metrics.size() ||
      a.group_metrics.size() != b.group_metrics.size())
    ok = false;
  for (std::size_t i = 0; i < a.step_metrics.size() && ok; ++i) {
    if (std::memcmp(&a.step_metrics[i].mean_rollout_reward,
                    &b.step_metrics[i].mean_rollout_reward, sizeof(double)) != 0 ||
        a.step_metrics[i].eval_reward != b.step_metrics[i].eval_reward) {
      ok = false;
      why = "seeded runs diverged";
    }
  }
  for (std::size_t i = 0; i < a.group_metrics.size() && ok; ++i)
    if (std::memcmp(&a.group_metrics[i].objective, &b.group_metrics[i].objective,
                    sizeof(double)) != 0) {
      ok = false;
      why = "seeded group metrics diverged";
    }
  for (std::size_t s = 0; s < a.bank.slot_count() && ok; ++s) {
    const std::span<const double> pa = a.bank.slot(s).params();
    const std::span<const double> pb = b.bank.slot(s).params();
    if (std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)) != 0) {
      ok = false;
      why = "seeded final banks diverged";
    }
  }
  report(8, "invariances", ok, why, seconds_since(start));
}

// --- 9. sampling consistency -----------------------------------------------------

void criterion_sampling() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  Rng init(0xACC9);
  for (const char* name : {"chain-2", "branch", "multihop-copy-1"}) {
    const BuiltinEnv env = make_builtin_env(name);
    PolicyBank bank = make_uniform_bank(env.program, 2);
    for (std::size_t s = 0; s < bank.slot_count(); ++s) bank.slot(s).init_random(init, 0.6);
    const EnumerationReport exact =
        enumerate_expected_reward(env.program, bank, env.dataset[0], env.reward);
    if (std::fabs(exact.probability_mass - 1.0) > 1e-9) ok = false;
    const int n = 50000;
    const double estimate =
        mc_expected_reward(env.program, bank, env.dataset[0], env.reward, n, 0x9A41);
    const double sigma = std::sqrt(exact.reward_variance() / n);
    const double gap = std::fabs(estimate - exact.expected_reward);
    detail << name << ": |mc - exact| = " << gap << " vs 3 sigma = " << 3.0 * sigma << "; ";
    if (gap > 3.0 * sigma) ok = false;
  }
  report(9, "sampling consistency", ok, detail.str(), seconds_since(start));
}

}  // namespace

int main() {
  criterion_equivalence();
  criterion_gradient();
  criterion_group_formation();
  criterion_padding();
  criterion_diverse_selection();
  criterion_learning();
  criterion_staging();
  criterion_invariances();
  criterion_sampling();
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
