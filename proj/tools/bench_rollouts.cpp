#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "mmgrpo/envs.hpp"
#include "mmgrpo/rollout.hpp"

using namespace mmgrpo;
using Clock = std::chrono::steady_clock;

namespace {

double seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

bool same_records(const std::vector<RolloutRecord>& a, const std::vector<RolloutRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Trajectory& x = a[i].trajectory;
    const Trajectory& y = b[i].trajectory;
    if (x.status != y.status || x.final_output != y.final_output ||
        x.traces.size() != y.traces.size())
      return false;
    for (std::size_t t = 0; t < x.traces.size(); ++t)
      if (x.traces[t].module_id != y.traces[t].module_id ||
          x.traces[t].prompt != y.traces[t].prompt || x.traces[t].output != y.traces[t].output)
        return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP rollout collection benchmark"};
  std::string env_name = "multihop-copy-4";
  int vocab = 16;
  int out_len = 6;
  int rollouts = 20000;
  int mc_samples = 50000;
  int repeats = 3;
  app.add_option("--env", env_name, "builtin environment name");
  app.add_option("--vocab", vocab, "vocabulary size");
  app.add_option("--out-len", out_len, "max output tokens per module call");
  app.add_option("--rollouts", rollouts, "rollouts per timed repetition");
  app.add_option("--mc-samples", mc_samples, "samples for the expected-reward kernel");
  app.add_option("--repeats", repeats, "timed repetitions (best is reported)");
  CLI11_PARSE(app, argc, argv);

  EnvParams params;
  params.vocab = vocab;
  params.out_len = out_len;
  const BuiltinEnv env = make_builtin_env(env_name, params);
  PolicyBank bank = make_uniform_bank(env.program, 2);
  {
    // jittered half-trained copy policy: keeps rewards (and branch decisions)
    // off the degenerate all-zero floor
    Rng init(7);
    for (std::size_t s = 0; s < bank.slot_count(); ++s) {
      ModulePolicy& p = bank.slot(s);
      p.init_random(init, 0.5);
      const int v = p.vocab_size();
      for (std::size_t row = 0; row * v < p.param_count(); ++row) {
        const int last = static_cast<int>(row % (v + 1));
        if (last < v) p.params()[row * v + last] += 2.0;
      }
    }
  }

  std::vector<RolloutPlan> plans;
  plans.reserve(rollouts);
  for (int i = 0; i < rollouts; ++i)
    plans.push_back({&env.program, &bank, &env.dataset[i % env.dataset.size()].input,
                     i % static_cast<int>(env.dataset.size()), "student", derive_seed(99, 0xB, i)});

#ifdef _OPENMP
  std::printf("environment %s, %d rollouts, %d OpenMP threads\n", env.name.c_str(), rollouts,
              omp_get_max_threads());
#else
  std::printf("environment %s, %d rollouts, OpenMP disabled\n", env.name.c_str(), rollouts);
#endif

  double best_serial = 1e300, best_parallel = 1e300;
  std::vector<RolloutRecord> serial_records, parallel_records;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    serial_records = collect_rollouts_serial(plans);
    auto t1 = Clock::now();
    parallel_records = collect_rollouts(plans);
    auto t2 = Clock::now();
    best_serial = std::min(best_serial, seconds(t0, t1));
    best_parallel = std::min(best_parallel, seconds(t1, t2));
  }
  if (!same_records(serial_records, parallel_records)) {
    std::printf("FAIL: serial and parallel rollouts differ\n");
    return 1;
  }
  std::printf("collect_rollouts   serial %8.3fs   parallel %8.3fs   speedup %.2fx\n", best_serial,
              best_parallel, best_serial / best_parallel);

  double best_mc_serial = 1e300, best_mc_parallel = 1e300;
  double serial_estimate = 0.0, parallel_estimate = 0.0;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    serial_estimate =
        mc_expected_reward_serial(env.program, bank, env.dataset[0], env.reward, mc_samples, 4242);
    auto t1 = Clock::now();
    parallel_estimate =
        mc_expected_reward(env.program, bank, env.dataset[0], env.reward, mc_samples, 4242);
    auto t2 = Clock::now();
    best_mc_serial = std::min(best_mc_serial, seconds(t0, t1));
    best_mc_parallel = std::min(best_mc_parallel, seconds(t1, t2));
  }
  if (serial_estimate != parallel_estimate) {
    std::printf("FAIL: serial and parallel reward estimates differ\n");
    return 1;
  }
  std::printf("mc_expected_reward serial %8.3fs   parallel %8.3fs   speedup %.2fx\n",
              best_mc_serial, best_mc_parallel, best_mc_serial / best_mc_parallel);
  std::printf("estimates agree bitwise (%.17g)\n", serial_estimate);
  return 0;
}
