#include "mmgrpo/envs.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

#include "mmgrpo/rng.hpp"

namespace mmgrpo {

namespace {

// "chain-3" -> 3; "chain" -> nullopt; anything else malformed -> throw.
std::optional<int> parse_name_suffix(const std::string& name, const std::string& prefix) {
  if (name == prefix) return std::nullopt;
  if (name.size() <= prefix.size() + 1 || name.compare(0, prefix.size(), prefix) != 0 ||
      name[prefix.size()] != '-')
    throw std::invalid_argument("unknown environment: " + name);
  int value = 0;
  const char* first = name.data() + prefix.size() + 1;
  const char* last = name.data() + name.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || value < 1)
    throw std::invalid_argument("bad size suffix in environment name: " + name);
  return value;
}

ModuleSpec make_module(std::string id, int tag, const EnvParams& p) {
  ModuleSpec m;
  m.module_id = std::move(id);
  m.vocab_size = p.vocab;
  m.max_output_len = p.out_len;
  m.eos_token = p.vocab - 1;
  m.prompt_template = [tag](const StructuredValue& input) {
    TokenSeq prompt;
    prompt.push_back(tag);
    prompt.insert(prompt.end(), input.begin(), input.end());
    return prompt;
  };
  return m;
}

// All built-ins score an exact match between the final output and the
// metadata-held gold record.
double exact_match_reward(const StructuredValue& y, const Trajectory&, const StructuredValue& m) {
  return y == m ? 1.0 : 0.0;
}

// Deterministic token -> evidence map for multihop-copy.
int evidence_of(int token, int vocab) { return (3 * token + 1) % vocab; }

std::vector<DatasetExample> draw_examples(const EnvParams& p, int keys_per_example,
                                          std::uint64_t salt) {
  Rng rng(derive_seed(p.dataset_seed, salt));
  std::vector<DatasetExample> out(p.dataset_size);
  for (DatasetExample& ex : out) {
    ex.input.resize(keys_per_example);
    // keys avoid the reserved end-token
    for (int& k : ex.input) k = static_cast<int>(rng.next_below(p.vocab - 1));
  }
  return out;
}

void check_params(const EnvParams& p) {
  if (p.vocab < 2) throw std::invalid_argument("builtin envs need vocab >= 2");
  if (p.out_len < 1) throw std::invalid_argument("out_len must be >= 1");
  if (p.dataset_size < 1) throw std::invalid_argument("dataset_size must be >= 1");
}

BuiltinEnv make_chain(const EnvParams& p) {
  if (p.chain_len < 1) throw std::invalid_argument("chain needs chain_len >= 1");
  const int k = p.chain_len;
  BuiltinEnv env;
  env.name = "chain-" + std::to_string(k);
  for (int i = 0; i < k; ++i)
    env.program.modules.push_back(make_module("step" + std::to_string(i + 1), i % p.vocab, p));
  env.program.max_invocations = k;
  env.program.control_flow = [k](const StructuredValue& x,
                                 std::span<const ModuleCallView> history) -> ControlDecision {
    const int done = static_cast<int>(history.size());
    if (done < k) return NextCall{"step" + std::to_string(done + 1), {x.at(done)}};
    StructuredValue y;
    for (const ModuleCallView& call : history) y.push_back(call.output.front());
    return Halt{std::move(y)};
  };
  env.dataset = draw_examples(p, k, 0xC4A1);
  for (DatasetExample& ex : env.dataset) ex.metadata = ex.input;  // gold: echo every key
  env.reward = exact_match_reward;
  env.optimal_expected_reward = 1.0;
  env.uniform_expected_reward = std::pow(1.0 / p.vocab, k);
  return env;
}

BuiltinEnv make_branch(const EnvParams& p) {
  BuiltinEnv env;
  env.name = "branch";
  env.program.modules.push_back(make_module("router", 0 % p.vocab, p));
  env.program.modules.push_back(make_module("respond_even", 1 % p.vocab, p));
  env.program.modules.push_back(make_module("respond_odd", 2 % p.vocab, p));
  env.program.max_invocations = 2;
  env.program.control_flow = [](const StructuredValue& x,
                                std::span<const ModuleCallView> history) -> ControlDecision {
    if (history.empty()) return NextCall{"router", {x.at(0)}};
    if (history.size() == 1) {
      const bool even = history[0].output.front() % 2 == 0;
      return NextCall{even ? "respond_even" : "respond_odd", {x.at(0)}};
    }
    return Halt{{history[1].output.front()}};
  };
  env.dataset = draw_examples(p, 1, 0xB4A2);
  for (DatasetExample& ex : env.dataset) ex.metadata = ex.input;
  env.reward = exact_match_reward;
  env.optimal_expected_reward = 1.0;
  env.uniform_expected_reward = 1.0 / p.vocab;
  return env;
}

BuiltinEnv make_multihop(const EnvParams& p) {
  if (p.hops < 1) throw std::invalid_argument("multihop-copy needs hops >= 1");
  const int h = p.hops;
  const int vocab = p.vocab;
  BuiltinEnv env;
  env.name = "multihop-copy-" + std::to_string(h);
  env.program.modules.push_back(make_module("query", 0 % p.vocab, p));
  env.program.modules.push_back(make_module("answer", 1 % p.vocab, p));
  env.program.max_invocations = h + 1;
  env.program.control_flow = [h, vocab](const StructuredValue& x,
                                        std::span<const ModuleCallView> history) -> ControlDecision {
    const int done = static_cast<int>(history.size());
    if (done == 0) return NextCall{"query", {x.at(0)}};
    const int last_evidence = evidence_of(history.back().output.front(), vocab);
    if (done < h) return NextCall{"query", {last_evidence}};
    if (done == h) return NextCall{"answer", {last_evidence}};
    StructuredValue y;
    for (const ModuleCallView& call : history) y.push_back(call.output.front());
    return Halt{std::move(y)};
  };
  env.dataset = draw_examples(p, 1, 0x4097);
  for (DatasetExample& ex : env.dataset) {
    // Gold: follow the evidence chain from the start token.
    int q = ex.input.at(0);
    for (int i = 0; i < h; ++i) {
      ex.metadata.push_back(q);
      q = evidence_of(q, vocab);
    }
    ex.metadata.push_back(q);
  }
  env.reward = exact_match_reward;
  env.optimal_expected_reward = 1.0;
  env.uniform_expected_reward = std::pow(1.0 / p.vocab, h + 1);
  return env;
}

}  // namespace

BuiltinEnv make_builtin_env(const std::string& name, const EnvParams& params) {
  check_params(params);
  if (name == "chain" || name.rfind("chain-", 0) == 0) {
    EnvParams p = params;
    if (auto k = parse_name_suffix(name, "chain")) p.chain_len = *k;
    return make_chain(p);
  }
  if (name == "branch") return make_branch(params);
  if (name == "multihop-copy" || name.rfind("multihop-copy-", 0) == 0) {
    EnvParams p = params;
    if (auto h = parse_name_suffix(name, "multihop-copy")) p.hops = *h;
    return make_multihop(p);
  }
  throw std::invalid_argument("unknown environment: " + name);
}

}  // namespace mmgrpo
