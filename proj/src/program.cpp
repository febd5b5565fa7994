#include "mmgrpo/program.hpp"

#include <set>
#include <stdexcept>

namespace mmgrpo {

const ModuleSpec& ProgramSpec::module(const std::string& id) const {
  for (const ModuleSpec& m : modules)
    if (m.module_id == id) return m;
  throw std::out_of_range("control flow referenced undeclared module: " + id);
}

void ProgramSpec::validate() const {
  if (modules.empty()) throw std::invalid_argument("program has no modules");
  if (!control_flow) throw std::invalid_argument("program has no control flow");
  if (max_invocations < 0) throw std::invalid_argument("max_invocations must be >= 0");
  std::set<std::string> seen;
  for (const ModuleSpec& m : modules) {
    if (!seen.insert(m.module_id).second)
      throw std::invalid_argument("duplicate module id: " + m.module_id);
    if (m.vocab_size < 1) throw std::invalid_argument(m.module_id + ": vocab_size must be >= 1");
    if (m.max_output_len < 1)
      throw std::invalid_argument(m.module_id + ": max_output_len must be >= 1");
    if (!m.prompt_template) throw std::invalid_argument(m.module_id + ": missing prompt_template");
    if (m.eos_token && (*m.eos_token < 0 || *m.eos_token >= m.vocab_size))
      throw std::invalid_argument(m.module_id + ": eos_token out of vocabulary");
    if (m.require_eos && !m.eos_token)
      throw std::invalid_argument(m.module_id + ": require_eos needs an eos_token");
  }
}

Trajectory execute_program(const ProgramSpec& program, const PolicyBank& policies,
                           const StructuredValue& x, Rng& rng, int program_input_id) {
  Trajectory traj;
  traj.program_input_id = program_input_id;
  std::vector<ModuleCallView> history;

  while (true) {
    ControlDecision decision = program.control_flow(x, history);
    if (std::holds_alternative<Halt>(decision)) {
      traj.final_output = std::move(std::get<Halt>(decision).final_output);
      traj.status = TrajStatus::complete;
      return traj;
    }
    if (static_cast<int>(traj.traces.size()) >= program.max_invocations) {
      traj.status = TrajStatus::early_termination;
      return traj;
    }

    NextCall& call = std::get<NextCall>(decision);
    const ModuleSpec& mod = program.module(call.module_id);
    const ModulePolicy& policy = policies.policy_for(call.module_id);

    Trace trace;
    trace.module_id = call.module_id;
    trace.prompt = mod.prompt_template(call.input);
    trace.output = sample_output(policy, trace.prompt, rng, mod.max_output_len);
    trace.invocation_index_global = static_cast<int>(traj.traces.size());
    traj.traces.push_back(trace);

    if (mod.parse_check && !mod.parse_check(trace.output)) {
      traj.status = TrajStatus::parse_failure;
      return traj;
    }
    if (mod.require_eos &&
        (trace.output.empty() || trace.output.back() != *policy.eos_token())) {
      traj.status = TrajStatus::length_overflow;
      return traj;
    }

    history.push_back({trace.module_id, trace.output});
  }
}

PolicyBank make_uniform_bank(const ProgramSpec& program, int context_window, PolicyKind kind,
                             int hidden_size, bool share_all) {
  program.validate();
  PolicyBank bank;
  if (share_all) {
    const ModuleSpec& first = program.modules.front();
    std::vector<std::string> ids;
    for (const ModuleSpec& m : program.modules) {
      if (m.vocab_size != first.vocab_size || m.eos_token != first.eos_token)
        throw std::invalid_argument("shared bank requires structurally identical modules");
      ids.push_back(m.module_id);
    }
    ModulePolicy p = kind == PolicyKind::table
                         ? ModulePolicy::make_table("shared", first.vocab_size, context_window,
                                                    first.eos_token)
                         : ModulePolicy::make_mlp("shared", first.vocab_size, context_window,
                                                  hidden_size, first.eos_token);
    bank.add_policy(std::move(p), ids);
    return bank;
  }
  for (const ModuleSpec& m : program.modules) {
    ModulePolicy p = kind == PolicyKind::table
                         ? ModulePolicy::make_table(m.module_id, m.vocab_size, context_window,
                                                    m.eos_token)
                         : ModulePolicy::make_mlp(m.module_id, m.vocab_size, context_window,
                                                  hidden_size, m.eos_token);
    bank.add_policy(std::move(p), {m.module_id});
  }
  return bank;
}

}  // namespace mmgrpo
