#pragma once

#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mmgrpo/policy.hpp"
#include "mmgrpo/rng.hpp"
#include "mmgrpo/types.hpp"

namespace mmgrpo {

// What control flow is allowed to observe about a finished module call:
// the module id and its output, never the materialized prompt. Together with
// prompt templates being functions of the module's own structured input only,
// this keeps module contexts disjoint by construction.
struct ModuleCallView {
  std::string module_id;
  TokenSeq output;
};

struct NextCall {
  std::string module_id;
  StructuredValue input;
};

struct Halt {
  StructuredValue final_output;
};

using ControlDecision = std::variant<NextCall, Halt>;

struct ModuleSpec {
  std::string module_id;
  int vocab_size = 0;
  int max_output_len = 1;
  // Designated end-token for this module's outputs (built-in environments
  // reserve id vocab_size - 1). Copied onto policies built for the module.
  std::optional<int> eos_token;
  // Pure transform from the module's structured input to its prompt tokens.
  std::function<TokenSeq(const StructuredValue&)> prompt_template;
  // Optional output acceptance predicate; a false verdict aborts the
  // trajectory with parse_failure.
  std::function<bool(const TokenSeq&)> parse_check;
  // If set, an output that exhausts max_output_len without emitting the
  // policy's end-token aborts the trajectory with length_overflow.
  bool require_eos = false;
};

// Deterministic program skeleton: all stochasticity enters through module
// outputs, which keeps small instances exhaustively enumerable.
struct ProgramSpec {
  std::vector<ModuleSpec> modules;
  std::function<ControlDecision(const StructuredValue& x, std::span<const ModuleCallView> history)>
      control_flow;
  int max_invocations = 16;

  const ModuleSpec& module(const std::string& id) const;
  void validate() const;
};

// Runs the program once under the given policy bank. Reproducible given the
// rng seed; never mutates policies; never exceeds max_invocations.
Trajectory execute_program(const ProgramSpec& program, const PolicyBank& policies,
                           const StructuredValue& x, Rng& rng, int program_input_id = -1);

// Builds an all-zero-logit (uniform) bank matching the program's modules.
// With share_all, every module id aliases one parameter slot (modules must
// then agree on vocabulary and output length shape).
PolicyBank make_uniform_bank(const ProgramSpec& program, int context_window,
                             PolicyKind kind = PolicyKind::table, int hidden_size = 16,
                             bool share_all = false);

}  // namespace mmgrpo
