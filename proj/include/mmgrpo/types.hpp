#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmgrpo {

// Token ids are integers in [0, V) for the owning module's vocabulary size V.
using TokenSeq = std::vector<int>;

// Structured values (program inputs, module inputs, final outputs, metadata)
// are encoded as small integer records.
using StructuredValue = std::vector<int>;

enum class TrajStatus { complete, parse_failure, early_termination, length_overflow };

const char* to_string(TrajStatus status);
TrajStatus traj_status_from_string(std::string_view text);

// One module invocation: which module ran, the materialized prompt it saw and
// the output it sampled.
struct Trace {
  std::string module_id;
  TokenSeq prompt;
  TokenSeq output;
  int invocation_index_global = 0;
};

struct Trajectory {
  std::vector<Trace> traces;
  std::optional<StructuredValue> final_output;  // present iff status == complete
  TrajStatus status = TrajStatus::complete;
  int program_input_id = -1;

  bool complete() const { return status == TrajStatus::complete; }
};

// Dataset rows pair a program input with evaluation-only metadata. The
// metadata never reaches program execution; only reward functions see it.
struct DatasetExample {
  StructuredValue input;
  StructuredValue metadata;
};

// Scores a finished execution. Must be total on complete trajectories;
// incomplete trajectories are never scored (a fallback reward applies).
using RewardFn = std::function<double(const StructuredValue& final_output,
                                      const Trajectory& trajectory,
                                      const StructuredValue& metadata)>;

}  // namespace mmgrpo
