#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmgrpo/rng.hpp"
#include "mmgrpo/types.hpp"

namespace mmgrpo {

enum class PolicyKind { table, mlp };

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(std::string_view text);

// Autoregressive softmax policy over a token vocabulary.
//
// The conditioning context for each emitted token is the last
// `context_window` tokens of (prompt ++ output-so-far), left-padded with a
// BOS sentinel (token id == vocab_size) when fewer tokens exist. Two
// parameterizations share this interface:
//   table — one logit row per possible context, exact and enumerable;
//   mlp   — a small two-layer map from one-hot context features to logits.
// Parameters are a flat double vector in both cases, so gradients and
// optimizer updates are representation-agnostic.
class ModulePolicy {
 public:
  ModulePolicy() = default;

  static ModulePolicy make_table(std::string name, int vocab_size, int context_window,
                                 std::optional<int> eos_token = std::nullopt);
  static ModulePolicy make_mlp(std::string name, int vocab_size, int context_window,
                               int hidden_size, std::optional<int> eos_token = std::nullopt);

  const std::string& name() const { return name_; }
  PolicyKind kind() const { return kind_; }
  int vocab_size() const { return vocab_size_; }
  int context_window() const { return context_window_; }
  int hidden_size() const { return hidden_size_; }
  std::optional<int> eos_token() const { return eos_token_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::size_t param_count() const { return params_.size(); }

  void init_random(Rng& rng, double scale);

  // Context before emitting output[t]: last context_window tokens of
  // (prompt ++ output[0..t)), BOS-padded on the left.
  std::vector<int> context_at(const TokenSeq& prompt, const TokenSeq& output, int t) const;

  std::vector<double> logits_at(std::span<const int> context) const;
  std::vector<double> probs_at(std::span<const int> context) const;
  std::vector<double> log_probs_at(std::span<const int> context) const;

  // Accumulates d/dtheta sum_t <dlogits[t], logits(context_t)> into grad.
  // dlogits has one row of length vocab_size per output position. grad must
  // have param_count() entries.
  void accumulate_logit_grad(const TokenSeq& prompt, const TokenSeq& output,
                             const std::vector<std::vector<double>>& dlogits,
                             std::span<double> grad) const;

  bool same_shape(const ModulePolicy& other) const;

 private:
  std::string name_;
  PolicyKind kind_ = PolicyKind::table;
  int vocab_size_ = 0;
  int context_window_ = 0;
  int hidden_size_ = 0;
  std::optional<int> eos_token_;
  std::vector<double> params_;

  std::size_t context_row(std::span<const int> context) const;
  void check_context(std::span<const int> context) const;

  friend class PolicyBank;
  friend ModulePolicy rebuild_policy(std::string name, PolicyKind kind, int vocab, int ctx,
                                     int hidden, std::optional<int> eos,
                                     std::vector<double> params);
};

// Used by checkpoint loading.
ModulePolicy rebuild_policy(std::string name, PolicyKind kind, int vocab, int ctx, int hidden,
                            std::optional<int> eos, std::vector<double> params);

// Per-token log-probabilities of `output` given `prompt`:
// entry t is log p(output[t] | prompt, output[<t]).
std::vector<double> log_prob(const ModulePolicy& policy, const TokenSeq& prompt,
                             const TokenSeq& output);

// Autoregressive sampling; halts after emitting the policy's end-token (which
// is included in the output) or at max_len.
TokenSeq sample_output(const ModulePolicy& policy, const TokenSeq& prompt, Rng& rng, int max_len);

// d/dtheta sum_t log p(output[t] | prompt, output[<t]).
std::vector<double> grad_log_prob(const ModulePolicy& policy, const TokenSeq& prompt,
                                  const TokenSeq& output);

// Maps module ids onto policy slots; aliased module ids share one slot, so
// an update through either module id is observed by both. Copying the bank
// deep-copies every slot.
class PolicyBank {
 public:
  // Registers one policy serving all of module_ids (aliases when > 1).
  void add_policy(ModulePolicy policy, const std::vector<std::string>& module_ids);

  bool contains(const std::string& module_id) const;
  const ModulePolicy& policy_for(const std::string& module_id) const;
  ModulePolicy& policy_for(const std::string& module_id);

  std::size_t slot_count() const { return slots_.size(); }
  const ModulePolicy& slot(std::size_t i) const { return slots_.at(i); }
  ModulePolicy& slot(std::size_t i) { return slots_.at(i); }
  std::size_t slot_of(const std::string& module_id) const;

  // module id -> slot index, in deterministic (sorted) order.
  const std::map<std::string, std::size_t>& sharing_map() const { return index_; }

 private:
  std::vector<ModulePolicy> slots_;
  std::map<std::string, std::size_t> index_;
};

// The three policy views the objective needs: the updated policy, the frozen
// sampling-time policy, and the frozen training-start reference.
struct SnapshotSet {
  PolicyBank current;
  PolicyBank old_policy;
  PolicyBank reference;
};

SnapshotSet make_snapshots(PolicyBank bank);

// old := copy(current); reference is never touched.
void snapshot_refresh(SnapshotSet& snapshots);

}  // namespace mmgrpo
