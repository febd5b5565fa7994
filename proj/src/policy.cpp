#include "mmgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmgrpo {

const char* to_string(PolicyKind kind) {
  return kind == PolicyKind::table ? "table" : "mlp";
}

PolicyKind policy_kind_from_string(std::string_view text) {
  if (text == "table") return PolicyKind::table;
  if (text == "mlp") return PolicyKind::mlp;
  throw std::invalid_argument("unknown policy kind: " + std::string(text));
}

namespace {

std::size_t checked_table_rows(int vocab, int ctx) {
  // One row per context key over the alphabet {0..V-1, BOS}.
  std::size_t rows = 1;
  for (int i = 0; i < ctx; ++i) {
    rows *= static_cast<std::size_t>(vocab) + 1;
    if (rows > (1u << 24)) throw std::invalid_argument("context table too large; reduce vocab or context_window");
  }
  return rows;
}

void validate_shape(int vocab, int ctx, std::optional<int> eos) {
  if (vocab < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (ctx < 1) throw std::invalid_argument("context_window must be >= 1");
  if (eos && (*eos < 0 || *eos >= vocab)) throw std::invalid_argument("eos_token out of vocabulary");
}

}  // namespace

ModulePolicy ModulePolicy::make_table(std::string name, int vocab_size, int context_window,
                                      std::optional<int> eos_token) {
  validate_shape(vocab_size, context_window, eos_token);
  ModulePolicy p;
  p.name_ = std::move(name);
  p.kind_ = PolicyKind::table;
  p.vocab_size_ = vocab_size;
  p.context_window_ = context_window;
  p.eos_token_ = eos_token;
  p.params_.assign(checked_table_rows(vocab_size, context_window) * vocab_size, 0.0);
  return p;
}

ModulePolicy ModulePolicy::make_mlp(std::string name, int vocab_size, int context_window,
                                    int hidden_size, std::optional<int> eos_token) {
  validate_shape(vocab_size, context_window, eos_token);
  if (hidden_size < 1) throw std::invalid_argument("hidden_size must be >= 1");
  ModulePolicy p;
  p.name_ = std::move(name);
  p.kind_ = PolicyKind::mlp;
  p.vocab_size_ = vocab_size;
  p.context_window_ = context_window;
  p.hidden_size_ = hidden_size;
  p.eos_token_ = eos_token;
  const std::size_t in = static_cast<std::size_t>(context_window) * (vocab_size + 1);
  const std::size_t n = static_cast<std::size_t>(hidden_size) * in + hidden_size +
                        static_cast<std::size_t>(vocab_size) * hidden_size + vocab_size;
  p.params_.assign(n, 0.0);
  return p;
}

ModulePolicy rebuild_policy(std::string name, PolicyKind kind, int vocab, int ctx, int hidden,
                            std::optional<int> eos, std::vector<double> params) {
  ModulePolicy p = kind == PolicyKind::table
                       ? ModulePolicy::make_table(std::move(name), vocab, ctx, eos)
                       : ModulePolicy::make_mlp(std::move(name), vocab, ctx, hidden, eos);
  if (params.size() != p.params_.size())
    throw std::invalid_argument("parameter array size does not match policy shape");
  p.params_ = std::move(params);
  return p;
}

void ModulePolicy::init_random(Rng& rng, double scale) {
  for (double& w : params_) w = scale * (2.0 * rng.next_double() - 1.0);
}

std::vector<int> ModulePolicy::context_at(const TokenSeq& prompt, const TokenSeq& output,
                                          int t) const {
  std::vector<int> ctx(context_window_, vocab_size_);  // BOS sentinel
  // Walk backwards over output[0..t) then the prompt.
  int slot = context_window_ - 1;
  for (int i = t - 1; i >= 0 && slot >= 0; --i) ctx[slot--] = output[i];
  for (int i = static_cast<int>(prompt.size()) - 1; i >= 0 && slot >= 0; --i)
    ctx[slot--] = prompt[i];
  return ctx;
}

void ModulePolicy::check_context(std::span<const int> context) const {
  if (static_cast<int>(context.size()) != context_window_)
    throw std::invalid_argument("context length must equal context_window");
  for (int tok : context)
    if (tok < 0 || tok > vocab_size_)
      throw std::out_of_range("context token out of vocabulary");
}

std::size_t ModulePolicy::context_row(std::span<const int> context) const {
  std::size_t key = 0;
  for (int tok : context) key = key * (vocab_size_ + 1) + static_cast<std::size_t>(tok);
  return key;
}

std::vector<double> ModulePolicy::logits_at(std::span<const int> context) const {
  check_context(context);
  const int v = vocab_size_;
  if (kind_ == PolicyKind::table) {
    const std::size_t off = context_row(context) * v;
    return std::vector<double>(params_.begin() + off, params_.begin() + off + v);
  }
  // mlp: one-hot(context) -> tanh hidden -> logits
  const int in = context_window_ * (v + 1);
  const int h = hidden_size_;
  const double* w1 = params_.data();                   // [h][in]
  const double* b1 = w1 + static_cast<std::size_t>(h) * in;
  const double* w2 = b1 + h;                           // [v][h]
  const double* b2 = w2 + static_cast<std::size_t>(v) * h;
  std::vector<double> hidden(h);
  for (int j = 0; j < h; ++j) {
    double acc = b1[j];
    for (int s = 0; s < context_window_; ++s)
      acc += w1[static_cast<std::size_t>(j) * in + s * (v + 1) + context[s]];
    hidden[j] = std::tanh(acc);
  }
  std::vector<double> logits(v);
  for (int u = 0; u < v; ++u) {
    double acc = b2[u];
    for (int j = 0; j < h; ++j) acc += w2[static_cast<std::size_t>(u) * h + j] * hidden[j];
    logits[u] = acc;
  }
  return logits;
}

std::vector<double> ModulePolicy::probs_at(std::span<const int> context) const {
  std::vector<double> z = logits_at(context);
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& x : z) {
    x = std::exp(x - zmax);
    sum += x;
  }
  for (double& x : z) x /= sum;
  return z;
}

std::vector<double> ModulePolicy::log_probs_at(std::span<const int> context) const {
  std::vector<double> z = logits_at(context);
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double x : z) sum += std::exp(x - zmax);
  const double lse = zmax + std::log(sum);
  for (double& x : z) x -= lse;
  return z;
}

void ModulePolicy::accumulate_logit_grad(const TokenSeq& prompt, const TokenSeq& output,
                                         const std::vector<std::vector<double>>& dlogits,
                                         std::span<double> grad) const {
  if (dlogits.size() != output.size())
    throw std::invalid_argument("one dlogits row per output position required");
  if (grad.size() != params_.size())
    throw std::invalid_argument("grad buffer size mismatch");
  const int v = vocab_size_;
  for (int t = 0; t < static_cast<int>(output.size()); ++t) {
    const std::vector<int> ctx = context_at(prompt, output, t);
    const std::vector<double>& dz = dlogits[t];
    if (static_cast<int>(dz.size()) != v) throw std::invalid_argument("dlogits row size mismatch");
    if (kind_ == PolicyKind::table) {
      const std::size_t off = context_row(ctx) * v;
      for (int u = 0; u < v; ++u) grad[off + u] += dz[u];
      continue;
    }
    // mlp backprop through the forward pass in logits_at
    const int in = context_window_ * (v + 1);
    const int h = hidden_size_;
    const double* w1 = params_.data();
    const double* b1 = w1 + static_cast<std::size_t>(h) * in;
    const double* w2 = b1 + h;
    double* g_w1 = grad.data();
    double* g_b1 = g_w1 + static_cast<std::size_t>(h) * in;
    double* g_w2 = g_b1 + h;
    double* g_b2 = g_w2 + static_cast<std::size_t>(v) * h;
    std::vector<double> hidden(h);
    for (int j = 0; j < h; ++j) {
      double acc = b1[j];
      for (int s = 0; s < context_window_; ++s)
        acc += w1[static_cast<std::size_t>(j) * in + s * (v + 1) + ctx[s]];
      hidden[j] = std::tanh(acc);
    }
    std::vector<double> dhidden(h, 0.0);
    for (int u = 0; u < v; ++u) {
      g_b2[u] += dz[u];
      for (int j = 0; j < h; ++j) {
        g_w2[static_cast<std::size_t>(u) * h + j] += dz[u] * hidden[j];
        dhidden[j] += dz[u] * w2[static_cast<std::size_t>(u) * h + j];
      }
    }
    for (int j = 0; j < h; ++j) {
      const double dpre = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
      g_b1[j] += dpre;
      for (int s = 0; s < context_window_; ++s)
        g_w1[static_cast<std::size_t>(j) * in + s * (v + 1) + ctx[s]] += dpre;
    }
  }
}

bool ModulePolicy::same_shape(const ModulePolicy& other) const {
  return kind_ == other.kind_ && vocab_size_ == other.vocab_size_ &&
         context_window_ == other.context_window_ && hidden_size_ == other.hidden_size_ &&
         eos_token_ == other.eos_token_;
}

std::vector<double> log_prob(const ModulePolicy& policy, const TokenSeq& prompt,
                             const TokenSeq& output) {
  if (output.empty()) throw std::invalid_argument("log_prob: output must be nonempty");
  for (int tok : prompt)
    if (tok < 0 || tok >= policy.vocab_size()) throw std::out_of_range("prompt token out of vocabulary");
  for (int tok : output)
    if (tok < 0 || tok >= policy.vocab_size()) throw std::out_of_range("output token out of vocabulary");
  std::vector<double> out(output.size());
  for (int t = 0; t < static_cast<int>(output.size()); ++t) {
    const std::vector<int> ctx = policy.context_at(prompt, output, t);
    out[t] = policy.log_probs_at(ctx)[output[t]];
  }
  return out;
}

TokenSeq sample_output(const ModulePolicy& policy, const TokenSeq& prompt, Rng& rng, int max_len) {
  if (max_len < 1) throw std::invalid_argument("sample_output: max_len must be >= 1");
  TokenSeq out;
  out.reserve(max_len);
  for (int t = 0; t < max_len; ++t) {
    const std::vector<int> ctx = policy.context_at(prompt, out, t);
    const std::vector<double> probs = policy.probs_at(ctx);
    const int tok = rng.categorical(probs);
    out.push_back(tok);
    if (policy.eos_token() && tok == *policy.eos_token()) break;
  }
  return out;
}

std::vector<double> grad_log_prob(const ModulePolicy& policy, const TokenSeq& prompt,
                                  const TokenSeq& output) {
  std::vector<std::vector<double>> dlogits(output.size());
  for (int t = 0; t < static_cast<int>(output.size()); ++t) {
    const std::vector<int> ctx = policy.context_at(prompt, output, t);
    std::vector<double> row = policy.probs_at(ctx);
    for (double& p : row) p = -p;
    row[output[t]] += 1.0;  // onehot - probs
    dlogits[t] = std::move(row);
  }
  std::vector<double> grad(policy.param_count(), 0.0);
  policy.accumulate_logit_grad(prompt, output, dlogits, grad);
  return grad;
}

void PolicyBank::add_policy(ModulePolicy policy, const std::vector<std::string>& module_ids) {
  if (module_ids.empty()) throw std::invalid_argument("policy must serve at least one module id");
  for (const std::string& id : module_ids)
    if (index_.count(id)) throw std::invalid_argument("duplicate module id in bank: " + id);
  slots_.push_back(std::move(policy));
  for (const std::string& id : module_ids) index_[id] = slots_.size() - 1;
}

bool PolicyBank::contains(const std::string& module_id) const { return index_.count(module_id) > 0; }

std::size_t PolicyBank::slot_of(const std::string& module_id) const {
  auto it = index_.find(module_id);
  if (it == index_.end()) throw std::out_of_range("no policy for module: " + module_id);
  return it->second;
}

const ModulePolicy& PolicyBank::policy_for(const std::string& module_id) const {
  return slots_[slot_of(module_id)];
}

ModulePolicy& PolicyBank::policy_for(const std::string& module_id) {
  return slots_[slot_of(module_id)];
}

SnapshotSet make_snapshots(PolicyBank bank) {
  SnapshotSet s;
  s.old_policy = bank;
  s.reference = bank;
  s.current = std::move(bank);
  return s;
}

void snapshot_refresh(SnapshotSet& snapshots) { snapshots.old_policy = snapshots.current; }

const char* to_string(TrajStatus status) {
  switch (status) {
    case TrajStatus::complete: return "complete";
    case TrajStatus::parse_failure: return "parse_failure";
    case TrajStatus::early_termination: return "early_termination";
    case TrajStatus::length_overflow: return "length_overflow";
  }
  return "unknown";
}

TrajStatus traj_status_from_string(std::string_view text) {
  if (text == "complete") return TrajStatus::complete;
  if (text == "parse_failure") return TrajStatus::parse_failure;
  if (text == "early_termination") return TrajStatus::early_termination;
  if (text == "length_overflow") return TrajStatus::length_overflow;
  throw std::invalid_argument("unknown trajectory status: " + std::string(text));
}

}  // namespace mmgrpo
