#include "mmgrpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmgrpo {

const char* to_string(KlMode mode) { return mode == KlMode::k3 ? "k3" : "exact"; }

KlMode kl_mode_from_string(std::string_view text) {
  if (text == "k3") return KlMode::k3;
  if (text == "exact") return KlMode::exact;
  throw std::invalid_argument("unknown kl mode: " + std::string(text));
}

void ObjectiveConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
  if (kl_beta < 0.0) throw std::invalid_argument("kl_beta must be >= 0");
  if (advantage_eps < 0.0) throw std::invalid_argument("advantage_eps must be >= 0");
  if (padding_duplicate_weight < 0.0)
    throw std::invalid_argument("padding_duplicate_weight must be >= 0");
}

std::vector<double> compute_advantages(std::span<const double> rewards, double advantage_eps) {
  if (rewards.empty()) throw std::invalid_argument("compute_advantages: empty reward list");
  std::vector<double> advantages(rewards.size(), 0.0);
  // A constant-reward group is degenerate by definition; checking the values
  // directly avoids mean-roundoff turning 0/0 into spurious +-1 advantages.
  bool all_equal = true;
  for (double r : rewards) all_equal = all_equal && r == rewards.front();
  if (all_equal) return advantages;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / n);
  if (std_dev == 0.0 && advantage_eps == 0.0) return advantages;
  for (std::size_t i = 0; i < rewards.size(); ++i)
    advantages[i] = (rewards[i] - mean) / (std_dev + advantage_eps);
  return advantages;
}

std::vector<double> token_ratio(const ModulePolicy& current, const ModulePolicy& old_policy,
                                const TokenSeq& q, const TokenSeq& o) {
  const std::vector<double> lp_cur = log_prob(current, q, o);
  const std::vector<double> lp_old = log_prob(old_policy, q, o);
  std::vector<double> ratio(o.size());
  for (std::size_t t = 0; t < o.size(); ++t) ratio[t] = std::exp(lp_cur[t] - lp_old[t]);
  return ratio;
}

std::vector<double> kl_penalty(const ModulePolicy& current, const ModulePolicy& reference,
                               const TokenSeq& q, const TokenSeq& o) {
  const std::vector<double> lp_cur = log_prob(current, q, o);
  const std::vector<double> lp_ref = log_prob(reference, q, o);
  std::vector<double> kl(o.size());
  for (std::size_t t = 0; t < o.size(); ++t) {
    const double log_rho = lp_ref[t] - lp_cur[t];
    kl[t] = std::exp(log_rho) - log_rho - 1.0;
  }
  return kl;
}

GroupLossReport group_objective(const GrpoGroup& group, const SnapshotSet& snapshots,
                                const ObjectiveConfig& cfg) {
  cfg.validate();
  if (group.items.empty()) throw std::invalid_argument("group_objective: empty group");
  for (const GroupItem& item : group.items)
    if (item.output.empty()) throw std::invalid_argument("group_objective: empty output in group");

  const std::string& module_id = group.key.module_id;
  const ModulePolicy& cur = snapshots.current.policy_for(module_id);
  const ModulePolicy& old_policy = snapshots.old_policy.policy_for(module_id);
  const ModulePolicy& ref = snapshots.reference.policy_for(module_id);

  GroupLossReport report;
  std::vector<double> rewards;
  rewards.reserve(group.items.size());
  for (const GroupItem& item : group.items) rewards.push_back(item.reward);
  report.advantages = compute_advantages(rewards, cfg.advantage_eps);
  report.zero_signal =
      std::all_of(report.advantages.begin(), report.advantages.end(), [](double a) { return a == 0.0; });
  report.gradient.assign(cur.param_count(), 0.0);

  double weight_sum = 0.0;
  for (const GroupItem& item : group.items)
    weight_sum += item.is_padding_duplicate ? cfg.padding_duplicate_weight : 1.0;
  if (weight_sum <= 0.0) throw std::invalid_argument("group has zero total weight");

  double ratio_sum = 0.0, kl_sum = 0.0;
  std::size_t token_count = 0, clipped_count = 0;

  for (std::size_t i = 0; i < group.items.size(); ++i) {
    const GroupItem& item = group.items[i];
    const double adv = report.advantages[i];
    const double item_weight =
        (item.is_padding_duplicate ? cfg.padding_duplicate_weight : 1.0) / weight_sum;
    const double norm = cfg.length_normalize ? 1.0 / static_cast<double>(item.output.size()) : 1.0;
    const double scale = item_weight * norm;

    const std::vector<double> lp_cur = log_prob(cur, item.prompt, item.output);
    const std::vector<double> lp_old = log_prob(old_policy, item.prompt, item.output);
    const std::vector<double> lp_ref = log_prob(ref, item.prompt, item.output);

    std::vector<std::vector<double>> dlogits(item.output.size());
    for (std::size_t t = 0; t < item.output.size(); ++t) {
      const double ratio = std::exp(lp_cur[t] - lp_old[t]);
      const double clipped =
          std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped * adv;
      const bool take_unclipped = unclipped_term <= clipped_term;
      const double surrogate = take_unclipped ? unclipped_term : clipped_term;

      const std::vector<int> ctx = cur.context_at(item.prompt, item.output, t);
      const std::vector<double> probs = cur.probs_at(ctx);

      double kl_t;
      std::vector<double> row(cur.vocab_size(), 0.0);
      const double surrogate_coef = take_unclipped ? adv * ratio : 0.0;
      if (cfg.kl_mode == KlMode::k3) {
        const double log_rho = lp_ref[t] - lp_cur[t];
        const double rho = std::exp(log_rho);
        kl_t = rho - log_rho - 1.0;
        // d/dtheta of both terms reduces to a coefficient on grad log p(o_t).
        const double coef = surrogate_coef + cfg.kl_beta * (rho - 1.0);
        for (int u = 0; u < cur.vocab_size(); ++u) row[u] = -scale * coef * probs[u];
        row[item.output[t]] += scale * coef;
      } else {
        const std::vector<double> lcur_row = cur.log_probs_at(ctx);
        const std::vector<double> lref_row = ref.log_probs_at(ctx);
        kl_t = 0.0;
        for (int u = 0; u < cur.vocab_size(); ++u)
          kl_t += probs[u] * (lcur_row[u] - lref_row[u]);
        for (int u = 0; u < cur.vocab_size(); ++u) {
          const double dkl_du = probs[u] * ((lcur_row[u] - lref_row[u]) - kl_t);
          row[u] = -scale * (surrogate_coef * probs[u] + cfg.kl_beta * dkl_du);
        }
        row[item.output[t]] += scale * surrogate_coef;
      }
      dlogits[t] = std::move(row);

      report.objective += scale * (surrogate - cfg.kl_beta * kl_t);
      ratio_sum += ratio;
      kl_sum += kl_t;
      ++token_count;
      if (!take_unclipped) ++clipped_count;
    }
    cur.accumulate_logit_grad(item.prompt, item.output, dlogits, report.gradient);
  }

  report.mean_ratio = ratio_sum / static_cast<double>(token_count);
  report.mean_kl = kl_sum / static_cast<double>(token_count);
  report.clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(token_count);
  return report;
}

}  // namespace mmgrpo
