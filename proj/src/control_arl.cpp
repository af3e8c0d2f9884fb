#include "actg/control_arl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace actg::arl {

double ifacc(const FeatureRecord& feature, const std::optional<FeatureRecord>& extracted) {
  if (!extracted) return 0.0;
  if (extracted->values.size() != feature.values.size()) {
    throw std::invalid_argument("ifacc: feature records disagree on schema arity");
  }
  if (feature.values.empty()) throw std::invalid_argument("ifacc: empty feature");
  double matched = 0.0;
  for (std::size_t k = 0; k < feature.values.size(); ++k) {
    if (feature.values[k] == extracted->values[k]) matched += 1.0;
  }
  return matched / static_cast<double>(feature.values.size());
}

BestOfNResult best_of_n(const gen::TokenPolicy& policy, const FeatureExtractor& extractor,
                        const FeatureRecord& feature, int n,
                        const gen::DecodingConfig& decoding, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("best_of_n: n must be >= 1");
  BestOfNResult best;
  best.score = -1.0;
  for (int j = 0; j < n; ++j) {
    TextRecord text =
        gen::sample_text(policy, feature, decoding, derive_seed(seed, "candidate", j));
    const double score = ifacc(feature, extractor(text));
    if (score > best.score) {
      best = {std::move(text), score, j};
    }
  }
  return best;
}

AnchorDataset build_anchor_dataset(const FeatureSampler& sample_features,
                                   const gen::TokenPolicy& policy,
                                   const FeatureExtractor& extractor, int n,
                                   std::size_t n_prompts,
                                   const gen::DecodingConfig& decoding,
                                   std::uint64_t seed, Exec exec) {
  AnchorDataset anchor;
  anchor.n = n;
  if (n_prompts == 0) return anchor;
  const std::vector<FeatureRecord> prompts =
      sample_features(n_prompts, derive_seed(seed, "anchor-prompts"));

  anchor.entries.resize(prompts.size());
  const auto& vocab = policy.vocab();
  parallel_for(prompts.size(), exec, [&](std::size_t i) {
    BestOfNResult best =
        best_of_n(policy, extractor, prompts[i], n, decoding, derive_seed(seed, "anchor", i));
    AnchorEntry entry;
    entry.feature = prompts[i];
    entry.tokens = vocab.encode(best.text.tokens);
    entry.tokens.push_back(vocab.eos());
    entry.score = best.score;
    anchor.entries[i] = std::move(entry);
  });
  return anchor;
}

double gamma_schedule(std::int64_t step, std::int64_t total_steps, double start,
                      double end) {
  if (step < 0 || (total_steps > 0 && step > total_steps)) {
    throw std::invalid_argument("gamma_schedule: step outside [0, total_steps]");
  }
  if (total_steps <= 0) return start;
  return start + (end - start) * static_cast<double>(step) /
                     static_cast<double>(total_steps);
}

std::vector<Rollout> collect_rollouts(const gen::TokenPolicy& policy,
                                      std::span<const FeatureRecord> prompts,
                                      const FeatureExtractor& extractor,
                                      const gen::DecodingConfig& decoding,
                                      std::uint64_t seed_base, Exec exec) {
  std::vector<Rollout> rollouts(prompts.size());
  const auto& vocab = policy.vocab();
  parallel_for(prompts.size(), exec, [&](std::size_t i) {
    Rng rng(derive_seed(seed_base, "seq", i));
    gen::SampledSequence seq = gen::sample_sequence(policy, prompts[i], decoding, rng);
    TextRecord text = make_text_record(vocab.decode(seq.tokens),
                                       static_cast<std::size_t>(decoding.max_tokens));
    Rollout r;
    r.feature = prompts[i];
    r.tokens = std::move(seq.tokens);
    r.logp_old = std::move(seq.logprobs);
    r.reward = ifacc(prompts[i], extractor(text));
    rollouts[i] = std::move(r);
  });
  return rollouts;
}

namespace {

std::size_t visible_length(const gen::TokenPolicy& policy, std::span<const int> tokens) {
  std::size_t n = 0;
  for (int t : tokens) {
    if (t > policy.vocab().unk()) ++n;
  }
  return n;
}

// Per-sequence sampled KL against the frozen reference, sum over positions of
// logp_old(a_t) - logpi_ref(a_t). Fixed for the lifetime of the buffer.
std::vector<double> sequence_reference_kl(std::span<const Rollout> rollouts,
                                          const gen::TokenPolicy& reference, Exec exec) {
  std::vector<double> kl(rollouts.size(), 0.0);
  parallel_for(rollouts.size(), exec, [&](std::size_t i) {
    const std::vector<double> ref_logps =
        gen::sequence_logprobs(reference, rollouts[i].feature, rollouts[i].tokens);
    double total = 0.0;
    for (std::size_t t = 0; t < ref_logps.size(); ++t) {
      total += rollouts[i].logp_old[t] - ref_logps[t];
    }
    kl[i] = total;
  });
  return kl;
}

// Gradient of the clipped surrogate over the buffer, with advantages
// precomputed from the KL-shaped returns. Per-token terms are averaged
// within each sequence and then across sequences, so a trajectory's vote
// does not scale with its length. Slots are per-rollout accumulators; the
// final reduction is serial in rollout order.
void ppo_epoch_gradient(const gen::TokenPolicy& policy, std::span<const Rollout> rollouts,
                        std::span<const double> advantages, const ArlConfig& config,
                        std::vector<std::vector<double>>& slots, std::span<double> grad,
                        double* surrogate_out) {
  const std::size_t v = policy.vocab_size();
  const double clip_lo = 1.0 - config.ratio_clip;
  const double clip_hi = 1.0 + config.ratio_clip;

  std::vector<double> surrogates(rollouts.size(), 0.0);

  parallel_for(rollouts.size(), config.exec, [&](std::size_t i) {
    auto& slot = slots[i];
    std::fill(slot.begin(), slot.end(), 0.0);
    const Rollout& roll = rollouts[i];
    if (roll.tokens.empty()) return;
    const double inv_len = 1.0 / static_cast<double>(roll.tokens.size());
    const double advantage = advantages[i];

    std::vector<double> logits(v), p(v), row(v);
    int prev = policy.vocab().bos();
    for (std::size_t t = 0; t < roll.tokens.size(); ++t) {
      const int action = roll.tokens[t];
      policy.logits(prev, roll.feature, logits);

      double m = -std::numeric_limits<double>::infinity();
      for (double x : logits) m = std::max(m, x);
      double sum = 0.0;
      for (std::size_t u = 0; u < v; ++u) {
        p[u] = std::exp(logits[u] - m);
        sum += p[u];
      }
      const double lse = m + std::log(sum);
      const double inv_sum = 1.0 / sum;
      for (std::size_t u = 0; u < v; ++u) p[u] *= inv_sum;

      const double ratio = std::exp(logits[action] - lse - roll.logp_old[t]);
      const double clipped = std::clamp(ratio, clip_lo, clip_hi);
      surrogates[i] += std::min(ratio * advantage, clipped * advantage) * inv_len;
      const bool pass = (advantage >= 0.0 && ratio <= clip_hi) ||
                        (advantage < 0.0 && ratio >= clip_lo);
      const double coef = pass ? advantage * ratio * inv_len : 0.0;
      if (coef == 0.0) {
        prev = action;
        continue;
      }

      for (std::size_t u = 0; u < v; ++u) row[u] = coef * (-p[u]);
      row[action] += coef;

      double* urow = slot.data() + policy.u_offset(prev);
      for (std::size_t u = 0; u < v; ++u) urow[u] += row[u];
      for (std::size_t k = 0; k < policy.attribute_count(); ++k) {
        double* vrow = slot.data() + policy.v_offset(k, roll.feature.values[k]);
        for (std::size_t u = 0; u < v; ++u) vrow[u] += row[u];
      }
      prev = action;
    }
  });

  std::fill(grad.begin(), grad.end(), 0.0);
  for (const auto& slot : slots) gen::axpy(1.0, slot, grad);
  const double inv = 1.0 / static_cast<double>(rollouts.size());
  for (double& g : grad) g *= inv;

  double surrogate = 0.0;
  for (double s : surrogates) surrogate += s;
  if (surrogate_out) *surrogate_out = surrogate * inv;
}

using SftHook = std::function<void(int epoch, std::span<double> grad)>;

void run_ppo_epochs(gen::TokenPolicy& policy, std::span<const Rollout> rollouts,
                    const gen::TokenPolicy& reference, const ArlConfig& config,
                    RlDiagnostics* diagnostics, const SftHook& sft_hook) {
  if (rollouts.empty()) throw std::invalid_argument("rl_update: empty rollout buffer");

  // Shaped returns: the raw reward minus the sequence's accumulated KL
  // penalty, so divergence from the reference is taxed per token emitted.
  const std::vector<double> seq_kl =
      sequence_reference_kl(rollouts, reference, config.exec);
  std::vector<double> shaped(rollouts.size(), 0.0);
  double baseline = 0.0;
  double mean_reward = 0.0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    shaped[i] = rollouts[i].reward - config.kl_coef * seq_kl[i];
    baseline += shaped[i];
    mean_reward += rollouts[i].reward;
  }
  baseline /= static_cast<double>(rollouts.size());
  mean_reward /= static_cast<double>(rollouts.size());
  std::vector<double> advantages(rollouts.size());
  for (std::size_t i = 0; i < rollouts.size(); ++i) advantages[i] = shaped[i] - baseline;
  // Whitened advantages: unit scale regardless of how tight the reward
  // spread is.
  double var = 0.0;
  for (double a : advantages) var += a * a;
  var /= static_cast<double>(rollouts.size());
  if (var > 1e-12) {
    const double inv_std = 1.0 / std::sqrt(var);
    for (double& a : advantages) a *= inv_std;
  }

  std::vector<std::vector<double>> slots(rollouts.size());
  for (auto& s : slots) s.assign(policy.param_size(), 0.0);
  std::vector<double> grad(policy.param_size(), 0.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double surrogate = 0.0;
    ppo_epoch_gradient(policy, rollouts, advantages, config, slots, grad, &surrogate);
    if (!std::isfinite(surrogate)) {
      std::ostringstream dump;
      dump << "rl_update: non-finite loss at epoch " << epoch
           << " (baseline=" << baseline << ", buffer=" << rollouts.size() << ")";
      throw std::runtime_error(dump.str());
    }
    if (epoch == 0 && diagnostics) {
      diagnostics->surrogate = surrogate;
      double kl = 0.0;
      for (double k : seq_kl) kl += k;
      diagnostics->mean_kl = kl / static_cast<double>(rollouts.size());
      diagnostics->mean_reward = mean_reward;
    }
    if (sft_hook) sft_hook(epoch, grad);
    gen::axpy(config.learning_rate, grad, policy.params());
  }
}

}  // namespace

void rl_update(gen::TokenPolicy& policy, std::span<const Rollout> rollouts,
               const gen::TokenPolicy& reference, const ArlConfig& config,
               RlDiagnostics* diagnostics) {
  run_ppo_epochs(policy, rollouts, reference, config, diagnostics, nullptr);
}

std::string round_log_csv(std::span<const RoundLog> rows) {
  std::ostringstream os;
  os.precision(10);
  os << "round,mean_reward,median_length,collapse_fraction,kl,gamma,rl_surrogate,"
        "sft_loss\n";
  for (const auto& r : rows) {
    os << r.round << ',' << r.mean_reward << ',' << r.median_length << ','
       << r.collapse_fraction << ',' << r.kl << ',' << r.gamma << ','
       << r.rl_surrogate << ',' << r.sft_loss << "\n";
  }
  return os.str();
}

gen::TokenPolicy arl_train(const gen::TokenPolicy& start, const FeatureSampler& prompts,
                           const AnchorDataset& anchor, const FeatureExtractor& extractor,
                           const gen::DecodingConfig& decoding, const ArlConfig& config,
                           std::vector<RoundLog>* log) {
  const bool gamma_active = config.gamma_start != 0.0 || config.gamma_end != 0.0;
  if (gamma_active && anchor.entries.empty()) {
    throw std::invalid_argument("arl_train: non-zero gamma requires an anchor dataset");
  }

  gen::TokenPolicy policy = start;
  const gen::TokenPolicy reference = start;  // frozen

  // Deterministic anchor cycling order.
  std::vector<std::size_t> order(anchor.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(config.seed, "anchor-order"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
  }
  std::size_t cursor = 0;

  std::vector<double> sft_grad(policy.param_size(), 0.0);

  for (int round = 0; round < config.rounds; ++round) {
    const std::vector<FeatureRecord> buffer_prompts = prompts(
        static_cast<std::size_t>(config.buffer_size), derive_seed(config.seed, "prompts", round));
    const std::vector<Rollout> rollouts =
        collect_rollouts(policy, buffer_prompts, extractor, decoding,
                         derive_seed(config.seed, "rollouts", round), config.exec);

    const double gamma = gamma_schedule(round, config.rounds - 1, config.gamma_start,
                                        config.gamma_end);

    RoundLog row;
    row.round = round;
    row.gamma = gamma;
    {
      std::vector<double> lens;
      lens.reserve(rollouts.size());
      std::size_t collapsed = 0;
      for (const auto& r : rollouts) {
        const double len = static_cast<double>(visible_length(policy, r.tokens));
        lens.push_back(len);
        if (config.reference_median > 0.0 && len < 0.25 * config.reference_median) {
          ++collapsed;
        }
      }
      std::sort(lens.begin(), lens.end());
      row.median_length = lens.empty() ? 0.0 : lens[lens.size() / 2];
      row.collapse_fraction =
          rollouts.empty() ? 0.0
                           : static_cast<double>(collapsed) /
                                 static_cast<double>(rollouts.size());
    }

    double sft_loss = 0.0;
    auto hook = [&](int, std::span<double> grad) {
      if (gamma == 0.0 || anchor.entries.empty()) return;
      const std::size_t m =
          std::min<std::size_t>(config.anchor_minibatch, anchor.entries.size());
      std::fill(sft_grad.begin(), sft_grad.end(), 0.0);
      double loss = 0.0;
      // sequence-mean, matching the RL gradient normalization
      for (std::size_t j = 0; j < m; ++j) {
        const AnchorEntry& entry = anchor.entries[order[cursor]];
        cursor = (cursor + 1) % order.size();
        const double inv_len = 1.0 / static_cast<double>(entry.tokens.size());
        gen::policy_grad_accum(policy, entry.feature, entry.tokens, inv_len, sft_grad);
        loss -= gen::policy_logprob(policy, entry.feature, entry.tokens) * inv_len;
      }
      const double inv = 1.0 / static_cast<double>(m);
      sft_loss = loss * inv;
      gen::axpy(gamma * inv, sft_grad, grad);
    };

    RlDiagnostics diag;
    run_ppo_epochs(policy, rollouts, reference, config, &diag, hook);

    row.mean_reward = diag.mean_reward;
    row.kl = diag.mean_kl;
    row.rl_surrogate = diag.surrogate;
    row.sft_loss = sft_loss;
    if (log) log->push_back(row);
  }
  return policy;
}

}  // namespace actg::arl
