#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actg/eval.hpp"
#include "actg/parallel.hpp"
#include "actg/policy.hpp"
#include "actg/schema.hpp"

namespace actg::arl {

// Per-instance instruction-following accuracy: fraction of exactly matching
// fields. An extraction failure scores 0.
double ifacc(const FeatureRecord& feature, const std::optional<FeatureRecord>& extracted);

using eval::FeatureExtractor;

// Samples n feature prompts deterministically from a fitted feature
// generator. Keeps downstream training decoupled from any private data
// handle.
using FeatureSampler = std::function<std::vector<FeatureRecord>(std::size_t n,
                                                                std::uint64_t seed)>;

struct BestOfNResult {
  TextRecord text;
  double score = 0.0;
  int index = 0;
};

// N seeded candidates from the generator, highest score wins, ties broken by
// lowest candidate index. Candidate j's seed does not depend on N, so
// growing N never loses earlier candidates.
BestOfNResult best_of_n(const gen::TokenPolicy& policy, const FeatureExtractor& extractor,
                        const FeatureRecord& feature, int n,
                        const gen::DecodingConfig& decoding, std::uint64_t seed);

struct AnchorEntry {
  FeatureRecord feature;
  std::vector<int> tokens;  // best candidate, <eos>-terminated
  double score = 0.0;
};

struct AnchorDataset {
  std::vector<AnchorEntry> entries;
  int n = 0;  // candidates per prompt
};

// Curates the SFT anchor by best-of-N over prompts drawn from the feature
// generator. Touches only the two generators and the extractor; no privacy
// ledger is involved.
AnchorDataset build_anchor_dataset(const FeatureSampler& sample_features,
                                   const gen::TokenPolicy& policy,
                                   const FeatureExtractor& extractor, int n,
                                   std::size_t n_prompts,
                                   const gen::DecodingConfig& decoding,
                                   std::uint64_t seed, Exec exec = Exec::parallel);

// Linear decay from start to end; total_steps = 0 returns start.
double gamma_schedule(std::int64_t step, std::int64_t total_steps, double start,
                      double end);

struct ArlConfig {
  int buffer_size = 512;
  int epochs = 4;  // passes over each rollout buffer
  double learning_rate = 0.05;
  double kl_coef = 0.2;
  double ratio_clip = 0.2;
  double gamma_start = 2.0;
  double gamma_end = 0.5;
  int rounds = 40;
  int anchor_minibatch = 128;
  double reference_median = 0.0;  // for the length-collapse diagnostic
  std::uint64_t seed = 1;
  Exec exec = Exec::parallel;
};

struct Rollout {
  FeatureRecord feature;
  std::vector<int> tokens;
  std::vector<double> logp_old;  // generating policy's per-token logprobs
  double reward = 0.0;
};

// Buffer fill: generate one sequence per prompt (per-sequence seeds), score
// each with the extractor. seed_base must differ per round.
std::vector<Rollout> collect_rollouts(const gen::TokenPolicy& policy,
                                      std::span<const FeatureRecord> prompts,
                                      const FeatureExtractor& extractor,
                                      const gen::DecodingConfig& decoding,
                                      std::uint64_t seed_base, Exec exec = Exec::parallel);

struct RlDiagnostics {
  double mean_kl = 0.0;         // mean per-sequence sampled KL vs the reference
  double surrogate = 0.0;       // clipped policy-gradient objective, first epoch
  double mean_reward = 0.0;     // raw rewards, before KL shaping
};

// PPO-style update over one buffer. Per-token KL penalties against the
// frozen reference are charged into each sequence's return (so divergence
// costs scale with length), the advantage is the shaped return minus the
// buffer mean, and each of the `epochs` full-buffer gradient steps uses the
// probability-ratio clipped surrogate.
void rl_update(gen::TokenPolicy& policy, std::span<const Rollout> rollouts,
               const gen::TokenPolicy& reference, const ArlConfig& config,
               RlDiagnostics* diagnostics = nullptr);

struct RoundLog {
  int round = 0;
  double mean_reward = 0.0;
  double median_length = 0.0;
  double collapse_fraction = 0.0;
  double kl = 0.0;
  double gamma = 0.0;
  double rl_surrogate = 0.0;
  double sft_loss = 0.0;
};

std::string round_log_csv(std::span<const RoundLog> rows);

// Anchored RL: each round fills a rollout buffer from the feature generator,
// then applies `epochs` combined gradient steps of the PPO objective plus
// gamma(t) times the anchor SFT gradient. gamma identically 0 reproduces the
// plain RL trajectory exactly.
gen::TokenPolicy arl_train(const gen::TokenPolicy& start, const FeatureSampler& prompts,
                           const AnchorDataset& anchor, const FeatureExtractor& extractor,
                           const gen::DecodingConfig& decoding, const ArlConfig& config,
                           std::vector<RoundLog>* log = nullptr);

}  // namespace actg::arl
