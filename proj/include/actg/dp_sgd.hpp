#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "actg/accountant.hpp"
#include "actg/parallel.hpp"
#include "actg/policy.hpp"
#include "actg/rng.hpp"
#include "actg/schema.hpp"

namespace actg::gen {

struct Example {
  FeatureRecord feature;
  std::vector<int> tokens;  // terminated by <eos>
};

struct DpSgdConfig {
  double clip = 1.0;        // per-example L2 clip norm c
  double sigma = 0.0;       // noise multiplier; 0 is the no-noise sentinel
  double sample_rate = 0.1; // Poisson rate q
  std::int64_t steps = 100;
  double learning_rate = 0.1;
  std::uint64_t seed = 1;
};

// One DP-SGD ascent step on the mean log-likelihood: per-example gradients
// clipped to norm <= clip, summed in index order, Gaussian noise
// N(0, sigma^2 clip^2) per coordinate, averaged by the expected batch size
// q * dataset_size. An empty Poisson batch is a valid noise-only step.
void dp_sgd_step(TokenPolicy& policy, std::span<const Example> batch,
                 const DpSgdConfig& config, std::size_t dataset_size, Rng& noise_rng,
                 Exec exec = Exec::parallel);

// Per-example clipped gradients, the parallel kernel behind dp_sgd_step.
// Returns the clipped sum (fixed index-order reduction) and writes each
// example's post-clip norm when norms_out is non-null.
std::vector<double> clipped_gradient_sum(const TokenPolicy& policy,
                                         std::span<const Example> batch, double clip,
                                         Exec exec,
                                         std::vector<double>* norms_out = nullptr);

struct DpftResult {
  TokenPolicy policy;
  accountant::PrivacySpend spend;
  std::vector<double> heldout_curve;  // mean per-token logprob, 10 evals
};

// Runs config.steps Poisson-sampled DP-SGD steps from a zero-initialized
// policy and reports the exact privacy spend of the run.
DpftResult train_dpft(std::span<const Example> data, const Schema& schema,
                      const Vocab& vocab, const DpSgdConfig& config, double delta,
                      std::span<const Example> heldout = {}, Exec exec = Exec::parallel);

std::vector<Example> make_examples(std::span<const TextRecord> paired,
                                   const Vocab& vocab);

}  // namespace actg::gen
