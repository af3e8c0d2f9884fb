#include "actg/dp_sgd.hpp"

#include <cmath>
#include <stdexcept>

namespace actg::gen {

std::vector<double> clipped_gradient_sum(const TokenPolicy& policy,
                                         std::span<const Example> batch, double clip,
                                         Exec exec, std::vector<double>* norms_out) {
  const std::size_t p = policy.param_size();
  if (norms_out) norms_out->assign(batch.size(), 0.0);

  // Each example's gradient goes into its own slot; clipping is pure per
  // slot, and the reduction below runs serially in index order, so the sum
  // is identical for any thread count.
  std::vector<std::vector<double>> slots(batch.size());
  parallel_for(batch.size(), exec, [&](std::size_t i) {
    slots[i].assign(p, 0.0);
    policy_grad_accum(policy, batch[i].feature, batch[i].tokens, 1.0, slots[i]);
    const double norm = l2_norm(slots[i]);
    const double factor = std::min(1.0, clip / norm);
    if (factor < 1.0) {
      for (double& g : slots[i]) g *= factor;
    }
    if (norms_out) (*norms_out)[i] = l2_norm(slots[i]);
  });

  std::vector<double> sum(p, 0.0);
  for (const auto& slot : slots) axpy(1.0, slot, sum);
  return sum;
}

void dp_sgd_step(TokenPolicy& policy, std::span<const Example> batch,
                 const DpSgdConfig& config, std::size_t dataset_size, Rng& noise_rng,
                 Exec exec) {
  if (!(config.clip > 0.0)) throw std::invalid_argument("dp_sgd_step: clip must be > 0");
  if (config.sigma > 0.0 && std::isinf(config.clip)) {
    throw std::invalid_argument("dp_sgd_step: noise needs a finite clip norm");
  }
  if (!(config.sample_rate > 0.0 && config.sample_rate <= 1.0)) {
    throw std::invalid_argument("dp_sgd_step: sample rate must lie in (0, 1]");
  }

  std::vector<double> norms;
  std::vector<double> sum =
      clipped_gradient_sum(policy, batch, config.clip, exec, &norms);
  if (std::isfinite(config.clip)) {
    for (double n : norms) {
      if (n > config.clip * (1.0 + 1e-9)) {
        throw std::logic_error("dp_sgd_step: post-clip norm exceeds the clip bound");
      }
    }
  }

  if (config.sigma > 0.0) {
    const double stddev = config.sigma * config.clip;
    for (double& g : sum) g += stddev * noise_rng.gaussian();
  }

  const double denom = config.sample_rate * static_cast<double>(dataset_size);
  const double scale = config.learning_rate / denom;
  axpy(scale, sum, policy.params());
}

namespace {

double mean_token_logprob(const TokenPolicy& policy, std::span<const Example> data) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : data) {
    total += policy_logprob(policy, ex.feature, ex.tokens);
    tokens += ex.tokens.size();
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

}  // namespace

DpftResult train_dpft(std::span<const Example> data, const Schema& schema,
                      const Vocab& vocab, const DpSgdConfig& config, double delta,
                      std::span<const Example> heldout, Exec exec) {
  if (data.empty()) throw std::invalid_argument("train_dpft: empty dataset");

  DpftResult result{TokenPolicy(schema, vocab), {}, {}};
  Rng noise_rng(derive_seed(config.seed, "dpft-noise"));

  const std::int64_t eval_every =
      heldout.empty() ? 0 : std::max<std::int64_t>(1, config.steps / 10);

  std::vector<Example> batch;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    Rng poisson(derive_seed(config.seed, "dpft-poisson", static_cast<std::uint64_t>(step)));
    batch.clear();
    for (const auto& ex : data) {
      if (poisson.uniform() < config.sample_rate) batch.push_back(ex);
    }
    dp_sgd_step(result.policy, batch, config, data.size(), noise_rng, exec);
    if (eval_every > 0 && (step + 1) % eval_every == 0) {
      result.heldout_curve.push_back(mean_token_logprob(result.policy, heldout));
    }
  }

  result.spend.delta = delta;
  if (config.sigma > 0.0) {
    result.spend.charge(accountant::subsampled_gaussian_mechanism(
        config.sigma, config.sample_rate, config.steps, "dpft"));
  } else {
    result.spend.charge(accountant::no_noise_mechanism("dpft"));
  }
  return result;
}

std::vector<Example> make_examples(std::span<const TextRecord> paired,
                                   const Vocab& vocab) {
  std::vector<Example> out;
  out.reserve(paired.size());
  for (const auto& rec : paired) {
    if (!rec.features) {
      throw std::invalid_argument("make_examples: record without features");
    }
    Example ex;
    ex.feature = *rec.features;
    ex.tokens = vocab.encode(rec.tokens);
    ex.tokens.push_back(vocab.eos());
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace actg::gen
