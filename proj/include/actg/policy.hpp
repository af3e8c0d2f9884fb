#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "actg/parallel.hpp"
#include "actg/rng.hpp"
#include "actg/schema.hpp"

namespace actg::gen {

// Token inventory with <bos>/<eos>/<unk> sentinels at fixed ids 0/1/2.
class Vocab {
 public:
  static Vocab build(std::span<const std::string> corpus_tokens);
  static Vocab from_tokens(std::vector<std::string> tokens);  // must include sentinels

  std::size_t size() const { return tokens_.size(); }
  int bos() const { return 0; }
  int eos() const { return 1; }
  int unk() const { return 2; }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id(const std::string& token) const;  // unk when absent

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // Joins non-sentinel tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Conditional next-token distribution: logits(prev, f) = U[prev] + sum_k
// V_k[f_k]. Parameters live in one flat vector (U first, then the per-
// attribute tables) so optimizer arithmetic is plain vector math.
class TokenPolicy {
 public:
  TokenPolicy(const Schema& schema, Vocab vocab);

  const Vocab& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t attribute_count() const { return cards_.size(); }
  std::uint64_t schema_hash() const { return schema_hash_; }

  std::size_t param_size() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::span<const double> u_row(int prev) const;
  std::span<const double> v_row(std::size_t attr, int option) const;
  std::size_t u_offset(int prev) const;
  std::size_t v_offset(std::size_t attr, int option) const;

  void logits(int prev, const FeatureRecord& feature, std::span<double> out) const;

  bool operator==(const TokenPolicy& other) const {
    return params_ == other.params_ && cards_ == other.cards_;
  }

  std::string to_json() const;
  static TokenPolicy from_json(const std::string& text, const Schema& schema);
  void save(const std::string& path) const;
  static TokenPolicy load(const std::string& path, const Schema& schema);

 private:
  Vocab vocab_;
  std::vector<std::size_t> cards_;      // option counts per attribute
  std::vector<std::size_t> v_offsets_;  // table offsets into params_
  std::uint64_t schema_hash_ = 0;
  std::vector<double> params_;
};

// log softmax(logits)[token] summed over positions, starting from <bos>.
// Tokens must end with <eos>.
double policy_logprob(const TokenPolicy& policy, const FeatureRecord& feature,
                      std::span<const int> tokens);

// Adds weight * d(logprob)/d(params) into grad (flat, same layout as the
// policy parameters). No terminal requirement; used by both DP-SGD and the
// RL machinery.
void policy_grad_accum(const TokenPolicy& policy, const FeatureRecord& feature,
                       std::span<const int> tokens, double weight,
                       std::span<double> grad);

// Per-position logprobs of an existing sequence under the current policy.
std::vector<double> sequence_logprobs(const TokenPolicy& policy,
                                      const FeatureRecord& feature,
                                      std::span<const int> tokens);

struct DecodingConfig {
  double temperature = 1.0;
  double top_p = 0.95;
  int top_k = 0;  // 0 disables
  int max_tokens = 512;
};

struct SampledSequence {
  std::vector<int> tokens;        // includes terminal <eos> when emitted
  std::vector<double> logprobs;   // raw model logprobs of each sampled token
};

// Autoregressive sampling from <bos>: temperature, then top-k, then the
// smallest probability-sorted prefix with cumulative mass >= top_p (boundary
// token included), renormalized. temperature = 0 is greedy argmax.
SampledSequence sample_sequence(const TokenPolicy& policy, const FeatureRecord& feature,
                                const DecodingConfig& config, Rng& rng);

TextRecord sample_text(const TokenPolicy& policy, const FeatureRecord& feature,
                       const DecodingConfig& config, std::uint64_t seed);

// One sequence per feature, seeded per index; parallel-safe.
std::vector<TextRecord> sample_batch(const TokenPolicy& policy,
                                     std::span<const FeatureRecord> features,
                                     const DecodingConfig& config, std::uint64_t seed,
                                     Exec exec = Exec::parallel);

double l2_norm(std::span<const double> v);
void axpy(double a, std::span<const double> x, std::span<double> y);

}  // namespace actg::gen
