#include "actg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace actg::gen {

Vocab Vocab::build(std::span<const std::string> corpus_tokens) {
  std::vector<std::string> toks = {"<bos>", "<eos>", "<unk>"};
  std::unordered_map<std::string, int> seen;
  for (const auto& t : toks) seen.emplace(t, 1);
  for (const auto& t : corpus_tokens) {
    if (seen.emplace(t, 1).second) toks.push_back(t);
  }
  return from_tokens(std::move(toks));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw std::invalid_argument("vocab: needs at least 4 tokens");
  if (tokens[0] != "<bos>" || tokens[1] != "<eos>" || tokens[2] != "<unk>") {
    throw std::invalid_argument("vocab: sentinels must be <bos>, <eos>, <unk>");
  }
  Vocab v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocab: duplicate token '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? unk() : it->second;
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id <= unk()) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

TokenPolicy::TokenPolicy(const Schema& schema, Vocab vocab)
    : vocab_(std::move(vocab)), schema_hash_(schema.hash()) {
  const std::size_t v = vocab_.size();
  std::size_t total = v * v;
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    cards_.push_back(schema.attribute(k).options.size());
    v_offsets_.push_back(total);
    total += cards_.back() * v;
  }
  params_.assign(total, 0.0);
}

std::size_t TokenPolicy::u_offset(int prev) const {
  return static_cast<std::size_t>(prev) * vocab_.size();
}

std::size_t TokenPolicy::v_offset(std::size_t attr, int option) const {
  return v_offsets_[attr] + static_cast<std::size_t>(option) * vocab_.size();
}

std::span<const double> TokenPolicy::u_row(int prev) const {
  return {params_.data() + u_offset(prev), vocab_.size()};
}

std::span<const double> TokenPolicy::v_row(std::size_t attr, int option) const {
  return {params_.data() + v_offset(attr, option), vocab_.size()};
}

void TokenPolicy::logits(int prev, const FeatureRecord& feature,
                         std::span<double> out) const {
  const std::size_t v = vocab_.size();
  if (prev < 0 || static_cast<std::size_t>(prev) >= v) {
    throw std::invalid_argument("logits: previous token out of vocab");
  }
  if (feature.values.size() != cards_.size()) {
    throw std::invalid_argument("logits: feature arity does not match policy");
  }
  const double* u = params_.data() + u_offset(prev);
  std::copy_n(u, v, out.data());
  for (std::size_t k = 0; k < cards_.size(); ++k) {
    const std::int32_t opt = feature.values[k];
    if (opt < 0 || static_cast<std::size_t>(opt) >= cards_[k]) {
      throw std::invalid_argument("logits: feature option out of range");
    }
    const double* row = params_.data() + v_offset(k, opt);
    for (std::size_t t = 0; t < v; ++t) out[t] += row[t];
  }
}

namespace {

// log(sum exp(logits)) with max subtraction.
double log_sum_exp(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  return m + std::log(s);
}

void check_tokens(const TokenPolicy& policy, std::span<const int> tokens) {
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= policy.vocab_size()) {
      throw std::invalid_argument("token id " + std::to_string(t) + " outside vocab");
    }
  }
}

}  // namespace

double policy_logprob(const TokenPolicy& policy, const FeatureRecord& feature,
                      std::span<const int> tokens) {
  if (tokens.empty() || tokens.back() != policy.vocab().eos()) {
    throw std::invalid_argument("policy_logprob: tokens must end with <eos>");
  }
  double total = 0.0;
  for (double lp : sequence_logprobs(policy, feature, tokens)) total += lp;
  return total;
}

std::vector<double> sequence_logprobs(const TokenPolicy& policy,
                                      const FeatureRecord& feature,
                                      std::span<const int> tokens) {
  check_tokens(policy, tokens);
  const std::size_t v = policy.vocab_size();
  std::vector<double> logits(v);
  std::vector<double> out;
  out.reserve(tokens.size());
  int prev = policy.vocab().bos();
  for (int tok : tokens) {
    policy.logits(prev, feature, logits);
    out.push_back(logits[tok] - log_sum_exp(logits));
    prev = tok;
  }
  return out;
}

void policy_grad_accum(const TokenPolicy& policy, const FeatureRecord& feature,
                       std::span<const int> tokens, double weight,
                       std::span<double> grad) {
  if (grad.size() != policy.param_size()) {
    throw std::invalid_argument("policy_grad_accum: bad gradient size");
  }
  check_tokens(policy, tokens);
  const std::size_t v = policy.vocab_size();
  std::vector<double> logits(v);
  std::vector<double> row(v);
  int prev = policy.vocab().bos();
  for (int tok : tokens) {
    policy.logits(prev, feature, logits);
    const double lse = log_sum_exp(logits);
    // d logprob / d logits = onehot(tok) - softmax(logits)
    for (std::size_t t = 0; t < v; ++t) {
      row[t] = -std::exp(logits[t] - lse) * weight;
    }
    row[tok] += weight;
    double* u = grad.data() + policy.u_offset(prev);
    for (std::size_t t = 0; t < v; ++t) u[t] += row[t];
    for (std::size_t k = 0; k < policy.attribute_count(); ++k) {
      double* vk = grad.data() + policy.v_offset(k, feature.values[k]);
      for (std::size_t t = 0; t < v; ++t) vk[t] += row[t];
    }
    prev = tok;
  }
}

SampledSequence sample_sequence(const TokenPolicy& policy, const FeatureRecord& feature,
                                const DecodingConfig& config, Rng& rng) {
  const std::size_t v = policy.vocab_size();
  const int eos = policy.vocab().eos();
  SampledSequence seq;
  std::vector<double> logits(v);
  std::vector<double> probs(v);
  std::vector<std::size_t> order(v);

  int prev = policy.vocab().bos();
  for (int step = 0; step < config.max_tokens; ++step) {
    policy.logits(prev, feature, logits);
    const double raw_lse = log_sum_exp(logits);

    int chosen;
    if (config.temperature <= 0.0) {
      chosen = static_cast<int>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      const double inv_t = 1.0 / config.temperature;
      double m = -std::numeric_limits<double>::infinity();
      for (double x : logits) m = std::max(m, x * inv_t);
      double sum = 0.0;
      for (std::size_t t = 0; t < v; ++t) {
        probs[t] = std::exp(logits[t] * inv_t - m);
        sum += probs[t];
      }
      for (double& p : probs) p /= sum;

      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
      });

      std::size_t keep = v;
      if (config.top_k > 0) keep = std::min<std::size_t>(keep, config.top_k);
      if (config.top_p < 1.0) {
        double mass = 0.0;
        for (std::size_t i = 0; i < keep; ++i) {
          mass += probs[order[i]];
          if (mass >= config.top_p) {
            keep = i + 1;  // boundary token included
            break;
          }
        }
      }
      double kept_mass = 0.0;
      for (std::size_t i = 0; i < keep; ++i) kept_mass += probs[order[i]];
      double u = rng.uniform() * kept_mass;
      chosen = static_cast<int>(order[keep - 1]);
      for (std::size_t i = 0; i < keep; ++i) {
        u -= probs[order[i]];
        if (u < 0.0) {
          chosen = static_cast<int>(order[i]);
          break;
        }
      }
    }

    seq.tokens.push_back(chosen);
    seq.logprobs.push_back(logits[chosen] - raw_lse);
    if (chosen == eos) break;
    prev = chosen;
  }
  return seq;
}

TextRecord sample_text(const TokenPolicy& policy, const FeatureRecord& feature,
                       const DecodingConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const SampledSequence seq = sample_sequence(policy, feature, config, rng);
  TextRecord rec = make_text_record(policy.vocab().decode(seq.tokens),
                                    static_cast<std::size_t>(config.max_tokens));
  return rec;
}

std::vector<TextRecord> sample_batch(const TokenPolicy& policy,
                                     std::span<const FeatureRecord> features,
                                     const DecodingConfig& config, std::uint64_t seed,
                                     Exec exec) {
  std::vector<TextRecord> out(features.size());
  parallel_for(features.size(), exec, [&](std::size_t i) {
    out[i] = sample_text(policy, features[i], config, derive_seed(seed, "sample", i));
  });
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

std::string TokenPolicy::to_json() const {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["schema_hash"] = schema_hash_;
  doc["vocab"] = vocab_.tokens();
  doc["cards"] = cards_;
  doc["params"] = params_;
  return doc.dump();
}

TokenPolicy TokenPolicy::from_json(const std::string& text, const Schema& schema) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.at("version").get<int>() != 1) {
    throw std::runtime_error("policy file: unsupported version");
  }
  if (doc.at("schema_hash").get<std::uint64_t>() != schema.hash()) {
    throw std::runtime_error("policy file: schema hash mismatch");
  }
  Vocab vocab = Vocab::from_tokens(doc.at("vocab").get<std::vector<std::string>>());
  TokenPolicy policy(schema, std::move(vocab));
  const auto cards = doc.at("cards").get<std::vector<std::size_t>>();
  if (cards != policy.cards_) {
    throw std::runtime_error("policy file: attribute cardinalities mismatch");
  }
  auto params = doc.at("params").get<std::vector<double>>();
  if (params.size() != policy.params_.size()) {
    throw std::runtime_error("policy file: parameter count mismatch");
  }
  policy.params_ = std::move(params);
  return policy;
}

void TokenPolicy::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write policy file: " + path);
  out << to_json() << "\n";
}

TokenPolicy TokenPolicy::load(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), schema);
}

}  // namespace actg::gen
