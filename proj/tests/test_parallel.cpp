#include "actg/control_arl.hpp"
#include "actg/desk_world.hpp"
#include "actg/dp_sgd.hpp"
#include "actg/eval.hpp"
#include "doctest.h"

// Every kernel with an OpenMP path keeps a serial reference; these tests pin
// exact agreement between the two for any thread count.

using namespace actg;

namespace {

toy::ToyCorpus shared_corpus() {
  toy::ToyConfig cfg;
  cfg.n = 400;
  cfg.seed = 99;
  return toy::make_toy_corpus(cfg);
}

}  // namespace

TEST_CASE("serial and parallel per-example gradient sums agree bitwise") {
  const auto corpus = shared_corpus();
  const gen::Vocab vocab = toy::toy_vocab();
  const auto examples = gen::make_examples(corpus.texts, vocab);
  gen::TokenPolicy policy(toy::toy_schema(), vocab);
  Rng rng(8);
  for (double& p : policy.params()) p = 0.1 * rng.gaussian();

  std::vector<double> serial_norms, parallel_norms;
  const auto serial =
      gen::clipped_gradient_sum(policy, examples, 1.0, Exec::serial, &serial_norms);
  const auto parallel =
      gen::clipped_gradient_sum(policy, examples, 1.0, Exec::parallel, &parallel_norms);
  CHECK(serial == parallel);
  CHECK(serial_norms == parallel_norms);
}

TEST_CASE("serial and parallel embedding agree bitwise") {
  const auto corpus = shared_corpus();
  eval::HashedBowEmbedder embedder;
  const eval::Matrix a = eval::embed_corpus(corpus.texts, embedder, Exec::serial);
  const eval::Matrix b = eval::embed_corpus(corpus.texts, embedder, Exec::parallel);
  CHECK(a.data == b.data);
}

TEST_CASE("serial and parallel kmeans agree bitwise") {
  const auto corpus = shared_corpus();
  eval::HashedBowEmbedder embedder;
  const eval::Matrix points = eval::embed_corpus(corpus.texts, embedder, Exec::parallel);
  const eval::KmeansResult a = eval::kmeans(points, 24, 5, 50, Exec::serial);
  const eval::KmeansResult b = eval::kmeans(points, 24, 5, 50, Exec::parallel);
  CHECK(a.assignments == b.assignments);
  CHECK(a.centroids.data == b.centroids.data);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("serial and parallel batch decoding agree exactly") {
  const auto corpus = shared_corpus();
  const gen::Vocab vocab = toy::toy_vocab();
  gen::TokenPolicy policy(toy::toy_schema(), vocab);
  Rng rng(21);
  for (double& p : policy.params()) p = 0.2 * rng.gaussian();

  std::vector<FeatureRecord> prompts;
  for (std::size_t i = 0; i < 128; ++i) prompts.push_back(*corpus.texts[i].features);
  gen::DecodingConfig cfg;
  cfg.max_tokens = 32;
  const auto a = gen::sample_batch(policy, prompts, cfg, 9, Exec::serial);
  const auto b = gen::sample_batch(policy, prompts, cfg, 9, Exec::parallel);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
}

TEST_CASE("serial and parallel rollout collection and updates agree bitwise") {
  const Schema schema = toy::toy_schema();
  const auto lexicon = toy::toy_lexicon();
  const auto corpus = shared_corpus();
  const gen::Vocab vocab = toy::toy_vocab();
  gen::TokenPolicy policy(schema, vocab);
  Rng rng(3);
  for (double& p : policy.params()) p = 0.1 * rng.gaussian();

  const arl::FeatureExtractor extractor = [&](const TextRecord& t) {
    return std::optional<FeatureRecord>(extraction::rule_extract(t, schema, lexicon));
  };
  std::vector<FeatureRecord> prompts;
  for (std::size_t i = 0; i < 48; ++i) prompts.push_back(*corpus.texts[i].features);
  gen::DecodingConfig decoding;
  decoding.max_tokens = 32;

  const auto rolls_s =
      arl::collect_rollouts(policy, prompts, extractor, decoding, 4, Exec::serial);
  const auto rolls_p =
      arl::collect_rollouts(policy, prompts, extractor, decoding, 4, Exec::parallel);
  REQUIRE(rolls_s.size() == rolls_p.size());
  for (std::size_t i = 0; i < rolls_s.size(); ++i) {
    CHECK(rolls_s[i].tokens == rolls_p[i].tokens);
    CHECK(rolls_s[i].logp_old == rolls_p[i].logp_old);
    CHECK(rolls_s[i].reward == rolls_p[i].reward);
  }

  arl::ArlConfig serial_cfg;
  serial_cfg.epochs = 2;
  serial_cfg.learning_rate = 0.05;
  serial_cfg.exec = Exec::serial;
  arl::ArlConfig parallel_cfg = serial_cfg;
  parallel_cfg.exec = Exec::parallel;

  gen::TokenPolicy a = policy, b = policy;
  arl::rl_update(a, rolls_s, policy, serial_cfg);
  arl::rl_update(b, rolls_p, policy, parallel_cfg);
  CHECK(a == b);
}
