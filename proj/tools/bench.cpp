// Serial vs OpenMP timings for the parallel kernels: per-example clipped
// gradients, corpus embedding, k-means assignment, and batch decoding.

#include <chrono>
#include <cstdio>
#include <vector>

#include "actg/control_arl.hpp"
#include "actg/desk_world.hpp"
#include "actg/dp_sgd.hpp"
#include "actg/eval.hpp"
#include "actg/parallel.hpp"
#include "actg/policy.hpp"

using namespace actg;

namespace {

template <class F>
double time_ms(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s %10.1f ms %10.1f ms %8.2fx\n", name, serial_ms, parallel_ms,
              parallel_ms > 0 ? serial_ms / parallel_ms : 0.0);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", max_threads());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  toy::ToyConfig cfg;
  cfg.n = 3000;
  cfg.seed = 7;
  const toy::ToyCorpus corpus = toy::make_toy_corpus(cfg);
  const Schema schema = toy::toy_schema();
  const gen::Vocab vocab = toy::toy_vocab();
  const auto examples = gen::make_examples(corpus.texts, vocab);

  // Warmed-up policy so gradients are non-trivial.
  gen::TokenPolicy policy(schema, vocab);
  {
    Rng rng(1);
    for (double& p : policy.params()) p = 0.05 * rng.gaussian();
  }

  {
    const std::span<const gen::Example> batch(examples.data(), 1024);
    std::vector<double> serial_out, parallel_out;
    const double s = time_ms(
        [&] { serial_out = gen::clipped_gradient_sum(policy, batch, 1.0, Exec::serial); });
    const double p = time_ms([&] {
      parallel_out = gen::clipped_gradient_sum(policy, batch, 1.0, Exec::parallel);
    });
    if (serial_out != parallel_out) {
      std::printf("per-example gradients: serial/parallel mismatch!\n");
      return 1;
    }
    report("per-example clipped grads", s, p);
  }

  eval::HashedBowEmbedder embedder;
  eval::Matrix points;
  {
    eval::Matrix serial_m, parallel_m;
    const double s = time_ms(
        [&] { serial_m = eval::embed_corpus(corpus.texts, embedder, Exec::serial); });
    const double p = time_ms(
        [&] { parallel_m = eval::embed_corpus(corpus.texts, embedder, Exec::parallel); });
    if (serial_m.data != parallel_m.data) {
      std::printf("embedding: serial/parallel mismatch!\n");
      return 1;
    }
    points = std::move(parallel_m);
    report("corpus embedding", s, p);
  }

  {
    eval::KmeansResult serial_k, parallel_k;
    const double s =
        time_ms([&] { serial_k = eval::kmeans(points, 100, 3, 25, Exec::serial); });
    const double p =
        time_ms([&] { parallel_k = eval::kmeans(points, 100, 3, 25, Exec::parallel); });
    if (serial_k.assignments != parallel_k.assignments ||
        serial_k.centroids.data != parallel_k.centroids.data) {
      std::printf("kmeans: serial/parallel mismatch!\n");
      return 1;
    }
    report("k-means (k=100)", s, p);
  }

  {
    std::vector<FeatureRecord> prompts;
    for (std::size_t i = 0; i < 2000; ++i) prompts.push_back(*corpus.texts[i].features);
    gen::DecodingConfig decoding;
    decoding.max_tokens = 48;
    std::vector<TextRecord> serial_t, parallel_t;
    const double s = time_ms(
        [&] { serial_t = gen::sample_batch(policy, prompts, decoding, 11, Exec::serial); });
    const double p = time_ms([&] {
      parallel_t = gen::sample_batch(policy, prompts, decoding, 11, Exec::parallel);
    });
    for (std::size_t i = 0; i < serial_t.size(); ++i) {
      if (serial_t[i].text != parallel_t[i].text) {
        std::printf("batch decode: serial/parallel mismatch!\n");
        return 1;
      }
    }
    report("batch decoding", s, p);
  }

  return 0;
}
