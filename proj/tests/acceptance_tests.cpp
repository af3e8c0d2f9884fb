// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Criterion 7's two collapse clauses are known honest failures for
// this generator family; see the README.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "actg/accountant.hpp"
#include "actg/control_arl.hpp"
#include "actg/desk_world.hpp"
#include "actg/dp_sgd.hpp"
#include "actg/eval.hpp"
#include "actg/extraction.hpp"
#include "actg/feature_synth.hpp"
#include "actg/pipeline.hpp"
#include "actg/rng.hpp"
#include "doctest.h"

using namespace actg;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Verdict {
  bool ok = true;
  void expect(bool cond) { ok = ok && cond; }
};

void report(int number, const char* name, bool ok) {
  std::printf("[acceptance] criterion %d %-28s %s\n", number, name,
              ok ? "PASS" : "FAIL");
  std::fflush(stdout);
}

struct RunTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

// The frozen desk-world configuration shared by criteria 3, 7 and 8.
toy::ToyConfig desk_corpus_config() {
  toy::ToyConfig tc;
  tc.n = 4000;
  tc.seed = 101;
  tc.keyword_drop_rate = 0.02;
  tc.trailer_keyword_rate = 0.05;
  tc.foreign_keyword_rate = 0.06;
  tc.headline_rate = 0.12;
  tc.min_trailer = 6;
  tc.max_trailer = 18;
  return tc;
}

pipeline::RunConfig desk_run_config(const fs::path& dir, double epsilon) {
  const Schema schema = toy::toy_schema();
  fs::create_directories(dir);
  save_schema((dir / "schema.json").string(), schema);
  {
    std::ofstream lex(dir / "lexicon.json");
    lex << extraction::serialize_lexicon(toy::toy_lexicon(), schema);
  }
  const toy::ToyCorpus corpus = toy::make_toy_corpus(desk_corpus_config());
  save_jsonl((dir / "corpus.jsonl").string(), corpus.texts, &schema);

  pipeline::RunConfig cfg;
  cfg.private_text_path = (dir / "corpus.jsonl").string();
  cfg.schema_path = (dir / "schema.json").string();
  cfg.lexicon_path = (dir / "lexicon.json").string();
  cfg.epsilon = epsilon;
  cfg.split_ratio = 0.3;
  cfg.sample_rate = 0.25;
  cfg.steps = 900;
  cfg.learning_rate = 12.0;
  cfg.decoding.max_tokens = 32;
  cfg.bestofn_n = 16;
  cfg.bestofn_prompts = 512;
  cfg.arl.buffer_size = 512;
  cfg.arl.epochs = 4;
  cfg.arl.learning_rate = 0.25;
  cfg.arl.kl_coef = 0.2;
  cfg.arl.ratio_clip = 0.2;
  cfg.arl.gamma_start = 1.0;
  cfg.arl.gamma_end = 0.5;
  cfg.arl.rounds = 120;
  cfg.arl.anchor_minibatch = 128;
  cfg.n_syn = 1000;
  cfg.seed = 2024;
  cfg.out_dir = (dir / "run").string();
  return cfg;
}

// Mean JS distance across every 1- and 2-way marginal of the schema.
double workload_jsd(const Schema& schema, std::span<const FeatureRecord> a,
                    std::span<const FeatureRecord> b) {
  auto marginal = [&](std::span<const FeatureRecord> recs, int i, int j) {
    const std::size_t cj = j < 0 ? 1 : schema.attribute(j).options.size();
    std::vector<double> m(schema.attribute(i).options.size() * cj, 0.0);
    for (const auto& r : recs) {
      const std::size_t cell =
          j < 0 ? r.values[i] : r.values[i] * cj + r.values[j];
      m[cell] += 1.0;
    }
    for (double& x : m) x /= static_cast<double>(recs.size());
    return m;
  };
  double total = 0.0;
  int count = 0;
  const std::size_t k = schema.attribute_count();
  for (std::size_t i = 0; i < k; ++i) {
    total += eval::js_distance(marginal(a, i, -1), marginal(b, i, -1));
    ++count;
    for (std::size_t j = i + 1; j < k; ++j) {
      total += eval::js_distance(marginal(a, i, j), marginal(b, i, j));
      ++count;
    }
  }
  return total / count;
}

std::vector<FeatureRecord> features_of(const toy::ToyCorpus& corpus) {
  std::vector<FeatureRecord> out;
  out.reserve(corpus.texts.size());
  for (const auto& t : corpus.texts) out.push_back(*t.features);
  return out;
}

// Shared seeded ablation run for criteria 3 and 7.
const std::vector<pipeline::AblationRow>& desk_ablation() {
  static const std::vector<pipeline::AblationRow> rows = [] {
    const fs::path dir = fs::temp_directory_path() / "actg_acceptance_desk";
    fs::remove_all(dir);
    pipeline::RunConfig cfg = desk_run_config(dir, 4.0);
    const std::vector<std::string> variants = {"actg", "actg-rl", "actg-arl"};
    return pipeline::run_ablation(cfg, variants);
  }();
  return rows;
}

}  // namespace

TEST_CASE("criterion 1: accounting exactness") {
  using namespace accountant;
  RunTimer timer;
  Verdict v;

  // independent oracle: fine-grid minimization of a/2 + ln(1e5)/(a-1)
  double oracle = kInf;
  for (double a = 1.0001; a < 300.0; a += 1e-4) {
    oracle = std::min(oracle, a / 2.0 + std::log(1e5) / (a - 1.0));
  }
  const DpResult res = rdp_to_dp(mechanism_curve(gaussian_mechanism(1.0, 1)), 1e-5);
  v.expect(std::abs(res.epsilon - 5.299) <= 0.01);
  v.expect(std::abs(res.epsilon - oracle) <= 0.01);

  // zCDP <-> Gaussian interchangeability, exact on the full grid
  for (double sigma : {0.5, 1.0, 2.0, 7.5}) {
    const double rho = 1.0 / (2.0 * sigma * sigma);
    for (double alpha : alpha_grid()) {
      v.expect(zcdp_rdp(rho, alpha) == gaussian_rdp(sigma, alpha));
    }
  }

  // composition additivity, exact with dyadic parameters
  const MechanismSpec a[] = {gaussian_mechanism(1.0, 3), zcdp_mechanism(0.25, 2)};
  const MechanismSpec b[] = {gaussian_mechanism(0.5, 2)};
  const std::vector<MechanismSpec> both = {a[0], a[1], b[0]};
  const RdpCurve lhs = compose(a) + compose(b);
  const RdpCurve rhs = compose(both);
  for (std::size_t i = 0; i < lhs.eps.size(); ++i) v.expect(lhs.eps[i] == rhs.eps[i]);

  v.expect(timer.seconds() < 1.0);
  report(1, "accounting-exactness", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 2: calibration round-trip") {
  using namespace accountant;
  RunTimer timer;
  Verdict v;

  const double delta = delta_rule(28846);
  const double q = 2048.0 / 28846.0;
  const std::int64_t steps = 1120;
  for (double target : {1.0, 4.0}) {
    const double sigma = calibrate_sigma(target, delta, q, steps);
    const double eps =
        rdp_to_dp(mechanism_curve(subsampled_gaussian_mechanism(sigma, q, steps)), delta)
            .epsilon;
    v.expect(eps <= target);
    v.expect(eps >= target * (1.0 - 1e-3));
  }

  v.expect(timer.seconds() < 10.0);
  report(2, "calibration-round-trip", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 3: metric laws") {
  RunTimer timer;
  Verdict v;

  Rng rng(2024);
  auto random_distribution = [&](std::size_t dim) {
    std::vector<double> p(dim);
    double sum = 0.0;
    for (double& x : p) {
      x = -std::log(1.0 - rng.uniform());
      sum += x;
    }
    for (double& x : p) x /= sum;
    return p;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t dim = 2 + rng.uniform_index(8);
    const auto p = random_distribution(dim);
    const auto q = random_distribution(dim);
    const auto r = random_distribution(dim);
    const double dpq = eval::js_distance(p, q);
    v.expect(std::abs(dpq - eval::js_distance(q, p)) < 1e-12);  // symmetry
    v.expect(dpq >= 0.0 && dpq <= 1.0);
    v.expect(eval::js_distance(p, p) <= 1e-9);  // identity
    v.expect(dpq <= eval::js_distance(p, r) + eval::js_distance(q, r) + 1e-12);
  }
  const double law_seconds = timer.seconds();

  // triangle wiring on every variant of the seeded pipeline run
  for (const auto& row : desk_ablation()) {
    const auto& s = row.report.scalars;
    v.expect(s.at("d_js_f") <= s.at("d_js_f1") + s.at("d_js_f2") + 1e-12);
  }

  v.expect(law_seconds < 30.0);
  report(3, "metric-laws", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 4: gradient correctness") {
  RunTimer timer;
  Verdict v;

  const Schema schema = toy::toy_schema();
  const gen::Vocab vocab = toy::toy_vocab();
  Rng rng(99);
  for (int cases = 0; cases < 100; ++cases) {
    gen::TokenPolicy policy(schema, vocab);
    for (double& p : policy.params()) p = 0.4 * rng.gaussian();
    FeatureRecord f;
    for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
      f.values.push_back(static_cast<std::int32_t>(
          rng.uniform_index(schema.attribute(k).options.size())));
    }
    std::vector<int> tokens;
    const int len = 3 + static_cast<int>(rng.uniform_index(6));
    for (int t = 0; t < len; ++t) {
      tokens.push_back(static_cast<int>(3 + rng.uniform_index(vocab.size() - 3)));
    }
    tokens.push_back(vocab.eos());

    std::vector<double> grad(policy.param_size(), 0.0);
    gen::policy_grad_accum(policy, f, tokens, 1.0, grad);

    // probe random coordinates with central differences
    const double h = 1e-5;
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t idx = rng.uniform_index(policy.param_size());
      gen::TokenPolicy plus = policy, minus = policy;
      plus.params()[idx] += h;
      minus.params()[idx] -= h;
      const double fd = (gen::policy_logprob(plus, f, tokens) -
                         gen::policy_logprob(minus, f, tokens)) /
                        (2.0 * h);
      const double scale = std::max({1.0, std::abs(fd), std::abs(grad[idx])});
      v.expect(std::abs(grad[idx] - fd) <= 1e-6 * scale);
    }
  }

  v.expect(timer.seconds() < 30.0);
  report(4, "gradient-correctness", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 5: dp-sgd contract") {
  RunTimer timer;
  Verdict v;

  const Schema schema = toy::toy_schema();
  const gen::Vocab vocab = toy::toy_vocab();
  toy::ToyConfig tc = desk_corpus_config();
  tc.n = 300;
  const auto corpus = toy::make_toy_corpus(tc);
  const auto examples = gen::make_examples(corpus.texts, vocab);

  // clipped norms never exceed 1
  {
    gen::TokenPolicy policy(schema, vocab);
    Rng wr(5);
    for (double& p : policy.params()) p = 0.3 * wr.gaussian();
    std::vector<double> norms;
    gen::clipped_gradient_sum(policy, examples, 1.0, Exec::parallel, &norms);
    for (double n : norms) v.expect(n <= 1.0 + 1e-12);
  }

  // sigma = 0 and infinite clip reproduce plain batch SGD bitwise
  {
    gen::DpSgdConfig cfg;
    cfg.clip = kInf;
    cfg.sigma = 0.0;
    cfg.sample_rate = 0.5;
    cfg.learning_rate = 0.25;
    gen::TokenPolicy dp_policy(schema, vocab);
    Rng noise(1);
    const std::span<const gen::Example> batch(examples.data(), 64);
    gen::dp_sgd_step(dp_policy, batch, cfg, examples.size(), noise);

    gen::TokenPolicy plain(schema, vocab);
    std::vector<double> sum(plain.param_size(), 0.0), one(plain.param_size());
    for (const auto& ex : batch) {
      std::fill(one.begin(), one.end(), 0.0);
      gen::policy_grad_accum(plain, ex.feature, ex.tokens, 1.0, one);
      gen::axpy(1.0, one, sum);
    }
    gen::axpy(cfg.learning_rate / (cfg.sample_rate * examples.size()), sum,
              plain.params());
    v.expect(dp_policy == plain);
  }

  // seeded 100-step training is bitwise reproducible
  {
    gen::DpSgdConfig cfg;
    cfg.clip = 1.0;
    cfg.sigma = 1.1;
    cfg.sample_rate = 0.2;
    cfg.steps = 100;
    cfg.learning_rate = 1.0;
    cfg.seed = 777;
    const auto a = gen::train_dpft(examples, schema, vocab, cfg, 1e-5);
    const auto b = gen::train_dpft(examples, schema, vocab, cfg, 1e-5);
    v.expect(a.policy == b.policy);
  }

  v.expect(timer.seconds() < 60.0);
  report(5, "dp-sgd-contract", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 6: aim-lite fidelity") {
  RunTimer timer;
  Verdict v;

  const Schema schema = toy::toy_schema();
  toy::ToyConfig tc = desk_corpus_config();
  tc.n = 10000;
  tc.seed = 55;
  const auto priv = features_of(toy::make_toy_corpus(tc));

  {
    const auto model = synth::aim_fit(priv, schema, 1e6, 21);
    const auto sample = synth::aim_sample(model, 50000, 5);
    v.expect(eval::attribute_jsd(schema, priv, sample).mean <= 0.02);
  }
  {
    const auto model = synth::aim_fit(priv, schema, 0.5, 22);
    const auto sample = synth::aim_sample(model, 50000, 6);
    v.expect(eval::attribute_jsd(schema, priv, sample).mean <= 0.08);
  }

  // sparse regime, equal budget: AIM-lite beats independent per-attribute
  // histograms on the full workload of 1- and 2-way marginals (seeds 11-15;
  // thresholds pinned from the pre-build pilot)
  {
    int aim_wins = 0;
    double aim_mean = 0.0, hist_mean = 0.0;
    for (std::uint64_t seed = 11; seed <= 15; ++seed) {
      toy::ToyConfig sparse_tc = desk_corpus_config();
      sparse_tc.n = 600;
      sparse_tc.seed = seed * 31;
      const auto sparse_priv = features_of(toy::make_toy_corpus(sparse_tc));
      const auto aim = synth::aim_fit(sparse_priv, schema, 0.5, seed);
      const double a =
          workload_jsd(schema, sparse_priv, synth::aim_sample(aim, 20000, seed));
      const auto hist = synth::histogram_fit_budget(sparse_priv, schema, 0.5, seed);
      const double h = workload_jsd(schema, sparse_priv,
                                    synth::histogram_model_sample(hist, 20000, seed));
      aim_mean += a;
      hist_mean += h;
      aim_wins += a < h;
    }
    v.expect(aim_wins >= 4);
    v.expect(aim_mean < hist_mean);
  }

  v.expect(timer.seconds() < 120.0);
  report(6, "aim-lite-fidelity", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 7: reward-hacking reproduction") {
  RunTimer timer;
  const auto& rows = desk_ablation();
  REQUIRE(rows.size() == 3);
  const auto& actg = rows[0].report.scalars;
  const auto& rl = rows[1].report.scalars;
  const auto& arl = rows[2].report.scalars;

  const bool rl_ifacc = rl.at("ifacc") - actg.at("ifacc") >= 0.10;
  const bool rl_length = rl.at("median_length") <= 0.5 * actg.at("median_length");
  const bool rl_mauve = actg.at("mauve_lite") - rl.at("mauve_lite") >= 0.3;
  const bool arl_ifacc = arl.at("ifacc") - actg.at("ifacc") >= 0.08;
  const bool arl_length = std::abs(arl.at("median_length") - actg.at("median_length")) <=
                          0.2 * actg.at("median_length");
  const bool arl_mauve = std::abs(arl.at("mauve_lite") - actg.at("mauve_lite")) <= 0.1;
  const bool ordering = arl.at("ifacc") > actg.at("ifacc") &&
                        rl.at("ifacc") > actg.at("ifacc") &&
                        std::abs(arl.at("ifacc") - rl.at("ifacc")) <= 0.05;
  const bool in_budget = timer.seconds() < 600.0;

  std::printf("[acceptance]   actg:     ifacc %.3f mauve %.3f median %.1f\n",
              actg.at("ifacc"), actg.at("mauve_lite"), actg.at("median_length"));
  std::printf("[acceptance]   actg-rl:  ifacc %.3f mauve %.3f median %.1f\n",
              rl.at("ifacc"), rl.at("mauve_lite"), rl.at("median_length"));
  std::printf("[acceptance]   actg-arl: ifacc %.3f mauve %.3f median %.1f\n",
              arl.at("ifacc"), arl.at("mauve_lite"), arl.at("median_length"));
  std::printf(
      "[acceptance]   rl-ifacc %s | rl-length %s | rl-mauve %s | arl-ifacc %s | "
      "arl-length %s | arl-mauve %s | ordering %s\n",
      rl_ifacc ? "PASS" : "FAIL", rl_length ? "PASS" : "FAIL",
      rl_mauve ? "PASS" : "FAIL", arl_ifacc ? "PASS" : "FAIL",
      arl_length ? "PASS" : "FAIL", arl_mauve ? "PASS" : "FAIL",
      ordering ? "PASS" : "FAIL");

  report(7, "reward-hacking-reproduction",
         rl_ifacc && rl_length && rl_mauve && arl_ifacc && arl_length && arl_mauve &&
             ordering && in_budget);
  CHECK(rl_ifacc);
  CHECK(arl_ifacc);
  CHECK(arl_length);
  CHECK(arl_mauve);
  CHECK(ordering);
  CHECK(in_budget);
  // Known honest failures: a stateless log-linear generator has no
  // compounding drift, so rubric compliance never decays with length and the
  // PPO optimum keeps or extends length instead of collapsing it. The IFAcc
  // and anchoring clauses above hold; these two cannot.
  CHECK(rl_length);
  CHECK(rl_mauve);
}

TEST_CASE("criterion 8: privacy firewall") {
  Verdict v;

  const fs::path dir = fs::temp_directory_path() / "actg_acceptance_firewall";
  fs::remove_all(dir);
  pipeline::RunConfig cfg = desk_run_config(dir, 4.0);
  // the firewall property is independent of training depth; keep this quick
  cfg.steps = 60;
  cfg.learning_rate = 2.0;
  cfg.bestofn_prompts = 64;
  cfg.arl.buffer_size = 64;
  cfg.arl.rounds = 4;
  cfg.n_syn = 400;

  bool hook_ran = false;
  const pipeline::RunArtifacts art = pipeline::run_actg_arl(cfg, [&] {
    fs::remove(cfg.private_text_path);
    hook_ran = true;
  });
  v.expect(hook_ran);
  v.expect(!fs::exists(cfg.private_text_path));
  v.expect(fs::exists(art.synth_texts_path));

  v.expect(art.spend.account().epsilon <= 4.0);
  v.expect(art.spend.ledger.size() == 2);
  v.expect(art.spend.ledger[0].kind == accountant::MechanismKind::zcdp);
  v.expect(art.spend.ledger[1].kind == accountant::MechanismKind::subsampled_gaussian);

  report(8, "privacy-firewall", v.ok);
  CHECK(v.ok);
}

TEST_CASE("criterion 9: mauve-lite sanity") {
  RunTimer timer;
  Verdict v;

  toy::ToyConfig tc = desk_corpus_config();
  tc.n = 10000;
  tc.seed = 77;
  const auto corpus = toy::make_toy_corpus(tc);
  std::vector<TextRecord> first(corpus.texts.begin(), corpus.texts.begin() + 5000);

  eval::HashedBowEmbedder embedder;
  eval::MauveOptions opts;
  opts.seed = 3;
  // the n/10 cluster rule at n = 5000; identical corpora give identical
  // cluster histograms, so the frontier fills the unit square
  v.expect(eval::default_cluster_count(first.size()) == 500);
  v.expect(eval::mauve_lite(first, first, embedder, opts) >= 0.99);

  std::vector<TextRecord> disjoint;
  Rng rng(71);
  for (int i = 0; i < 5000; ++i) {
    std::string s;
    for (int t = 0; t < 25; ++t) s += "zz" + std::to_string(rng.uniform_index(60)) + " ";
    disjoint.push_back(make_text_record(s));
  }
  v.expect(eval::mauve_lite(first, disjoint, embedder, opts) <= 0.05);

  v.expect(timer.seconds() < 60.0);
  report(9, "mauve-lite-sanity", v.ok);
  CHECK(v.ok);
}
