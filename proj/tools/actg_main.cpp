#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "actg/accountant.hpp"
#include "actg/control_arl.hpp"
#include "actg/desk_world.hpp"
#include "actg/dp_sgd.hpp"
#include "actg/eval.hpp"
#include "actg/extraction.hpp"
#include "actg/feature_synth.hpp"
#include "actg/pipeline.hpp"
#include "actg/schema.hpp"

namespace fs = std::filesystem;
using namespace actg;

namespace {

double parse_eps(const std::string& s) {
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

std::vector<double> split_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

eval::FeatureExtractor make_extractor(const Schema& schema,
                                      const extraction::Lexicon& lexicon) {
  return [&schema, &lexicon](const TextRecord& t) {
    return std::optional<FeatureRecord>(extraction::rule_extract(t, schema, lexicon));
  };
}

struct MechanismFlags {
  std::vector<std::string> gaussian;    // "sigma,steps"
  std::vector<std::string> subsampled;  // "sigma,q,steps"
  std::vector<std::string> zcdp;        // "rho,steps"

  std::vector<accountant::MechanismSpec> parse() const {
    std::vector<accountant::MechanismSpec> specs;
    for (const auto& s : gaussian) {
      const auto v = split_numbers(s);
      specs.push_back(accountant::gaussian_mechanism(
          v.at(0), v.size() > 1 ? static_cast<std::int64_t>(v[1]) : 1));
    }
    for (const auto& s : subsampled) {
      const auto v = split_numbers(s);
      specs.push_back(accountant::subsampled_gaussian_mechanism(
          v.at(0), v.at(1), v.size() > 2 ? static_cast<std::int64_t>(v[2]) : 1));
    }
    for (const auto& s : zcdp) {
      const auto v = split_numbers(s);
      specs.push_back(accountant::zcdp_mechanism(
          v.at(0), v.size() > 1 ? static_cast<std::int64_t>(v[1]) : 1));
    }
    if (specs.empty()) throw CLI::ValidationError("no mechanisms given");
    return specs;
  }
};

void add_mechanism_flags(CLI::App* cmd, MechanismFlags& flags) {
  cmd->add_option("--gaussian", flags.gaussian, "Gaussian mechanism 'sigma[,steps]'");
  cmd->add_option("--subsampled", flags.subsampled,
                  "subsampled Gaussian 'sigma,q[,steps]'");
  cmd->add_option("--zcdp", flags.zcdp, "zCDP mechanism 'rho[,steps]'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ACTG-ARL: DP synthetic text pipeline at desk scale"};
  app.require_subcommand(1);

  // ---- make-toy ----
  auto* make_toy = app.add_subcommand("make-toy", "emit the desk-world corpus");
  struct {
    std::string out = "toy";
    std::size_t n = 5000;
    std::uint64_t seed = 1;
    double drop_rate = 0.03;
  } toy_args;
  make_toy->add_option("--out", toy_args.out, "output directory");
  make_toy->add_option("--n", toy_args.n, "corpus size");
  make_toy->add_option("--seed", toy_args.seed, "seed");
  make_toy->add_option("--drop-rate", toy_args.drop_rate, "keyword drop rate");
  make_toy->callback([&] {
    fs::create_directories(toy_args.out);
    const Schema schema = toy::toy_schema();
    save_schema(toy_args.out + "/schema.json", schema);
    std::ofstream lex(toy_args.out + "/lexicon.json");
    lex << extraction::serialize_lexicon(toy::toy_lexicon(), schema) << "\n";
    toy::ToyConfig cfg;
    cfg.n = toy_args.n;
    cfg.seed = toy_args.seed;
    cfg.keyword_drop_rate = toy_args.drop_rate;
    const toy::ToyCorpus corpus = toy::make_toy_corpus(cfg);
    save_jsonl(toy_args.out + "/corpus.jsonl", corpus.texts, &schema);
    std::cout << "wrote " << corpus.texts.size() << " texts to " << toy_args.out << "\n";
  });

  // ---- annotate ----
  auto* annotate = app.add_subcommand("annotate", "extract features for a corpus");
  struct {
    std::string in, schema, lexicon, out;
    std::string oracle_host;
    int oracle_port = 0;
    std::string oracle_path = "/extract";
    int timeout_ms = 10000, retries = 3, parallelism = 8;
  } ann;
  annotate->add_option("--in", ann.in, "input JSONL")->required();
  annotate->add_option("--schema", ann.schema, "schema JSON")->required();
  annotate->add_option("--lexicon", ann.lexicon, "lexicon JSON");
  annotate->add_option("--oracle-host", ann.oracle_host, "HTTP oracle host");
  annotate->add_option("--oracle-port", ann.oracle_port, "HTTP oracle port");
  annotate->add_option("--oracle-path", ann.oracle_path, "HTTP oracle path");
  annotate->add_option("--timeout-ms", ann.timeout_ms, "oracle timeout");
  annotate->add_option("--retries", ann.retries, "transport retries");
  annotate->add_option("--parallelism", ann.parallelism, "concurrent oracle calls");
  annotate->add_option("--out", ann.out, "output JSONL")->required();
  annotate->callback([&] {
    const Schema schema = load_schema(ann.schema);
    const auto texts = load_jsonl(ann.in, &schema);
    extraction::AnnotateOptions opts;
    opts.max_retries = ann.retries;
    opts.parallelism = ann.parallelism;
    extraction::AnnotatedDataset annotated;
    if (!ann.oracle_host.empty()) {
      extraction::HttpOracle oracle(ann.oracle_host, ann.oracle_port, ann.oracle_path,
                                    ann.timeout_ms);
      annotated = extraction::annotate_dataset(oracle, texts, schema, opts);
    } else {
      if (ann.lexicon.empty()) throw CLI::ValidationError("need --lexicon or an oracle");
      extraction::RuleOracle oracle(schema, extraction::load_lexicon(ann.lexicon, schema));
      annotated = extraction::annotate_dataset(oracle, texts, schema, opts);
    }
    save_jsonl(ann.out, annotated.pairs, &schema);
    std::cout << annotated.pairs.size() << " pairs, " << annotated.failures.size()
              << " failures\n";
    for (const auto& f : annotated.failures) {
      std::cerr << "  failure at index " << f.index << ": " << f.reason << "\n";
    }
  });

  // ---- synth-features ----
  auto* synth_cmd = app.add_subcommand("synth-features", "fit a DP feature generator");
  struct {
    std::string method = "aim";
    std::string rho = "1.0";
    std::uint64_t seed = 1;
    std::string schema, features_in, out;
    std::size_t sample_n = 0;
    std::string sample_out;
    int rounds = 0;
  } sf;
  synth_cmd->add_option("--method", sf.method, "aim | histogram");
  synth_cmd->add_option("--rho", sf.rho, "zCDP budget (or 'inf')");
  synth_cmd->add_option("--seed", sf.seed, "seed");
  synth_cmd->add_option("--schema", sf.schema)->required();
  synth_cmd->add_option("--features-in", sf.features_in, "annotated JSONL")->required();
  synth_cmd->add_option("--out", sf.out, "model output")->required();
  synth_cmd->add_option("--sample", sf.sample_n, "also draw this many features");
  synth_cmd->add_option("--sample-out", sf.sample_out, "feature sample JSONL");
  synth_cmd->add_option("--rounds", sf.rounds, "aim rounds (0 = 3K)");
  synth_cmd->callback([&] {
    const Schema schema = load_schema(sf.schema);
    const auto pairs = load_jsonl(sf.features_in, &schema);
    std::vector<FeatureRecord> features;
    for (const auto& rec : pairs) {
      if (rec.features) features.push_back(*rec.features);
    }
    const double rho = parse_eps(sf.rho);
    std::vector<FeatureRecord> sample;
    if (sf.method == "aim") {
      synth::AimOptions opts;
      opts.rounds = sf.rounds;
      const synth::MarginalModel model = synth::aim_fit(features, schema, rho, sf.seed, opts);
      model.save(sf.out);
      if (sf.sample_n > 0) sample = synth::aim_sample(model, sf.sample_n, sf.seed);
      std::cout << "aim model: " << model.measurements().size() << " measurements, rho "
                << model.rho_spent() << "/" << model.rho_total() << "\n";
    } else if (sf.method == "histogram") {
      const synth::HistogramModel model =
          synth::histogram_fit_budget(features, schema, rho, sf.seed);
      std::ofstream out(sf.out);
      out << "{\"method\":\"histogram\"}\n";
      if (sf.sample_n > 0) sample = synth::histogram_model_sample(model, sf.sample_n, sf.seed);
      std::cout << "histogram model over " << schema.attribute_count() << " attributes\n";
    } else {
      throw CLI::ValidationError("unknown method " + sf.method);
    }
    if (!sample.empty() && !sf.sample_out.empty()) {
      std::vector<TextRecord> records(sample.size());
      for (std::size_t i = 0; i < sample.size(); ++i) records[i].features = sample[i];
      save_jsonl(sf.sample_out, records, &schema);
    }
  });

  // ---- train-generator ----
  auto* train = app.add_subcommand("train-generator", "DP-FT the conditional generator");
  struct {
    std::string pairs, schema, out;
    double clip = 1.0, sigma = 0.0, q = 0.08, lr = 0.5;
    std::string target_eps;
    double delta = 1e-5;
    std::int64_t steps = 250;
    std::uint64_t seed = 1;
  } tg;
  train->add_option("--pairs", tg.pairs, "annotated JSONL")->required();
  train->add_option("--schema", tg.schema)->required();
  train->add_option("--out", tg.out, "policy output")->required();
  train->add_option("--clip", tg.clip, "clip norm");
  train->add_option("--sigma", tg.sigma, "noise multiplier");
  train->add_option("--target-eps", tg.target_eps, "calibrate sigma to this epsilon");
  train->add_option("--delta", tg.delta, "delta");
  train->add_option("--q", tg.q, "Poisson sample rate");
  train->add_option("--steps", tg.steps, "steps");
  train->add_option("--lr", tg.lr, "learning rate");
  train->add_option("--seed", tg.seed, "seed");
  train->callback([&] {
    const Schema schema = load_schema(tg.schema);
    const auto pairs = load_jsonl(tg.pairs, &schema);
    std::vector<std::string> corpus_tokens;
    for (const auto& rec : pairs) {
      corpus_tokens.insert(corpus_tokens.end(), rec.tokens.begin(), rec.tokens.end());
    }
    const gen::Vocab vocab = gen::Vocab::build(corpus_tokens);
    gen::DpSgdConfig cfg;
    cfg.clip = tg.clip;
    cfg.sigma = tg.sigma;
    if (!tg.target_eps.empty()) {
      cfg.sigma = accountant::calibrate_sigma(parse_eps(tg.target_eps), tg.delta, tg.q,
                                              tg.steps);
    }
    cfg.sample_rate = tg.q;
    cfg.steps = tg.steps;
    cfg.learning_rate = tg.lr;
    cfg.seed = tg.seed;
    const auto examples = gen::make_examples(pairs, vocab);
    gen::DpftResult result = gen::train_dpft(examples, schema, vocab, cfg, tg.delta);
    result.policy.save(tg.out);
    std::cout << "trained " << cfg.steps << " steps, sigma " << cfg.sigma << ", spend eps "
              << result.spend.epsilon << " at delta " << tg.delta << "\n";
  });

  // ---- bestofn ----
  auto* bofn = app.add_subcommand("bestofn", "curate the best-of-N anchor dataset");
  struct {
    std::string policy, schema, lexicon, model, out;
    int n = 16;
    std::size_t prompts = 512;
    std::uint64_t seed = 1;
    int max_tokens = 64;
  } bo;
  bofn->add_option("--policy", bo.policy)->required();
  bofn->add_option("--schema", bo.schema)->required();
  bofn->add_option("--lexicon", bo.lexicon)->required();
  bofn->add_option("--model", bo.model, "stage-1 model JSON")->required();
  bofn->add_option("--n", bo.n, "candidates per prompt");
  bofn->add_option("--prompts", bo.prompts, "prompt count");
  bofn->add_option("--seed", bo.seed);
  bofn->add_option("--max-tokens", bo.max_tokens);
  bofn->add_option("--out", bo.out, "anchor JSONL")->required();
  bofn->callback([&] {
    const Schema schema = load_schema(bo.schema);
    const extraction::Lexicon lexicon = extraction::load_lexicon(bo.lexicon, schema);
    const gen::TokenPolicy policy = gen::TokenPolicy::load(bo.policy, schema);
    const auto model = synth::MarginalModel::load(bo.model, schema);
    gen::DecodingConfig decoding;
    decoding.max_tokens = bo.max_tokens;
    const arl::AnchorDataset anchor = arl::build_anchor_dataset(
        [&](std::size_t n, std::uint64_t s) { return synth::aim_sample(model, n, s); },
        policy, make_extractor(schema, lexicon), bo.n, bo.prompts, decoding, bo.seed);
    std::vector<TextRecord> records;
    double mean_score = 0.0;
    for (const auto& e : anchor.entries) {
      TextRecord rec = make_text_record(policy.vocab().decode(e.tokens));
      rec.features = e.feature;
      records.push_back(std::move(rec));
      mean_score += e.score;
    }
    save_jsonl(bo.out, records, &schema);
    std::cout << "anchor of " << records.size() << " entries, mean score "
              << (records.empty() ? 0.0 : mean_score / records.size()) << "\n";
  });

  // ---- arl-train ----
  auto* arl_cmd = app.add_subcommand("arl-train", "anchored RL post-training");
  struct {
    std::string policy, schema, lexicon, model, anchor, out, log;
    arl::ArlConfig cfg;
    int max_tokens = 64;
  } at;
  arl_cmd->add_option("--policy", at.policy)->required();
  arl_cmd->add_option("--schema", at.schema)->required();
  arl_cmd->add_option("--lexicon", at.lexicon)->required();
  arl_cmd->add_option("--model", at.model)->required();
  arl_cmd->add_option("--anchor", at.anchor, "anchor JSONL (omit for plain RL)");
  arl_cmd->add_option("--gamma-start", at.cfg.gamma_start);
  arl_cmd->add_option("--gamma-end", at.cfg.gamma_end);
  arl_cmd->add_option("--rounds", at.cfg.rounds);
  arl_cmd->add_option("--buffer", at.cfg.buffer_size);
  arl_cmd->add_option("--epochs", at.cfg.epochs);
  arl_cmd->add_option("--kl", at.cfg.kl_coef);
  arl_cmd->add_option("--clip", at.cfg.ratio_clip);
  arl_cmd->add_option("--lr", at.cfg.learning_rate);
  arl_cmd->add_option("--seed", at.cfg.seed);
  arl_cmd->add_option("--max-tokens", at.max_tokens);
  arl_cmd->add_option("--out", at.out)->required();
  arl_cmd->add_option("--log", at.log, "training log CSV");
  arl_cmd->callback([&] {
    const Schema schema = load_schema(at.schema);
    const extraction::Lexicon lexicon = extraction::load_lexicon(at.lexicon, schema);
    const gen::TokenPolicy policy = gen::TokenPolicy::load(at.policy, schema);
    const auto model = synth::MarginalModel::load(at.model, schema);
    arl::AnchorDataset anchor;
    if (!at.anchor.empty()) {
      const auto records = load_jsonl(at.anchor, &schema);
      for (const auto& rec : records) {
        arl::AnchorEntry entry;
        entry.feature = *rec.features;
        entry.tokens = policy.vocab().encode(rec.tokens);
        entry.tokens.push_back(policy.vocab().eos());
        anchor.entries.push_back(std::move(entry));
      }
    } else {
      at.cfg.gamma_start = 0.0;
      at.cfg.gamma_end = 0.0;
    }
    gen::DecodingConfig decoding;
    decoding.max_tokens = at.max_tokens;
    std::vector<arl::RoundLog> log;
    const gen::TokenPolicy trained = arl::arl_train(
        policy,
        [&](std::size_t n, std::uint64_t s) { return synth::aim_sample(model, n, s); },
        anchor, make_extractor(schema, lexicon), decoding, at.cfg, &log);
    trained.save(at.out);
    if (!at.log.empty()) {
      std::ofstream out(at.log);
      out << arl::round_log_csv(log);
    }
    std::cout << "arl-train finished " << at.cfg.rounds << " rounds\n";
  });

  // ---- generate ----
  auto* generate = app.add_subcommand("generate", "sample synthetic text");
  struct {
    std::string policy, schema, model, features, out;
    std::size_t n = 1000;
    std::uint64_t seed = 1;
    gen::DecodingConfig decoding{1.0, 0.95, 0, 64};
  } g;
  generate->add_option("--policy", g.policy)->required();
  generate->add_option("--schema", g.schema)->required();
  generate->add_option("--model", g.model, "stage-1 model for feature prompts");
  generate->add_option("--features", g.features, "feature JSONL instead of --model");
  generate->add_option("--n", g.n);
  generate->add_option("--seed", g.seed);
  generate->add_option("--temperature", g.decoding.temperature);
  generate->add_option("--top-p", g.decoding.top_p);
  generate->add_option("--top-k", g.decoding.top_k);
  generate->add_option("--max-tokens", g.decoding.max_tokens);
  generate->add_option("--out", g.out)->required();
  generate->callback([&] {
    const Schema schema = load_schema(g.schema);
    const gen::TokenPolicy policy = gen::TokenPolicy::load(g.policy, schema);
    std::vector<FeatureRecord> features;
    if (!g.model.empty()) {
      const auto model = synth::MarginalModel::load(g.model, schema);
      features = synth::aim_sample(model, g.n, derive_seed(g.seed, "generate-features"));
    } else if (!g.features.empty()) {
      for (const auto& rec : load_jsonl(g.features, &schema)) {
        features.push_back(*rec.features);
      }
      if (features.size() > g.n) features.resize(g.n);
    } else {
      throw CLI::ValidationError("need --model or --features");
    }
    const auto texts = gen::sample_batch(policy, features, g.decoding,
                                         derive_seed(g.seed, "generate-texts"));
    std::vector<TextRecord> out(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      out[i] = texts[i];
      out[i].features = features[i];
    }
    save_jsonl(g.out, out, &schema);
    std::cout << "generated " << out.size() << " texts\n";
  });

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "metric suite over two corpora");
  struct {
    std::string synthetic, reference, schema, lexicon, out_json = "report.json",
                                                       out_csv = "report.csv";
    std::size_t clusters = 0;
    double scaling = 5.0;
    std::uint64_t seed = 1;
  } ev;
  evaluate->add_option("--synthetic", ev.synthetic, "synthetic JSONL (with features)")
      ->required();
  evaluate->add_option("--reference", ev.reference, "reference JSONL (annotated)")
      ->required();
  evaluate->add_option("--schema", ev.schema)->required();
  evaluate->add_option("--lexicon", ev.lexicon)->required();
  evaluate->add_option("--clusters", ev.clusters, "0 = synthetic/10");
  evaluate->add_option("--scaling", ev.scaling, "frontier scaling c");
  evaluate->add_option("--seed", ev.seed);
  evaluate->add_option("--out-json", ev.out_json);
  evaluate->add_option("--out-csv", ev.out_csv);
  evaluate->callback([&] {
    const Schema schema = load_schema(ev.schema);
    const extraction::Lexicon lexicon = extraction::load_lexicon(ev.lexicon, schema);
    const auto extractor = make_extractor(schema, lexicon);
    const auto synth_records = load_jsonl(ev.synthetic, &schema);
    const auto reference = load_jsonl(ev.reference, &schema);

    std::vector<FeatureRecord> ref_features;
    for (const auto& rec : reference) {
      if (rec.features) ref_features.push_back(*rec.features);
    }
    std::vector<FeatureRecord> synth_inputs, synth_extracted;
    std::vector<eval::GeneratedPair> gen_pairs;
    for (const auto& rec : synth_records) {
      if (!rec.features) continue;
      synth_inputs.push_back(*rec.features);
      gen_pairs.push_back({*rec.features, rec});
      if (const auto f = extractor(rec)) synth_extracted.push_back(*f);
    }

    eval::MetricReport report;
    report.scalars["d_js_f"] =
        eval::attribute_jsd(schema, ref_features, synth_extracted).mean;
    report.scalars["d_js_f1"] =
        eval::attribute_jsd(schema, ref_features, synth_inputs).mean;
    report.scalars["d_js_f2"] =
        eval::attribute_jsd(schema, synth_inputs, synth_extracted).mean;
    report.scalars["ifacc"] = eval::dataset_ifacc(gen_pairs, extractor, schema).mean;
    eval::HashedBowEmbedder embedder;
    eval::MauveOptions mauve;
    mauve.cluster_count = ev.clusters;
    mauve.scaling = ev.scaling;
    mauve.seed = ev.seed;
    report.scalars["mauve_lite"] =
        eval::mauve_lite(reference, synth_records, embedder, mauve);
    const auto ref_len = eval::length_stats(reference, 0.0);
    const auto len = eval::length_stats(synth_records, ref_len.median);
    report.scalars["median_length"] = len.median;
    report.scalars["length_collapse_fraction"] = len.collapse_fraction;
    report.metadata["seed"] = std::to_string(ev.seed);
    eval::save_metric_report(ev.out_json, ev.out_csv, report);
    std::cout << eval::metric_report_json(report) << "\n";
  });

  // ---- run ----
  auto* run = app.add_subcommand("run", "full pipeline from a config file");
  struct {
    std::string config;
    std::string out;
    std::int64_t seed = -1;
  } r;
  run->add_option("--config", r.config)->required();
  run->add_option("--out", r.out, "override output directory");
  run->add_option("--seed", r.seed, "override master seed");
  int exit_code = 0;
  run->callback([&] {
    pipeline::RunConfig cfg = pipeline::load_run_config(r.config);
    if (!r.out.empty()) cfg.out_dir = r.out;
    if (r.seed >= 0) cfg.seed = static_cast<std::uint64_t>(r.seed);
    const pipeline::RunArtifacts art = pipeline::run_actg_arl(cfg);
    std::cout << "run complete: " << art.run_dir << "\n"
              << "  ledger: eps " << art.spend.account().epsilon << " delta "
              << art.spend.delta << (art.spend.no_noise ? " (no-noise sentinel)" : "")
              << "\n";
    if (art.metrics) {
      std::cout << "  metrics: " << art.metrics_json_path << "\n";
    }
    if (!art.budget_respected) exit_code = 1;
  });

  // ---- ablation ----
  auto* ablation = app.add_subcommand("ablation", "variant comparison over one config");
  struct {
    std::string config;
    std::string variants = "actg,actg-rl,actg-arl";
    std::string out;
  } ab;
  ablation->add_option("--config", ab.config)->required();
  ablation->add_option("--variants", ab.variants, "comma-separated variant list");
  ablation->add_option("--out", ab.out, "override output directory");
  ablation->callback([&] {
    pipeline::RunConfig cfg = pipeline::load_run_config(ab.config);
    if (!ab.out.empty()) cfg.out_dir = ab.out;
    std::vector<std::string> variants;
    std::stringstream ss(ab.variants);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(item);
    const auto rows = pipeline::run_ablation(cfg, variants);
    std::cout << pipeline::ablation_csv(rows);
  });

  // ---- accountant ----
  auto* acc = app.add_subcommand("accountant", "privacy accounting tools");
  acc->require_subcommand(1);

  auto* acc_compose = acc->add_subcommand("compose", "compose mechanism curves");
  MechanismFlags compose_flags;
  add_mechanism_flags(acc_compose, compose_flags);
  std::string compose_out;
  acc_compose->add_option("--out", compose_out, "write curve JSON here");
  acc_compose->callback([&] {
    const auto specs = compose_flags.parse();
    const accountant::RdpCurve curve = accountant::compose(specs);
    const auto& grid = accountant::alpha_grid();
    if (!compose_out.empty()) {
      std::ofstream out(compose_out);
      out << "{\"alpha\":[";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        out << (i ? "," : "") << grid[i];
      }
      out << "],\"eps\":[";
      for (std::size_t i = 0; i < curve.eps.size(); ++i) {
        out << (i ? "," : "") << curve.eps[i];
      }
      out << "]}\n";
    }
    for (const double a : {2.0, 8.0, 32.0, 128.0}) {
      const auto it = std::find(grid.begin(), grid.end(), a);
      std::cout << "alpha " << a << " -> eps "
                << curve.eps[static_cast<std::size_t>(it - grid.begin())] << "\n";
    }
  });

  auto* acc_convert = acc->add_subcommand("convert", "RDP curve to (eps, delta)");
  MechanismFlags convert_flags;
  add_mechanism_flags(acc_convert, convert_flags);
  double convert_delta = 1e-5;
  acc_convert->add_option("--delta", convert_delta)->required();
  acc_convert->callback([&] {
    const auto res =
        accountant::rdp_to_dp(accountant::compose(convert_flags.parse()), convert_delta);
    std::cout << "eps " << res.epsilon << " at delta " << convert_delta
              << " (alpha " << res.best_alpha << ")\n";
  });

  auto* acc_cal = acc->add_subcommand("calibrate", "noise multiplier for a target");
  struct {
    std::string target_eps = "1.0";
    double delta = 1e-5, q = 0.01;
    std::int64_t steps = 1;
  } cal;
  acc_cal->add_option("--target-eps", cal.target_eps)->required();
  acc_cal->add_option("--delta", cal.delta)->required();
  acc_cal->add_option("--q", cal.q)->required();
  acc_cal->add_option("--steps", cal.steps)->required();
  acc_cal->callback([&] {
    const double sigma =
        accountant::calibrate_sigma(parse_eps(cal.target_eps), cal.delta, cal.q, cal.steps);
    std::cout << "sigma " << sigma << "\n";
  });

  auto* acc_split = acc->add_subcommand("split", "two-stage budget split");
  struct {
    std::string total_eps = "4.0";
    double delta = 1e-5, ratio = 0.3, q = 0.01;
    std::int64_t steps = 1;
  } sp;
  acc_split->add_option("--total-eps", sp.total_eps)->required();
  acc_split->add_option("--delta", sp.delta)->required();
  acc_split->add_option("--ratio", sp.ratio, "stage-1 share");
  acc_split->add_option("--q", sp.q)->required();
  acc_split->add_option("--steps", sp.steps)->required();
  acc_split->callback([&] {
    const accountant::BudgetSplit split = accountant::split_budget(
        parse_eps(sp.total_eps), sp.delta, sp.ratio, sp.q, sp.steps);
    std::cout << "rho_stage1 " << split.rho_stage1 << " (eps " << split.eps_stage1
              << ")\nsigma_stage2 " << split.sigma_stage2 << " (eps " << split.eps_stage2
              << ")\ncomposed eps " << split.eps_composed << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
