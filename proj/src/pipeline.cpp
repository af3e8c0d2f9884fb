#include "actg/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "actg/desk_world.hpp"
#include "actg/dp_sgd.hpp"
#include "actg/extraction.hpp"
#include "actg/feature_synth.hpp"
#include "json.hpp"

namespace actg::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double json_eps(const json& v) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf" || s == "infinity") return kInf;
    throw std::invalid_argument("config: epsilon string must be \"inf\"");
  }
  return v.get<double>();
}

template <class T>
void maybe(const json& section, const char* key, T& out) {
  if (section.contains(key)) out = section.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json doc = json::parse(json_text);
  RunConfig cfg;
  if (doc.contains("data")) {
    const auto& d = doc["data"];
    maybe(d, "private_text", cfg.private_text_path);
    maybe(d, "schema", cfg.schema_path);
    maybe(d, "lexicon", cfg.lexicon_path);
    maybe(d, "context_length", cfg.context_length);
  }
  if (doc.contains("oracle")) {
    const auto& o = doc["oracle"];
    maybe(o, "host", cfg.oracle_host);
    maybe(o, "port", cfg.oracle_port);
    maybe(o, "path", cfg.oracle_path);
    maybe(o, "timeout_ms", cfg.oracle_timeout_ms);
    maybe(o, "retries", cfg.oracle_retries);
    maybe(o, "parallelism", cfg.oracle_parallelism);
  }
  if (doc.contains("privacy")) {
    const auto& p = doc["privacy"];
    if (p.contains("epsilon")) cfg.epsilon = json_eps(p["epsilon"]);
    maybe(p, "delta", cfg.delta);
    maybe(p, "split_ratio", cfg.split_ratio);
  }
  if (doc.contains("stage1")) {
    const auto& s = doc["stage1"];
    maybe(s, "method", cfg.stage1_method);
    maybe(s, "rounds", cfg.aim_rounds);
    maybe(s, "max_joint_cells", cfg.max_joint_cells);
  }
  if (doc.contains("dpft")) {
    const auto& s = doc["dpft"];
    maybe(s, "clip", cfg.clip);
    maybe(s, "sample_rate", cfg.sample_rate);
    maybe(s, "steps", cfg.steps);
    maybe(s, "learning_rate", cfg.learning_rate);
  }
  if (doc.contains("decoding")) {
    const auto& s = doc["decoding"];
    maybe(s, "temperature", cfg.decoding.temperature);
    maybe(s, "top_p", cfg.decoding.top_p);
    maybe(s, "top_k", cfg.decoding.top_k);
    maybe(s, "max_tokens", cfg.decoding.max_tokens);
  }
  if (doc.contains("bestofn")) {
    const auto& s = doc["bestofn"];
    maybe(s, "n", cfg.bestofn_n);
    maybe(s, "prompts", cfg.bestofn_prompts);
  }
  if (doc.contains("arl")) {
    const auto& s = doc["arl"];
    maybe(s, "buffer", cfg.arl.buffer_size);
    maybe(s, "epochs", cfg.arl.epochs);
    maybe(s, "learning_rate", cfg.arl.learning_rate);
    maybe(s, "kl", cfg.arl.kl_coef);
    maybe(s, "clip", cfg.arl.ratio_clip);
    maybe(s, "gamma_start", cfg.arl.gamma_start);
    maybe(s, "gamma_end", cfg.arl.gamma_end);
    maybe(s, "rounds", cfg.arl.rounds);
    maybe(s, "anchor_minibatch", cfg.arl.anchor_minibatch);
  }
  if (doc.contains("generation")) {
    maybe(doc["generation"], "n_syn", cfg.n_syn);
  }
  if (doc.contains("eval")) {
    const auto& s = doc["eval"];
    maybe(s, "enabled", cfg.eval_enabled);
    maybe(s, "clusters", cfg.eval_clusters);
    maybe(s, "mauve_scaling", cfg.mauve_scaling);
  }
  maybe(doc, "seed", cfg.seed);
  maybe(doc, "out", cfg.out_dir);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_json(const RunConfig& c) {
  json doc;
  doc["data"] = {{"private_text", c.private_text_path},
                 {"schema", c.schema_path},
                 {"lexicon", c.lexicon_path},
                 {"context_length", c.context_length}};
  doc["oracle"] = {{"host", c.oracle_host},           {"port", c.oracle_port},
                   {"path", c.oracle_path},           {"timeout_ms", c.oracle_timeout_ms},
                   {"retries", c.oracle_retries},     {"parallelism", c.oracle_parallelism}};
  doc["privacy"] = {{"epsilon", std::isinf(c.epsilon) ? json("inf") : json(c.epsilon)},
                    {"delta", c.delta},
                    {"split_ratio", c.split_ratio}};
  doc["stage1"] = {{"method", c.stage1_method},
                   {"rounds", c.aim_rounds},
                   {"max_joint_cells", c.max_joint_cells}};
  doc["dpft"] = {{"clip", c.clip},
                 {"sample_rate", c.sample_rate},
                 {"steps", c.steps},
                 {"learning_rate", c.learning_rate}};
  doc["decoding"] = {{"temperature", c.decoding.temperature},
                     {"top_p", c.decoding.top_p},
                     {"top_k", c.decoding.top_k},
                     {"max_tokens", c.decoding.max_tokens}};
  doc["bestofn"] = {{"n", c.bestofn_n}, {"prompts", c.bestofn_prompts}};
  doc["arl"] = {{"buffer", c.arl.buffer_size},
                {"epochs", c.arl.epochs},
                {"learning_rate", c.arl.learning_rate},
                {"kl", c.arl.kl_coef},
                {"clip", c.arl.ratio_clip},
                {"gamma_start", c.arl.gamma_start},
                {"gamma_end", c.arl.gamma_end},
                {"rounds", c.arl.rounds},
                {"anchor_minibatch", c.arl.anchor_minibatch}};
  doc["generation"] = {{"n_syn", c.n_syn}};
  doc["eval"] = {{"enabled", c.eval_enabled},
                 {"clusters", c.eval_clusters},
                 {"mauve_scaling", c.mauve_scaling}};
  doc["seed"] = c.seed;
  doc["out"] = c.out_dir;
  return doc.dump(2);
}

std::uint64_t config_hash(const RunConfig& config) {
  // The output directory is where results land, not what they are.
  RunConfig semantic = config;
  semantic.out_dir.clear();
  return fnv1a64(run_config_json(semantic));
}

namespace {

// Exclusive run-directory lock; a stale lock means another process owns the
// directory (or a crash left it behind; remove it by hand).
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / "run.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw std::runtime_error("run directory is locked: " + path_.string());
    }
    ::close(fd);
  }
  ~RunLock() { ::unlink(path_.c_str()); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Manifest {
  std::uint64_t config_hash = 0;
  json stages = json::object();

  static Manifest load(const fs::path& path) {
    Manifest m;
    std::ifstream in(path);
    if (!in) return m;
    json doc;
    in >> doc;
    m.config_hash = doc.value("config_hash", std::uint64_t{0});
    m.stages = doc.value("stages", json::object());
    return m;
  }
  void save(const fs::path& path) const {
    std::ofstream out(path);
    out << json{{"config_hash", config_hash}, {"stages", stages}}.dump(2) << "\n";
  }
  bool done(const std::string& stage) const {
    return stages.contains(stage) && stages[stage].get<bool>();
  }
};

// Stage-1 generator behind one sampler interface.
struct Stage1Model {
  std::shared_ptr<synth::MarginalModel> aim;
  std::shared_ptr<synth::HistogramModel> histogram;

  arl::FeatureSampler sampler() const {
    if (aim) {
      auto model = aim;
      return [model](std::size_t n, std::uint64_t seed) {
        return synth::aim_sample(*model, n, seed);
      };
    }
    auto model = histogram;
    return [model](std::size_t n, std::uint64_t seed) {
      return synth::histogram_model_sample(*model, n, seed);
    };
  }
};

struct Context {
  RunConfig cfg;
  fs::path dir;
  fs::path artifacts;
  fs::path metrics_dir;
  Manifest manifest;
  std::uint64_t master_seed = 0;

  std::optional<Schema> schema;
  std::optional<extraction::Lexicon> lexicon;

  // Firewall: flips to false once the ledger is finalized; the private
  // corpus is only reachable through this gate.
  bool private_access_allowed = true;

  std::vector<TextRecord> load_private_corpus() const {
    if (!private_access_allowed) {
      throw std::logic_error(
          "privacy firewall: attempt to open the private dataset after stage 2");
    }
    return load_jsonl(cfg.private_text_path, &*schema, cfg.context_length);
  }

  eval::FeatureExtractor extractor() const {
    if (!cfg.oracle_host.empty()) {
      auto oracle = std::make_shared<extraction::HttpOracle>(
          cfg.oracle_host, cfg.oracle_port, cfg.oracle_path, cfg.oracle_timeout_ms);
      const Schema* s = &*schema;
      return [oracle, s](const TextRecord& t) { return oracle->extract(t, *s); };
    }
    const extraction::Lexicon* lex = &*lexicon;
    const Schema* s = &*schema;
    return [lex, s](const TextRecord& t) {
      return std::optional<FeatureRecord>(extraction::rule_extract(t, *s, *lex));
    };
  }

  std::uint64_t stage_seed(std::string_view stage) const {
    return derive_seed(master_seed, stage);
  }
};

void write_failure_manifest(const fs::path& dir, const std::string& stage,
                            const std::string& error) {
  std::ofstream out(dir / "failure.json");
  out << json{{"stage", stage}, {"error", error}}.dump(2) << "\n";
}

std::vector<FeatureRecord> features_of(std::span<const TextRecord> records) {
  std::vector<FeatureRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.features) throw std::runtime_error("record without features");
    out.push_back(*r.features);
  }
  return out;
}

void save_feature_jsonl(const fs::path& path, std::span<const FeatureRecord> features,
                        const Schema& schema) {
  std::vector<TextRecord> records(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    records[i].features = features[i];
  }
  save_jsonl(path.string(), records, &schema);
}

// --- stage implementations -------------------------------------------------

std::size_t stage_annotate(Context& ctx, RunArtifacts& art) {
  if (ctx.manifest.done("annotate") && fs::exists(art.pairs_path)) {
    return load_jsonl(art.pairs_path, &*ctx.schema, ctx.cfg.context_length).size();
  }
  const std::vector<TextRecord> corpus = ctx.load_private_corpus();

  extraction::AnnotateOptions opts;
  opts.max_retries = ctx.cfg.oracle_retries;
  opts.parallelism = ctx.cfg.oracle_parallelism;

  extraction::AnnotatedDataset annotated;
  if (!ctx.cfg.oracle_host.empty()) {
    extraction::HttpOracle oracle(ctx.cfg.oracle_host, ctx.cfg.oracle_port,
                                  ctx.cfg.oracle_path, ctx.cfg.oracle_timeout_ms);
    annotated = extraction::annotate_dataset(oracle, corpus, *ctx.schema, opts);
  } else {
    extraction::RuleOracle oracle(*ctx.schema, *ctx.lexicon);
    annotated = extraction::annotate_dataset(oracle, corpus, *ctx.schema, opts);
  }
  art.annotation_failures = annotated.failures.size();
  save_jsonl(art.pairs_path, annotated.pairs, &*ctx.schema);

  ctx.manifest.stages["annotate"] = true;
  ctx.manifest.save(ctx.dir / "manifest.json");
  return annotated.pairs.size();
}

struct TrainedStage2 {
  Stage1Model stage1;
  std::shared_ptr<gen::TokenPolicy> dpft;
};

TrainedStage2 stage_train(Context& ctx, RunArtifacts& art) {
  TrainedStage2 out;
  const bool resumable = ctx.manifest.done("train") &&
                         fs::exists(art.feature_model_path) &&
                         fs::exists(art.policy_dpft_path) && fs::exists(art.ledger_path);
  if (resumable) {
    if (ctx.cfg.stage1_method == "aim") {
      out.stage1.aim = std::make_shared<synth::MarginalModel>(
          synth::MarginalModel::load(art.feature_model_path, *ctx.schema));
    } else {
      // Histogram models are refit cheaply; persisted joint state lives in
      // the AIM path only.
      throw std::runtime_error("resume with histogram stage 1 is not supported");
    }
    out.dpft = std::make_shared<gen::TokenPolicy>(
        gen::TokenPolicy::load(art.policy_dpft_path, *ctx.schema));
    std::ifstream in(art.ledger_path);
    json doc;
    in >> doc;
    art.spend.delta = doc.at("delta").get<double>();
    art.spend.no_noise = doc.at("no_noise").get<bool>();
    for (const auto& m : doc.at("mechanisms")) {
      const std::string kind = m.at("kind").get<std::string>();
      if (kind == "zcdp") {
        art.spend.ledger.push_back(accountant::zcdp_mechanism(
            m.at("rho").get<double>(), m.at("steps").get<std::int64_t>()));
      } else if (kind == "subsampled_gaussian") {
        art.spend.ledger.push_back(accountant::subsampled_gaussian_mechanism(
            m.at("sigma").get<double>(), m.at("q").get<double>(),
            m.at("steps").get<std::int64_t>()));
      } else if (kind == "none") {
        art.spend.ledger.push_back(accountant::no_noise_mechanism());
        art.spend.no_noise = true;
      }
    }
    art.spend.epsilon = doc.at("epsilon").get<double>();
    return out;
  }

  const std::vector<TextRecord> pairs =
      load_jsonl(art.pairs_path, &*ctx.schema, ctx.cfg.context_length);
  if (pairs.empty()) throw std::runtime_error("no annotated pairs to train on");
  const std::vector<FeatureRecord> features = features_of(pairs);
  const std::size_t n = pairs.size();

  const double delta =
      ctx.cfg.delta > 0.0 ? ctx.cfg.delta : accountant::delta_rule(static_cast<double>(n));
  art.spend.delta = delta;

  double rho = kInf;
  double sigma = 0.0;
  if (!std::isinf(ctx.cfg.epsilon)) {
    const accountant::BudgetSplit split =
        accountant::split_budget(ctx.cfg.epsilon, delta, ctx.cfg.split_ratio,
                                 ctx.cfg.sample_rate, ctx.cfg.steps);
    rho = split.rho_stage1;
    sigma = split.sigma_stage2;
  }

  // Stage 1: DP feature generator.
  const std::uint64_t s1_seed = ctx.stage_seed("stage1");
  if (ctx.cfg.stage1_method == "aim") {
    synth::AimOptions opts;
    opts.rounds = ctx.cfg.aim_rounds;
    opts.max_joint_cells = ctx.cfg.max_joint_cells;
    out.stage1.aim = std::make_shared<synth::MarginalModel>(
        synth::aim_fit(features, *ctx.schema, rho, s1_seed, opts));
    out.stage1.aim->save(art.feature_model_path);
  } else if (ctx.cfg.stage1_method == "histogram") {
    out.stage1.histogram = std::make_shared<synth::HistogramModel>(
        synth::histogram_fit_budget(features, *ctx.schema, rho, s1_seed));
    std::ofstream model_out(art.feature_model_path);
    model_out << json{{"method", "histogram"}, {"rho", std::isinf(rho) ? -1.0 : rho}}.dump()
              << "\n";
  } else {
    throw std::invalid_argument("unknown stage1 method: " + ctx.cfg.stage1_method);
  }
  if (std::isinf(rho)) {
    art.spend.charge(accountant::no_noise_mechanism("stage1-" + ctx.cfg.stage1_method));
  } else {
    art.spend.charge(accountant::zcdp_mechanism(rho, 1, "stage1-" + ctx.cfg.stage1_method));
  }

  // Stage 2: DP-FT conditional generator.
  std::vector<std::string> corpus_tokens;
  for (const auto& rec : pairs) {
    corpus_tokens.insert(corpus_tokens.end(), rec.tokens.begin(), rec.tokens.end());
  }
  const gen::Vocab vocab = gen::Vocab::build(corpus_tokens);
  const std::vector<gen::Example> examples = gen::make_examples(pairs, vocab);

  gen::DpSgdConfig dp;
  dp.clip = ctx.cfg.clip;
  dp.sigma = sigma;
  dp.sample_rate = ctx.cfg.sample_rate;
  dp.steps = ctx.cfg.steps;
  dp.learning_rate = ctx.cfg.learning_rate;
  dp.seed = ctx.stage_seed("dpft");

  gen::DpftResult trained = gen::train_dpft(examples, *ctx.schema, vocab, dp, delta);
  out.dpft = std::make_shared<gen::TokenPolicy>(std::move(trained.policy));
  out.dpft->save(art.policy_dpft_path);
  art.spend.ledger.insert(art.spend.ledger.end(), trained.spend.ledger.begin(),
                          trained.spend.ledger.end());
  if (trained.spend.no_noise) art.spend.no_noise = true;
  art.spend.epsilon = art.spend.account().epsilon;

  accountant::save_ledger(art.ledger_path, art.spend);

  ctx.manifest.stages["train"] = true;
  ctx.manifest.save(ctx.dir / "manifest.json");
  return out;
}

arl::AnchorDataset stage_anchor(Context& ctx, RunArtifacts& art, const Stage1Model& stage1,
                                const gen::TokenPolicy& dpft) {
  const auto load_anchor = [&]() {
    arl::AnchorDataset anchor;
    anchor.n = ctx.cfg.bestofn_n;
    const std::vector<TextRecord> records =
        load_jsonl(art.anchor_path, &*ctx.schema, ctx.cfg.context_length);
    for (const auto& rec : records) {
      arl::AnchorEntry entry;
      entry.feature = *rec.features;
      entry.tokens = dpft.vocab().encode(rec.tokens);
      entry.tokens.push_back(dpft.vocab().eos());
      anchor.entries.push_back(std::move(entry));
    }
    return anchor;
  };
  if (ctx.manifest.done("anchor") && fs::exists(art.anchor_path)) return load_anchor();

  const std::size_t ledger_before = art.spend.ledger.size();
  arl::AnchorDataset anchor = arl::build_anchor_dataset(
      stage1.sampler(), dpft, ctx.extractor(), ctx.cfg.bestofn_n, ctx.cfg.bestofn_prompts,
      ctx.cfg.decoding, ctx.stage_seed("anchor"));
  if (art.spend.ledger.size() != ledger_before) {
    throw std::logic_error("anchor curation must not touch the privacy ledger");
  }

  std::vector<TextRecord> records;
  records.reserve(anchor.entries.size());
  for (const auto& entry : anchor.entries) {
    TextRecord rec = make_text_record(dpft.vocab().decode(entry.tokens));
    rec.features = entry.feature;
    records.push_back(std::move(rec));
  }
  save_jsonl(art.anchor_path, records, &*ctx.schema);
  ctx.manifest.stages["anchor"] = true;
  ctx.manifest.save(ctx.dir / "manifest.json");
  return anchor;
}

std::shared_ptr<gen::TokenPolicy> stage_arl(Context& ctx, RunArtifacts& art,
                                            const Stage1Model& stage1,
                                            const gen::TokenPolicy& dpft,
                                            const arl::AnchorDataset& anchor) {
  if (ctx.manifest.done("arl") && fs::exists(art.policy_arl_path)) {
    return std::make_shared<gen::TokenPolicy>(
        gen::TokenPolicy::load(art.policy_arl_path, *ctx.schema));
  }

  // Reference median length for the collapse diagnostic, from the pre-RL
  // generator itself.
  arl::ArlConfig arl_cfg = ctx.cfg.arl;
  arl_cfg.seed = ctx.stage_seed("arl");
  {
    const std::vector<FeatureRecord> probe =
        stage1.sampler()(256, ctx.stage_seed("refmedian-features"));
    const std::vector<TextRecord> texts = gen::sample_batch(
        dpft, probe, ctx.cfg.decoding, ctx.stage_seed("refmedian-texts"));
    arl_cfg.reference_median = eval::length_stats(texts, 0.0).median;
  }

  const std::size_t ledger_before = art.spend.ledger.size();
  std::vector<arl::RoundLog> log;
  gen::TokenPolicy trained = arl::arl_train(dpft, stage1.sampler(), anchor,
                                            ctx.extractor(), ctx.cfg.decoding, arl_cfg, &log);
  if (art.spend.ledger.size() != ledger_before) {
    throw std::logic_error("anchored RL must not touch the privacy ledger");
  }
  {
    std::ofstream out(art.arl_log_path);
    out << arl::round_log_csv(log);
  }
  auto policy = std::make_shared<gen::TokenPolicy>(std::move(trained));
  policy->save(art.policy_arl_path);
  ctx.manifest.stages["arl"] = true;
  ctx.manifest.save(ctx.dir / "manifest.json");
  return policy;
}

void stage_generate(Context& ctx, RunArtifacts& art, const Stage1Model& stage1,
                    const gen::TokenPolicy& policy) {
  if (ctx.manifest.done("generate") && fs::exists(art.synth_texts_path)) return;

  const std::vector<FeatureRecord> synth_features =
      stage1.sampler()(ctx.cfg.n_syn, ctx.stage_seed("generate-features"));
  save_feature_jsonl(art.synth_features_path, synth_features, *ctx.schema);

  const std::vector<TextRecord> texts = gen::sample_batch(
      policy, synth_features, ctx.cfg.decoding, ctx.stage_seed("generate-texts"));
  std::vector<TextRecord> annotated(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    annotated[i] = texts[i];
    annotated[i].features = synth_features[i];
  }
  save_jsonl(art.synth_texts_path, annotated, &*ctx.schema);

  ctx.manifest.stages["generate"] = true;
  ctx.manifest.save(ctx.dir / "manifest.json");
}

eval::MetricReport evaluate_corpus(const Context& ctx, const RunArtifacts& art,
                                   std::span<const TextRecord> synth_records) {
  const Schema& schema = *ctx.schema;
  const eval::FeatureExtractor extractor = ctx.extractor();

  // Stage-0 artifact: annotated private pairs (texts + extracted features).
  const std::vector<TextRecord> pairs =
      load_jsonl(art.pairs_path, &schema, ctx.cfg.context_length);
  const std::vector<FeatureRecord> priv_features = features_of(pairs);

  std::vector<FeatureRecord> synth_input_features;
  std::vector<eval::GeneratedPair> gen_pairs;
  std::vector<FeatureRecord> synth_text_features;
  synth_input_features.reserve(synth_records.size());
  gen_pairs.reserve(synth_records.size());
  for (const auto& rec : synth_records) {
    synth_input_features.push_back(*rec.features);
    gen_pairs.push_back({*rec.features, rec});
    const auto extracted = extractor(rec);
    if (extracted) synth_text_features.push_back(*extracted);
  }

  eval::MetricReport report;
  const eval::AttributeJsd d_end =
      eval::attribute_jsd(schema, priv_features, synth_text_features);
  const eval::AttributeJsd d_f1 =
      eval::attribute_jsd(schema, priv_features, synth_input_features);
  const eval::AttributeJsd d_f2 =
      eval::attribute_jsd(schema, synth_input_features, synth_text_features);
  report.scalars["d_js_f"] = d_end.mean;
  report.scalars["d_js_f1"] = d_f1.mean;
  report.scalars["d_js_f2"] = d_f2.mean;
  report.per_attribute["d_js_f"] = d_end.per_attribute;
  report.per_attribute["d_js_f1"] = d_f1.per_attribute;
  report.per_attribute["d_js_f2"] = d_f2.per_attribute;

  const eval::IfaccReport ifacc = eval::dataset_ifacc(gen_pairs, extractor, schema);
  report.scalars["ifacc"] = ifacc.mean;
  report.per_attribute["ifacc_match"] = ifacc.per_attribute_match;

  eval::HashedBowEmbedder embedder;
  eval::MauveOptions mauve;
  mauve.cluster_count = ctx.cfg.eval_clusters;
  mauve.scaling = ctx.cfg.mauve_scaling;
  mauve.seed = ctx.stage_seed("eval-mauve");
  std::vector<TextRecord> synth_texts(synth_records.begin(), synth_records.end());
  report.scalars["mauve_lite"] = eval::mauve_lite(pairs, synth_texts, embedder, mauve);
  report.metadata["mauve_clusters"] = std::to_string(
      mauve.cluster_count == 0 ? eval::default_cluster_count(synth_texts.size())
                               : mauve.cluster_count);

  const eval::LengthStats priv_len = eval::length_stats(pairs, 0.0);
  const eval::LengthStats synth_len = eval::length_stats(synth_texts, priv_len.median);
  report.scalars["private_median_length"] = priv_len.median;
  report.scalars["median_length"] = synth_len.median;
  report.scalars["mean_length"] = synth_len.mean;
  report.scalars["length_collapse_fraction"] = synth_len.collapse_fraction;

  report.metadata["seed"] = std::to_string(ctx.cfg.seed);
  report.metadata["config_hash"] = std::to_string(config_hash(ctx.cfg));
  report.metadata["n_synthetic"] = std::to_string(synth_texts.size());
  return report;
}

Context make_context(const RunConfig& config) {
  Context ctx;
  ctx.cfg = config;
  ctx.dir = fs::path(config.out_dir);
  ctx.artifacts = ctx.dir / "artifacts";
  ctx.metrics_dir = ctx.dir / "metrics";
  fs::create_directories(ctx.artifacts);
  fs::create_directories(ctx.metrics_dir);
  ctx.master_seed = config.seed;
  ctx.schema = load_schema(config.schema_path);
  if (!config.lexicon_path.empty()) {
    ctx.lexicon = extraction::load_lexicon(config.lexicon_path, *ctx.schema);
  } else if (config.oracle_host.empty()) {
    throw std::invalid_argument("config: need either a lexicon or an oracle endpoint");
  }

  const Manifest loaded = Manifest::load(ctx.dir / "manifest.json");
  ctx.manifest.config_hash = config_hash(config);
  if (loaded.config_hash == ctx.manifest.config_hash) {
    ctx.manifest.stages = loaded.stages;  // resume
  }
  return ctx;
}

RunArtifacts make_artifact_paths(const Context& ctx) {
  RunArtifacts art;
  art.run_dir = ctx.dir.string();
  art.pairs_path = (ctx.artifacts / "pairs.jsonl").string();
  art.feature_model_path = (ctx.artifacts / "feature_model.json").string();
  art.policy_dpft_path = (ctx.artifacts / "policy_dpft.json").string();
  art.policy_arl_path = (ctx.artifacts / "policy_arl.json").string();
  art.anchor_path = (ctx.artifacts / "anchor.jsonl").string();
  art.synth_features_path = (ctx.artifacts / "synth_features.jsonl").string();
  art.synth_texts_path = (ctx.artifacts / "synth_texts.jsonl").string();
  art.ledger_path = (ctx.dir / "ledger.json").string();
  art.arl_log_path = (ctx.metrics_dir / "arl_training.csv").string();
  art.metrics_json_path = (ctx.metrics_dir / "report.json").string();
  art.metrics_csv_path = (ctx.metrics_dir / "report.csv").string();
  return art;
}

}  // namespace

RunArtifacts run_actg_arl(const RunConfig& config,
                          const std::function<void()>& after_stage2_hook) {
  Context ctx = make_context(config);
  RunLock lock(ctx.dir);
  {
    std::ofstream out(ctx.dir / "config.json");
    out << run_config_json(config) << "\n";
  }
  RunArtifacts art = make_artifact_paths(ctx);

  std::string stage = "annotate";
  try {
    stage_annotate(ctx, art);

    stage = "train";
    TrainedStage2 trained = stage_train(ctx, art);

    // Ledger is final; everything below runs behind the firewall.
    ctx.private_access_allowed = false;
    if (!std::isinf(config.epsilon) &&
        art.spend.account().epsilon > config.epsilon * (1.0 + 1e-9)) {
      art.budget_respected = false;
      throw std::runtime_error("composed privacy spend exceeds the configured budget");
    }
    if (after_stage2_hook) after_stage2_hook();

    stage = "anchor";
    const arl::AnchorDataset anchor =
        stage_anchor(ctx, art, trained.stage1, *trained.dpft);

    stage = "arl";
    const std::shared_ptr<gen::TokenPolicy> final_policy =
        stage_arl(ctx, art, trained.stage1, *trained.dpft, anchor);

    stage = "generate";
    stage_generate(ctx, art, trained.stage1, *final_policy);

    if (config.eval_enabled) {
      stage = "evaluate";
      const std::vector<TextRecord> synth =
          load_jsonl(art.synth_texts_path, &*ctx.schema, config.context_length);
      art.metrics = evaluate_corpus(ctx, art, synth);
      eval::save_metric_report(art.metrics_json_path, art.metrics_csv_path, *art.metrics);
    }
  } catch (const std::exception& e) {
    write_failure_manifest(ctx.dir, stage, e.what());
    throw;
  }
  return art;
}

std::vector<AblationRow> run_ablation(const RunConfig& config,
                                      std::span<const std::string> variants) {
  if (config.stage1_method != "aim") {
    throw std::invalid_argument("run_ablation: base config must use the aim stage 1");
  }
  // Shared upstream artifacts come from the standard run over the base
  // config; each variant then reuses them.
  RunConfig base = config;
  base.eval_enabled = false;
  RunArtifacts art = run_actg_arl(base);

  Context ctx = make_context(base);
  ctx.private_access_allowed = false;
  const Schema& schema = *ctx.schema;

  TrainedStage2 trained;
  if (config.stage1_method == "aim") {
    trained.stage1.aim = std::make_shared<synth::MarginalModel>(
        synth::MarginalModel::load(art.feature_model_path, schema));
  }
  trained.dpft = std::make_shared<gen::TokenPolicy>(
      gen::TokenPolicy::load(art.policy_dpft_path, schema));
  const arl::AnchorDataset anchor = stage_anchor(ctx, art, trained.stage1, *trained.dpft);

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    Stage1Model stage1 = trained.stage1;
    std::shared_ptr<gen::TokenPolicy> policy;

    if (variant == "actg") {
      policy = trained.dpft;
    } else if (variant == "actg-rl" || variant == "actg-arl") {
      arl::ArlConfig arl_cfg = config.arl;
      arl_cfg.seed = ctx.stage_seed("arl");
      if (variant == "actg-rl") {
        arl_cfg.gamma_start = 0.0;
        arl_cfg.gamma_end = 0.0;
      }
      {
        const std::vector<FeatureRecord> probe =
            stage1.sampler()(256, ctx.stage_seed("refmedian-features"));
        const std::vector<TextRecord> texts = gen::sample_batch(
            *trained.dpft, probe, config.decoding, ctx.stage_seed("refmedian-texts"));
        arl_cfg.reference_median = eval::length_stats(texts, 0.0).median;
      }
      std::vector<arl::RoundLog> log;
      policy = std::make_shared<gen::TokenPolicy>(
          arl::arl_train(*trained.dpft, stage1.sampler(), anchor, ctx.extractor(),
                         config.decoding, arl_cfg, &log));
      policy->save((ctx.artifacts / ("policy_" + variant + ".json")).string());
      std::ofstream out(ctx.metrics_dir / ("arl_training_" + variant + ".csv"));
      out << arl::round_log_csv(log);
    } else if (variant == "histogram-s1") {
      // Same budget, histogram feature generator; reuses the DP-FT policy.
      const std::vector<TextRecord> pairs =
          load_jsonl(art.pairs_path, &schema, config.context_length);
      const std::vector<FeatureRecord> features = features_of(pairs);
      double rho = kInf;
      if (!std::isinf(config.epsilon)) {
        const accountant::BudgetSplit split = accountant::split_budget(
            config.epsilon, art.spend.delta, config.split_ratio, config.sample_rate,
            config.steps);
        rho = split.rho_stage1;
      }
      stage1.aim.reset();
      stage1.histogram = std::make_shared<synth::HistogramModel>(
          synth::histogram_fit_budget(features, schema, rho, ctx.stage_seed("stage1")));
      policy = trained.dpft;
    } else {
      throw std::invalid_argument("unknown ablation variant: " + variant);
    }

    const std::vector<FeatureRecord> synth_features =
        stage1.sampler()(config.n_syn, ctx.stage_seed("generate-features"));
    const std::vector<TextRecord> texts = gen::sample_batch(
        *policy, synth_features, config.decoding, ctx.stage_seed("generate-texts"));
    std::vector<TextRecord> annotated(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      annotated[i] = texts[i];
      annotated[i].features = synth_features[i];
    }
    const fs::path variant_path = ctx.artifacts / ("synth_texts_" + variant + ".jsonl");
    save_jsonl(variant_path.string(), annotated, &schema);

    AblationRow row;
    row.variant = variant;
    row.report = evaluate_corpus(ctx, art, annotated);
    rows.push_back(std::move(row));
  }

  std::ofstream out(ctx.metrics_dir / "ablation.csv");
  out << ablation_csv(rows);
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  if (rows.empty()) return os.str();
  os << "variant," << eval::metric_report_csv_header(rows[0].report) << "\n";
  for (const auto& row : rows) {
    os << row.variant << ',' << eval::metric_report_csv_row(row.report) << "\n";
  }
  return os.str();
}

}  // namespace actg::pipeline
