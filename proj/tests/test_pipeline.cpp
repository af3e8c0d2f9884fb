#include <filesystem>
#include <fstream>
#include <sstream>

#include "actg/desk_world.hpp"
#include "actg/pipeline.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace actg;
using namespace actg::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config(const fs::path& dir, double epsilon) {
  // write toy inputs once per directory
  const Schema schema = toy::toy_schema();
  save_schema((dir / "schema.json").string(), schema);
  {
    std::ofstream lex(dir / "lexicon.json");
    lex << extraction::serialize_lexicon(toy::toy_lexicon(), schema);
  }
  toy::ToyConfig toy_cfg;
  toy_cfg.n = 600;
  toy_cfg.seed = 5;
  const auto corpus = toy::make_toy_corpus(toy_cfg);
  save_jsonl((dir / "corpus.jsonl").string(), corpus.texts, &schema);

  RunConfig cfg;
  cfg.private_text_path = (dir / "corpus.jsonl").string();
  cfg.schema_path = (dir / "schema.json").string();
  cfg.lexicon_path = (dir / "lexicon.json").string();
  cfg.epsilon = epsilon;
  cfg.split_ratio = 0.3;
  cfg.sample_rate = 0.2;
  cfg.steps = 40;
  cfg.learning_rate = 0.8;
  cfg.decoding.max_tokens = 40;
  cfg.bestofn_n = 4;
  cfg.bestofn_prompts = 32;
  cfg.arl.buffer_size = 24;
  cfg.arl.epochs = 2;
  cfg.arl.rounds = 2;
  cfg.arl.learning_rate = 0.02;
  cfg.arl.anchor_minibatch = 8;
  cfg.n_syn = 200;
  cfg.seed = 77;
  cfg.out_dir = (dir / "run").string();
  return cfg;
}

}  // namespace

TEST_CASE("run config json round trip") {
  TempDir tmp("actg_cfg_test");
  RunConfig cfg = small_config(tmp.path, 4.0);
  const RunConfig again = parse_run_config(run_config_json(cfg));
  CHECK(config_hash(again) == config_hash(cfg));
  CHECK(again.private_text_path == cfg.private_text_path);
  CHECK(again.arl.buffer_size == cfg.arl.buffer_size);

  SUBCASE("epsilon infinity spelled as a string") {
    cfg.epsilon = std::numeric_limits<double>::infinity();
    const RunConfig inf_cfg = parse_run_config(run_config_json(cfg));
    CHECK(std::isinf(inf_cfg.epsilon));
  }
}

TEST_CASE("end-to-end run respects the budget and produces every artifact") {
  TempDir tmp("actg_run_test");
  const RunConfig cfg = small_config(tmp.path, 4.0);
  const RunArtifacts art = run_actg_arl(cfg);

  CHECK(art.budget_respected);
  CHECK(art.spend.account().epsilon <= 4.0);
  CHECK(art.spend.ledger.size() == 2);
  CHECK(art.spend.ledger[0].kind == accountant::MechanismKind::zcdp);
  CHECK(art.spend.ledger[1].kind == accountant::MechanismKind::subsampled_gaussian);

  for (const std::string& path :
       {art.pairs_path, art.feature_model_path, art.policy_dpft_path,
        art.policy_arl_path, art.anchor_path, art.synth_features_path,
        art.synth_texts_path, art.ledger_path, art.arl_log_path,
        art.metrics_json_path, art.metrics_csv_path}) {
    CHECK(fs::exists(path));
  }
  REQUIRE(art.metrics.has_value());
  const auto& m = art.metrics->scalars;
  CHECK(m.at("d_js_f") <= m.at("d_js_f1") + m.at("d_js_f2") + 1e-12);  // triangle
  CHECK(m.at("ifacc") >= 0.0);
  CHECK(m.at("mauve_lite") >= 0.0);
  CHECK(m.at("mauve_lite") <= 1.0);

  SUBCASE("rerun with the same config and seed is byte-identical") {
    RunConfig cfg2 = cfg;
    cfg2.out_dir = (tmp.path / "run2").string();
    const RunArtifacts art2 = run_actg_arl(cfg2);
    CHECK(read_file(art.metrics_csv_path) == read_file(art2.metrics_csv_path));
    CHECK(read_file(art.synth_texts_path) == read_file(art2.synth_texts_path));
    CHECK(read_file(art.ledger_path) == read_file(art2.ledger_path));
  }
}

TEST_CASE("resuming from preserved artifacts matches the uninterrupted run") {
  TempDir tmp("actg_resume_test");
  const RunConfig cfg = small_config(tmp.path, 4.0);
  const RunArtifacts full = run_actg_arl(cfg);
  const std::string texts_once = read_file(full.synth_texts_path);

  // strip the manifest back to stage 2 and delete downstream artifacts
  {
    nlohmann::json manifest;
    {
      std::ifstream in(fs::path(cfg.out_dir) / "manifest.json");
      in >> manifest;
    }
    manifest["stages"] = {{"annotate", true}, {"train", true}};
    std::ofstream out(fs::path(cfg.out_dir) / "manifest.json");
    out << manifest.dump();
  }
  fs::remove(full.policy_arl_path);
  fs::remove(full.anchor_path);
  fs::remove(full.synth_texts_path);
  fs::remove(full.synth_features_path);

  const RunArtifacts resumed = run_actg_arl(cfg);
  CHECK(read_file(resumed.synth_texts_path) == texts_once);
}

TEST_CASE("epsilon infinity runs the sentinel path") {
  TempDir tmp("actg_inf_test");
  RunConfig cfg = small_config(tmp.path, std::numeric_limits<double>::infinity());
  cfg.eval_enabled = false;
  const RunArtifacts art = run_actg_arl(cfg);
  CHECK(art.spend.no_noise);
  const std::string ledger = read_file(art.ledger_path);
  CHECK(ledger.find("\"no_noise\": true") != std::string::npos);
}

TEST_CASE("privacy firewall: private file deleted after stage 2, run completes") {
  TempDir tmp("actg_firewall_test");
  RunConfig cfg = small_config(tmp.path, 4.0);
  bool hook_ran = false;
  const RunArtifacts art = run_actg_arl(cfg, [&] {
    fs::remove(cfg.private_text_path);
    hook_ran = true;
  });
  CHECK(hook_ran);
  CHECK_FALSE(fs::exists(cfg.private_text_path));
  CHECK(fs::exists(art.synth_texts_path));
  CHECK(art.metrics.has_value());  // evaluation feeds on run-dir artifacts only
}

TEST_CASE("ablation shares upstream artifacts and emits one row per variant") {
  TempDir tmp("actg_ablation_test");
  RunConfig cfg = small_config(tmp.path, 4.0);
  cfg.arl.rounds = 1;
  const std::vector<std::string> variants = {"actg"};
  const auto rows = run_ablation(cfg, variants);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].variant == "actg");
  CHECK(rows[0].report.scalars.count("ifacc") == 1);
  const std::string csv = ablation_csv(rows);
  CHECK(csv.find("variant,") == 0);
  CHECK(csv.find("actg,") != std::string::npos);
}

TEST_CASE("run lock forbids concurrent ownership") {
  TempDir tmp("actg_lock_test");
  RunConfig cfg = small_config(tmp.path, 4.0);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream lock(fs::path(cfg.out_dir) / "run.lock");
  }
  CHECK_THROWS_WITH_AS(run_actg_arl(cfg), doctest::Contains("locked"),
                       std::runtime_error);
}
