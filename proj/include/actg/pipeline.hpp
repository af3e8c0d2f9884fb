#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "actg/accountant.hpp"
#include "actg/control_arl.hpp"
#include "actg/eval.hpp"
#include "actg/policy.hpp"
#include "actg/schema.hpp"

namespace actg::pipeline {

struct RunConfig {
  // data
  std::string private_text_path;
  std::string schema_path;
  std::string lexicon_path;
  std::size_t context_length = kDefaultContextLength;

  // oracle; empty url means the lexicon-backed rule extractor
  std::string oracle_host;
  int oracle_port = 0;
  std::string oracle_path = "/extract";
  int oracle_timeout_ms = 10000;
  int oracle_retries = 3;
  int oracle_parallelism = 8;

  // privacy
  double epsilon = 4.0;  // infinity runs the no-noise sentinel path
  double delta = 0.0;    // 0 -> 1 / (n ln n)
  double split_ratio = 0.3;

  // stage 1
  std::string stage1_method = "aim";  // "aim" | "histogram"
  int aim_rounds = 0;
  std::size_t max_joint_cells = 5'000'000;

  // stage 2 (DP-FT)
  double clip = 1.0;
  double sample_rate = 0.08;
  std::int64_t steps = 250;
  double learning_rate = 0.5;

  gen::DecodingConfig decoding{1.0, 0.95, 0, 64};

  // best-of-N anchor
  int bestofn_n = 16;
  std::size_t bestofn_prompts = 512;

  // anchored RL (seed and reference median are filled by the pipeline)
  arl::ArlConfig arl;

  std::size_t n_syn = 5000;

  bool eval_enabled = true;
  std::size_t eval_clusters = 0;  // 0 -> n_syn / 10
  double mauve_scaling = 5.0;

  std::uint64_t seed = 1;
  std::string out_dir = "run";
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

struct RunArtifacts {
  std::string run_dir;
  std::string pairs_path;
  std::string feature_model_path;
  std::string policy_dpft_path;
  std::string policy_arl_path;
  std::string anchor_path;
  std::string synth_features_path;
  std::string synth_texts_path;
  std::string ledger_path;
  std::string arl_log_path;
  std::string metrics_json_path;
  std::string metrics_csv_path;
  accountant::PrivacySpend spend;
  std::size_t annotation_failures = 0;
  bool budget_respected = true;
  std::optional<eval::MetricReport> metrics;
};

// The five pipeline steps in order: annotate, train the two DP generators,
// curate the best-of-N anchor, Anchored RL, generate. The privacy ledger is
// finalized when step 2 completes and the private corpus is unreachable from
// then on; after_stage2_hook (used by tests) runs at that boundary.
RunArtifacts run_actg_arl(const RunConfig& config,
                          const std::function<void()>& after_stage2_hook = {});

struct AblationRow {
  std::string variant;
  eval::MetricReport report;
};

// Variants share the upstream artifacts (annotation, stage-1 and stage-2
// models, anchor); each row reports the variant's metrics. Known variants:
// actg, actg-rl, actg-arl, histogram-s1.
std::vector<AblationRow> run_ablation(const RunConfig& config,
                                      std::span<const std::string> variants);

std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace actg::pipeline
