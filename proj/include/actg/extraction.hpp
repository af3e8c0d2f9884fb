#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actg/schema.hpp"

namespace actg::extraction {

// Maps text to a schema-valid feature record, or signals an extraction
// failure. The extractor is a trusted pre-processing component: it sees the
// private text directly and consumes no privacy budget.
class OracleInterface {
 public:
  virtual ~OracleInterface() = default;
  virtual std::optional<FeatureRecord> extract(const TextRecord& text,
                                               const Schema& schema) const = 0;
  // Whether a failed call may be retried (transport errors yes, deterministic
  // extractors no).
  virtual bool retryable() const { return false; }
};

struct LexiconRule {
  std::string pattern;  // substring, or regex when prefixed with "re:"
  std::int32_t option = 0;
};

// Keyword rules per attribute, first match wins; no match falls back to the
// attribute's default option.
struct Lexicon {
  std::vector<std::vector<LexiconRule>> rules;  // indexed by attribute
  std::vector<std::int32_t> defaults;
};

Lexicon parse_lexicon(const std::string& json_text, const Schema& schema);
Lexicon load_lexicon(const std::string& path, const Schema& schema);
std::string serialize_lexicon(const Lexicon& lexicon, const Schema& schema);

// Pure function of (text, schema, lexicon). Rule order is priority order.
FeatureRecord rule_extract(const TextRecord& text, const Schema& schema,
                           const Lexicon& lexicon);

class RuleOracle : public OracleInterface {
 public:
  RuleOracle(const Schema& schema, Lexicon lexicon);
  std::optional<FeatureRecord> extract(const TextRecord& text,
                                       const Schema& schema) const override;

 private:
  Lexicon lexicon_;
};

// POSTs {"schema": ..., "text": ...} and expects {"features": {...}} back.
// Option strings outside the schema map to the attribute's "Other" option
// when one exists, otherwise the call counts as an extraction failure.
class HttpOracle : public OracleInterface {
 public:
  HttpOracle(std::string host, int port, std::string path = "/extract",
             int timeout_ms = 10000);
  std::optional<FeatureRecord> extract(const TextRecord& text,
                                       const Schema& schema) const override;
  bool retryable() const override { return true; }

 private:
  std::string host_;
  int port_;
  std::string path_;
  int timeout_ms_;
};

struct AnnotateOptions {
  int max_retries = 3;
  int backoff_initial_ms = 100;
  int parallelism = 8;  // bound on concurrent oracle calls
};

struct ExtractionFailure {
  std::size_t index = 0;
  std::string reason;
};

struct AnnotatedDataset {
  // One entry per successfully annotated input, in input order.
  std::vector<TextRecord> pairs;  // features always set
  std::vector<ExtractionFailure> failures;
};

// Annotates every text, preserving input order. Oracle calls run concurrently
// up to options.parallelism; failures are recorded and excluded from the
// paired set, never aborting the batch.
AnnotatedDataset annotate_dataset(const OracleInterface& oracle,
                                  std::span<const TextRecord> texts, const Schema& schema,
                                  const AnnotateOptions& options = {});

// Stage-0 extraction error: the average per-attribute distribution across
// trials acts as ground truth; the result is the mean JS distance of each
// trial to that average, over trials and attributes. Needs >= 2 trials of
// equal length.
double extraction_error(std::span<const std::vector<FeatureRecord>> trials,
                        const Schema& schema);

}  // namespace actg::extraction
