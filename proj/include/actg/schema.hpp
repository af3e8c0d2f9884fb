#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace actg {

// One categorical attribute with a closed, ordered option list.
// Cardinality is capped at 50 options.
struct AttributeSpec {
  std::string name;
  std::vector<std::string> options;
};

// Ordered attribute set. Immutable after construction; attribute order is
// fixed and defines serialization order everywhere (JSON, feature records,
// histograms).
class Schema {
 public:
  // Option-list bound of the tabular schema design contract. Single-axis
  // topic histograms (the S1 baseline) may exceed it via max_options.
  static constexpr std::size_t kMaxOptions = 50;

  Schema(std::string name, std::vector<AttributeSpec> attributes,
         std::size_t max_options = kMaxOptions);

  const std::string& name() const { return name_; }
  std::size_t attribute_count() const { return attributes_.size(); }
  const AttributeSpec& attribute(std::size_t k) const { return attributes_.at(k); }
  const std::vector<AttributeSpec>& attributes() const { return attributes_; }

  std::optional<std::size_t> attribute_index(std::string_view name) const;
  // Matches by exact string equality after trimming surrounding whitespace.
  std::optional<std::size_t> option_index(std::size_t attr, std::string_view option) const;

  // Stable content hash; used to stamp models and run artifacts.
  std::uint64_t hash() const;

 private:
  std::string name_;
  std::vector<AttributeSpec> attributes_;
};

// One option index per schema attribute, in attribute order.
struct FeatureRecord {
  std::vector<std::int32_t> values;

  bool operator==(const FeatureRecord&) const = default;
};

// Throws std::invalid_argument naming the offending attribute on mismatch.
void validate_record(const Schema& schema, const FeatureRecord& record);

// A text sample: raw string plus its whitespace tokenization, optionally
// paired with a feature record. Tokenization is capped at context_length
// tokens; text beyond the cap is dropped from the token view.
struct TextRecord {
  std::string text;
  std::vector<std::string> tokens;
  std::optional<FeatureRecord> features;
};

constexpr std::size_t kDefaultContextLength = 512;

std::vector<std::string> tokenize(std::string_view text,
                                  std::size_t context_length = kDefaultContextLength);
TextRecord make_text_record(std::string text,
                            std::size_t context_length = kDefaultContextLength);

// Per-attribute probability vectors over options. Vectors are non-negative
// and sum to 1 within 1e-9.
struct AttributeDistribution {
  std::vector<std::vector<double>> per_attribute;
};

AttributeDistribution feature_histogram(std::span<const FeatureRecord> records,
                                        const Schema& schema);

// Schema file format: a JSON object mapping attribute name -> array of option
// strings, order-significant.
Schema parse_schema(const std::string& json_text, std::string name = "schema");
Schema load_schema(const std::string& path);
std::string serialize_schema(const Schema& schema);
void save_schema(const std::string& path, const Schema& schema);

// Dataset files are JSONL, one object per line: {"text": ...} with an
// optional {"features": {attribute: option, ...}} object.
std::vector<TextRecord> load_jsonl(const std::string& path, const Schema* schema = nullptr,
                                   std::size_t context_length = kDefaultContextLength);
void save_jsonl(const std::string& path, std::span<const TextRecord> records,
                const Schema* schema = nullptr);

std::string trim(std::string_view s);

}  // namespace actg
