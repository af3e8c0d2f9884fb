#pragma once

#include <cstdint>
#include <vector>

#include "actg/extraction.hpp"
#include "actg/policy.hpp"
#include "actg/schema.hpp"

namespace actg::toy {

// Synthetic four-attribute corpus for end-to-end runs. Every text is a token
// stream that spells out its feature assignment through unique keywords, so
// the bundled lexicon extracts features exactly. Keywords are occasionally
// dropped (keyword_drop_rate), in which case extraction falls back to the
// attribute's "unspecified" default. Trailing prose also mentions stray
// keywords at trailer_keyword_rate, the way real text name-drops entities it
// is not about; trailing mentions can override the template under the
// lexicon's rule order. The attached features are always the extractable
// ones.
struct ToyConfig {
  std::size_t n = 5000;
  std::uint64_t seed = 1;
  double keyword_drop_rate = 0.03;
  // Trailing prose re-mentions the text's own keywords at this rate, the way
  // an abstract keeps naming its organism.
  double trailer_keyword_rate = 0.15;
  // Rate of foreign keyword mentions in the trailer (entities the text is
  // not about); under the ambiguity-averse lexicon these spoil fields.
  double foreign_keyword_rate = 0.03;
  // Share of terse headline-style texts: the four keywords plus a closer,
  // no prose. Real corpora carry such degenerate members too.
  double headline_rate = 0.08;
  int min_trailer = 6;   // trailing filler tokens per long-form text
  int max_trailer = 18;
};

Schema toy_schema();
extraction::Lexicon toy_lexicon();
gen::Vocab toy_vocab();

struct ToyCorpus {
  std::vector<TextRecord> texts;  // features attached
};

ToyCorpus make_toy_corpus(const ToyConfig& config);

// A skewed single-attribute schema with many options plus a small sample,
// the regime where the thresholded DP histogram breaks down.
Schema sparse_topic_schema(std::size_t topic_count = 40);
std::vector<FeatureRecord> sparse_topic_features(const Schema& schema, std::size_t n,
                                                 std::uint64_t seed);

}  // namespace actg::toy
