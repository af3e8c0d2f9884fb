#include "actg/desk_world.hpp"

#include <array>
#include <cmath>
#include <string>

#include "actg/rng.hpp"

namespace actg::toy {

namespace {

const std::vector<std::string> kAreas = {"genomics", "neuroscience", "ecology",
                                         "immunology", "unspecified"};
const std::vector<std::string> kOrganisms = {"human", "mouse", "fly", "yeast",
                                             "unspecified"};
const std::vector<std::string> kMethods = {"sequencing", "imaging", "modeling",
                                           "fieldwork", "unspecified"};
const std::vector<std::string> kFindings = {"positive", "negative", "inconclusive",
                                            "unspecified"};

// Template-space and trailer-space pools are disjoint, so long-form texts
// read template-then-prose and the bigram statistics keep the two regions
// apart.
const std::vector<std::vector<std::string>> kIntros = {
    {"in", "this", "study"},
    {"we", "report"},
    {"here", "we", "describe"},
    {"this", "work", "presents"},
};

const std::vector<std::string> kConnectA = {"research", "analysis"};
const std::vector<std::string> kConnectB = {"of", "involving"};
const std::vector<std::string> kConnectC = {"samples", "populations"};
const std::vector<std::string> kConnectD = {"using", "with"};
const std::vector<std::string> kConnectE = {"experiments", "data"};
const std::vector<std::string> kConnectF = {"revealed", "showed"};
const std::vector<std::string> kConnectG = {"outcomes", "evidence"};

// substituted for dropped keywords; template-space, never a lexicon pattern
const std::string kDropToken = "unreported";

const std::vector<std::string> kTrailers = {
    "further",      "these",      "findings", "suggest", "broader",
    "directions",   "future",     "across",   "systems", "measurements",
    "replicates",   "controls",   "robust",   "consistent", "effects",
    "also",         "prior",      "related",
};

// Ground-truth joint: area is skewed, organism and method depend on the
// area, finding is independent.
const std::array<double, 4> kAreaProbs = {0.38, 0.28, 0.20, 0.14};
const std::array<std::array<double, 4>, 4> kOrganismGivenArea = {{
    {0.45, 0.15, 0.10, 0.30},  // genomics: human, yeast heavy
    {0.10, 0.50, 0.30, 0.10},  // neuroscience: mouse, fly heavy
    {0.05, 0.15, 0.45, 0.35},  // ecology: fly, yeast heavy
    {0.50, 0.35, 0.10, 0.05},  // immunology: human, mouse heavy
}};
const std::array<std::array<double, 4>, 4> kMethodGivenArea = {{
    {0.55, 0.10, 0.25, 0.10},
    {0.15, 0.50, 0.25, 0.10},
    {0.10, 0.15, 0.25, 0.50},
    {0.35, 0.35, 0.20, 0.10},
}};
const std::array<double, 3> kFindingProbs = {0.45, 0.30, 0.25};

template <std::size_t N>
std::size_t draw(Rng& rng, const std::array<double, N>& probs) {
  return rng.categorical(std::span<const double>(probs.data(), probs.size()));
}

const std::string& pick(Rng& rng, const std::vector<std::string>& pool) {
  return pool[rng.uniform_index(pool.size())];
}

}  // namespace

Schema toy_schema() {
  return Schema("desk-world", {
                                  {"area", kAreas},
                                  {"organism", kOrganisms},
                                  {"method", kMethods},
                                  {"finding", kFindings},
                              });
}

extraction::Lexicon toy_lexicon() {
  const Schema schema = toy_schema();
  extraction::Lexicon lex;
  lex.rules.resize(schema.attribute_count());
  lex.defaults.resize(schema.attribute_count());
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    const auto& options = schema.attribute(k).options;
    // Every real option keyword is its own name; "unspecified" is the
    // default. A rule fires only when its keyword appears and no competing
    // option of the same attribute does: a text that names two options for
    // one field is ambiguous and falls back to the default, the way a
    // rubric grader refuses to verify a contradicted field.
    for (std::size_t o = 0; o + 1 < options.size(); ++o) {
      std::string competitors;
      for (std::size_t w = 0; w + 1 < options.size(); ++w) {
        if (w == o) continue;
        if (!competitors.empty()) competitors += '|';
        competitors += options[w];
      }
      lex.rules[k].push_back({"re:^(?!.*(?:" + competitors + ")).*" + options[o],
                              static_cast<std::int32_t>(o)});
    }
    lex.defaults[k] = static_cast<std::int32_t>(options.size() - 1);
  }
  return lex;
}

gen::Vocab toy_vocab() {
  std::vector<std::string> tokens;
  auto add_all = [&](const std::vector<std::string>& pool) {
    for (const auto& t : pool) tokens.push_back(t);
  };
  for (const auto& intro : kIntros) add_all(intro);
  tokens.push_back(kDropToken);
  tokens.push_back("overview");
  add_all(kAreas);
  add_all(kConnectA);
  add_all(kConnectB);
  add_all(kOrganisms);
  add_all(kConnectC);
  add_all(kConnectD);
  add_all(kMethods);
  add_all(kConnectE);
  add_all(kConnectF);
  add_all(kFindings);
  add_all(kConnectG);
  add_all(kTrailers);
  return gen::Vocab::build(tokens);
}

ToyCorpus make_toy_corpus(const ToyConfig& config) {
  const Schema schema = toy_schema();
  const extraction::Lexicon lexicon = toy_lexicon();
  Rng rng(derive_seed(config.seed, "toy-corpus"));

  ToyCorpus corpus;
  corpus.texts.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const std::size_t area = draw(rng, kAreaProbs);
    const std::size_t organism = draw(rng, kOrganismGivenArea[area]);
    const std::size_t method = draw(rng, kMethodGivenArea[area]);
    const std::size_t finding = draw(rng, kFindingProbs);

    std::vector<std::string> words;
    if (rng.uniform() < config.headline_rate) {
      // terse headline: an opener, the keywords, a closer; unmentioned
      // facets are skipped the way the long form drops them
      words.push_back("overview");
      if (rng.uniform() >= config.keyword_drop_rate) words.push_back(kAreas[area]);
      if (rng.uniform() >= config.keyword_drop_rate) words.push_back(kOrganisms[organism]);
      if (rng.uniform() >= config.keyword_drop_rate) words.push_back(kMethods[method]);
      if (rng.uniform() >= config.keyword_drop_rate) words.push_back(kFindings[finding]);
      words.push_back(pick(rng, kConnectG));
    } else {
      for (const auto& w : kIntros[rng.uniform_index(kIntros.size())]) words.push_back(w);

      std::vector<std::string> mentioned;
      auto keyword = [&](const std::string& kw) {
        if (rng.uniform() < config.keyword_drop_rate) {
          words.push_back(kDropToken);
        } else {
          words.push_back(kw);
          mentioned.push_back(kw);
        }
      };
      keyword(kAreas[area]);
      words.push_back(pick(rng, kConnectA));
      words.push_back(pick(rng, kConnectB));
      keyword(kOrganisms[organism]);
      words.push_back(pick(rng, kConnectC));
      words.push_back(pick(rng, kConnectD));
      keyword(kMethods[method]);
      words.push_back(pick(rng, kConnectE));
      words.push_back(pick(rng, kConnectF));
      keyword(kFindings[finding]);
      words.push_back(pick(rng, kConnectG));

      const int trailer = config.min_trailer +
                          static_cast<int>(rng.uniform_index(
                              config.max_trailer - config.min_trailer + 1));
      for (int t = 0; t < trailer; ++t) {
        const double u = rng.uniform();
        if (u < config.trailer_keyword_rate && !mentioned.empty()) {
          // the text re-mentions one of the facets it actually covers
          words.push_back(mentioned[rng.uniform_index(mentioned.size())]);
        } else if (u >= config.trailer_keyword_rate &&
                   u < config.trailer_keyword_rate + config.foreign_keyword_rate) {
          // stray mention of an entity the text is not about
          switch (rng.uniform_index(4)) {
            case 0: words.push_back(kAreas[rng.uniform_index(4)]); break;
            case 1: words.push_back(kOrganisms[rng.uniform_index(4)]); break;
            case 2: words.push_back(kMethods[rng.uniform_index(4)]); break;
            default: words.push_back(kFindings[rng.uniform_index(3)]); break;
          }
        } else {
          words.push_back(pick(rng, kTrailers));
        }
      }
    }

    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text += ' ';
      text += w;
    }
    TextRecord rec = make_text_record(std::move(text));
    rec.features = extraction::rule_extract(rec, schema, lexicon);
    corpus.texts.push_back(std::move(rec));
  }
  return corpus;
}

Schema sparse_topic_schema(std::size_t topic_count) {
  std::vector<std::string> options;
  options.reserve(topic_count);
  for (std::size_t i = 0; i < topic_count; ++i) {
    options.push_back("topic_" + std::to_string(i));
  }
  return Schema("sparse-topics", {{"topic", std::move(options)}}, topic_count);
}

std::vector<FeatureRecord> sparse_topic_features(const Schema& schema, std::size_t n,
                                                 std::uint64_t seed) {
  const std::size_t card = schema.attribute(0).options.size();
  // Zipf-like weights: a few heavy topics, a long thin tail.
  std::vector<double> weights(card);
  for (std::size_t i = 0; i < card; ++i) {
    weights[i] = 1.0 / std::pow(static_cast<double>(i + 1), 1.3);
  }
  Rng rng(derive_seed(seed, "sparse-topics"));
  std::vector<FeatureRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].values = {static_cast<std::int32_t>(rng.categorical(weights))};
  }
  return out;
}

}  // namespace actg::toy
