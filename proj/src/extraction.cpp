#include "actg/extraction.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <regex>
#include <unordered_map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "actg/eval.hpp"
#include "httplib.h"
#include "json.hpp"

namespace actg::extraction {

using ordered_json = nlohmann::ordered_json;

Lexicon parse_lexicon(const std::string& json_text, const Schema& schema) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("lexicon parse error: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("lexicon must be a JSON object");

  Lexicon lex;
  lex.rules.resize(schema.attribute_count());
  lex.defaults.assign(schema.attribute_count(), -1);

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto attr = schema.attribute_index(it.key());
    if (!attr) {
      throw std::invalid_argument("lexicon: unknown attribute '" + it.key() + "'");
    }
    const auto& entry = it.value();
    if (!entry.is_object() || !entry.contains("rules") || !entry.contains("default")) {
      throw std::invalid_argument("lexicon: attribute '" + it.key() +
                                  "' needs \"rules\" and \"default\"");
    }
    for (const auto& rule : entry["rules"]) {
      const std::string pattern = rule.at("pattern").get<std::string>();
      const std::string option = rule.at("option").get<std::string>();
      const auto opt = schema.option_index(*attr, option);
      if (!opt) {
        throw std::invalid_argument("lexicon: attribute '" + it.key() +
                                    "' rule option not in schema: '" + option + "'");
      }
      lex.rules[*attr].push_back({pattern, static_cast<std::int32_t>(*opt)});
    }
    const std::string def = entry["default"].get<std::string>();
    const auto opt = schema.option_index(*attr, def);
    if (!opt) {
      throw std::invalid_argument("lexicon: attribute '" + it.key() +
                                  "' default option not in schema: '" + def + "'");
    }
    lex.defaults[*attr] = static_cast<std::int32_t>(*opt);
  }
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    if (lex.defaults[k] < 0) {
      throw std::invalid_argument("lexicon: missing entry for attribute '" +
                                  schema.attribute(k).name + "'");
    }
  }
  return lex;
}

Lexicon load_lexicon(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_lexicon(buf.str(), schema);
}

std::string serialize_lexicon(const Lexicon& lexicon, const Schema& schema) {
  ordered_json doc = ordered_json::object();
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    ordered_json entry;
    ordered_json rules = ordered_json::array();
    for (const auto& rule : lexicon.rules[k]) {
      rules.push_back({{"pattern", rule.pattern},
                       {"option", schema.attribute(k).options[rule.option]}});
    }
    entry["rules"] = std::move(rules);
    entry["default"] = schema.attribute(k).options[lexicon.defaults[k]];
    doc[schema.attribute(k).name] = std::move(entry);
  }
  return doc.dump(2);
}

namespace {

bool pattern_matches(const std::string& pattern, const std::string& text) {
  if (pattern.rfind("re:", 0) == 0) {
    // compiled-regex cache; thread_local keeps extraction reentrant
    thread_local std::unordered_map<std::string, std::regex> cache;
    auto it = cache.find(pattern);
    if (it == cache.end()) {
      it = cache.emplace(pattern, std::regex(pattern.substr(3))).first;
    }
    return std::regex_search(text, it->second);
  }
  return text.find(pattern) != std::string::npos;
}

}  // namespace

FeatureRecord rule_extract(const TextRecord& text, const Schema& schema,
                           const Lexicon& lexicon) {
  if (lexicon.rules.size() != schema.attribute_count()) {
    throw std::invalid_argument("rule_extract: lexicon does not match schema");
  }
  FeatureRecord rec;
  rec.values.resize(schema.attribute_count());
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    std::int32_t value = lexicon.defaults[k];
    for (const auto& rule : lexicon.rules[k]) {
      if (pattern_matches(rule.pattern, text.text)) {
        value = rule.option;
        break;
      }
    }
    rec.values[k] = value;
  }
  return rec;
}

RuleOracle::RuleOracle(const Schema& schema, Lexicon lexicon)
    : lexicon_(std::move(lexicon)) {
  if (lexicon_.rules.size() != schema.attribute_count()) {
    throw std::invalid_argument("RuleOracle: lexicon does not match schema");
  }
}

std::optional<FeatureRecord> RuleOracle::extract(const TextRecord& text,
                                                 const Schema& schema) const {
  return rule_extract(text, schema, lexicon_);
}

HttpOracle::HttpOracle(std::string host, int port, std::string path, int timeout_ms)
    : host_(std::move(host)), port_(port), path_(std::move(path)),
      timeout_ms_(timeout_ms) {}

std::optional<FeatureRecord> HttpOracle::extract(const TextRecord& text,
                                                 const Schema& schema) const {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(0, timeout_ms_ * 1000);
  client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);

  ordered_json request;
  request["schema"] = ordered_json::parse(serialize_schema(schema));
  request["text"] = text.text;

  auto res = client.Post(path_, request.dump(), "application/json");
  if (!res || res->status != 200) {
    throw std::runtime_error("oracle transport failure: " +
                             (res ? "status " + std::to_string(res->status)
                                  : httplib::to_string(res.error())));
  }

  ordered_json body;
  try {
    body = ordered_json::parse(res->body);
  } catch (const std::exception&) {
    return std::nullopt;  // non-JSON response is an extraction failure
  }
  if (!body.is_object() || !body.contains("features") || !body["features"].is_object()) {
    return std::nullopt;
  }

  FeatureRecord rec;
  rec.values.assign(schema.attribute_count(), -1);
  for (auto it = body["features"].begin(); it != body["features"].end(); ++it) {
    const auto attr = schema.attribute_index(it.key());
    if (!attr || !it.value().is_string()) return std::nullopt;
    const std::string value = it.value().get<std::string>();
    auto opt = schema.option_index(*attr, value);
    if (!opt) {
      // The contract demands exact option strings; salvage via "Other" if the
      // attribute has one, otherwise fail the extraction.
      opt = schema.option_index(*attr, "Other");
      if (!opt) return std::nullopt;
    }
    rec.values[*attr] = static_cast<std::int32_t>(*opt);
  }
  for (std::int32_t v : rec.values) {
    if (v < 0) return std::nullopt;  // attribute missing from the response
  }
  return rec;
}

AnnotatedDataset annotate_dataset(const OracleInterface& oracle,
                                  std::span<const TextRecord> texts, const Schema& schema,
                                  const AnnotateOptions& options) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].text.empty()) {
      throw std::invalid_argument("annotate_dataset: text " + std::to_string(i) +
                                  " is empty");
    }
  }

  struct Slot {
    std::optional<FeatureRecord> feature;
    std::string error;
  };
  std::vector<Slot> slots(texts.size());

  auto run_one = [&](std::size_t i) {
    const int attempts = oracle.retryable() ? options.max_retries : 1;
    int backoff_ms = options.backoff_initial_ms;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      try {
        slots[i].feature = oracle.extract(texts[i], schema);
        if (!slots[i].feature) slots[i].error = "oracle returned non-conforming output";
        return;
      } catch (const std::exception& e) {
        slots[i].error = e.what();
        if (attempt + 1 < attempts) {
          std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
          backoff_ms *= 2;
        }
      }
    }
  };

  const int workers =
      std::max(1, std::min<int>(options.parallelism, static_cast<int>(texts.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < texts.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = cursor.fetch_add(1);
          if (i >= texts.size()) return;
          run_one(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Re-assemble in input order.
  AnnotatedDataset out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (slots[i].feature) {
      validate_record(schema, *slots[i].feature);
      TextRecord rec = texts[i];
      rec.features = std::move(slots[i].feature);
      out.pairs.push_back(std::move(rec));
    } else {
      out.failures.push_back({i, slots[i].error});
    }
  }
  return out;
}

double extraction_error(std::span<const std::vector<FeatureRecord>> trials,
                        const Schema& schema) {
  if (trials.size() < 2) {
    throw std::invalid_argument("extraction_error: needs at least 2 trials");
  }
  const std::size_t n = trials[0].size();
  for (const auto& trial : trials) {
    if (trial.size() != n) {
      throw std::invalid_argument("extraction_error: trials differ in length");
    }
  }

  std::vector<AttributeDistribution> dists;
  dists.reserve(trials.size());
  for (const auto& trial : trials) dists.push_back(feature_histogram(trial, schema));

  // Average distribution per attribute across trials.
  AttributeDistribution avg = dists[0];
  for (std::size_t t = 1; t < dists.size(); ++t) {
    for (std::size_t k = 0; k < avg.per_attribute.size(); ++k) {
      for (std::size_t i = 0; i < avg.per_attribute[k].size(); ++i) {
        avg.per_attribute[k][i] += dists[t].per_attribute[k][i];
      }
    }
  }
  const double inv_t = 1.0 / static_cast<double>(dists.size());
  for (auto& vec : avg.per_attribute) {
    for (double& v : vec) v *= inv_t;
  }

  double total = 0.0;
  for (const auto& dist : dists) {
    for (std::size_t k = 0; k < avg.per_attribute.size(); ++k) {
      total += eval::js_distance(dist.per_attribute[k], avg.per_attribute[k]);
    }
  }
  return total / static_cast<double>(dists.size() * schema.attribute_count());
}

}  // namespace actg::extraction
