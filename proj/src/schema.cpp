#include "actg/schema.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "actg/rng.hpp"
#include "json.hpp"

namespace actg {

using ordered_json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

Schema::Schema(std::string name, std::vector<AttributeSpec> attributes,
               std::size_t max_options)
    : name_(std::move(name)), attributes_(std::move(attributes)) {
  if (attributes_.empty()) {
    throw std::invalid_argument("schema '" + name_ + "': needs at least one attribute");
  }
  std::unordered_set<std::string> attr_names;
  for (auto& attr : attributes_) {
    attr.name = trim(attr.name);
    if (attr.name.empty()) {
      throw std::invalid_argument("schema '" + name_ + "': empty attribute name");
    }
    if (!attr_names.insert(attr.name).second) {
      throw std::invalid_argument("schema '" + name_ + "': duplicate attribute '" +
                                  attr.name + "'");
    }
    if (attr.options.size() < 2) {
      throw std::invalid_argument("attribute '" + attr.name +
                                  "': needs at least two options");
    }
    if (attr.options.size() > max_options) {
      throw std::invalid_argument("attribute '" + attr.name + "': more than " +
                                  std::to_string(max_options) + " options");
    }
    std::unordered_set<std::string> opts;
    for (auto& opt : attr.options) {
      opt = trim(opt);
      if (opt.empty()) {
        throw std::invalid_argument("attribute '" + attr.name + "': empty option");
      }
      if (!opts.insert(opt).second) {
        throw std::invalid_argument("attribute '" + attr.name + "': duplicate option '" +
                                    opt + "'");
      }
    }
  }
}

std::optional<std::size_t> Schema::attribute_index(std::string_view name) const {
  const std::string key = trim(name);
  for (std::size_t k = 0; k < attributes_.size(); ++k) {
    if (attributes_[k].name == key) return k;
  }
  return std::nullopt;
}

std::optional<std::size_t> Schema::option_index(std::size_t attr,
                                                std::string_view option) const {
  const auto& opts = attributes_.at(attr).options;
  const std::string key = trim(option);
  for (std::size_t i = 0; i < opts.size(); ++i) {
    if (opts[i] == key) return i;
  }
  return std::nullopt;
}

std::uint64_t Schema::hash() const {
  // Content-only: the display name often comes from a file path.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& attr : attributes_) {
    h = splitmix64(h ^ fnv1a64(attr.name));
    for (const auto& opt : attr.options) h = splitmix64(h ^ fnv1a64(opt));
  }
  return h;
}

void validate_record(const Schema& schema, const FeatureRecord& record) {
  if (record.values.size() != schema.attribute_count()) {
    throw std::invalid_argument("feature record has " +
                                std::to_string(record.values.size()) +
                                " values, schema expects " +
                                std::to_string(schema.attribute_count()));
  }
  for (std::size_t k = 0; k < record.values.size(); ++k) {
    const auto v = record.values[k];
    if (v < 0 || static_cast<std::size_t>(v) >= schema.attribute(k).options.size()) {
      throw std::invalid_argument("feature record: option index " + std::to_string(v) +
                                  " out of range for attribute '" +
                                  schema.attribute(k).name + "'");
    }
  }
}

std::vector<std::string> tokenize(std::string_view text, std::size_t context_length) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size() && tokens.size() < context_length) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

TextRecord make_text_record(std::string text, std::size_t context_length) {
  TextRecord rec;
  rec.tokens = tokenize(text, context_length);
  rec.text = std::move(text);
  return rec;
}

AttributeDistribution feature_histogram(std::span<const FeatureRecord> records,
                                        const Schema& schema) {
  if (records.empty()) {
    throw std::invalid_argument("feature_histogram: empty record list");
  }
  AttributeDistribution dist;
  dist.per_attribute.resize(schema.attribute_count());
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    dist.per_attribute[k].assign(schema.attribute(k).options.size(), 0.0);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.values.size() != schema.attribute_count()) {
      throw std::invalid_argument("feature_histogram: record " + std::to_string(i) +
                                  " has wrong arity");
    }
    for (std::size_t k = 0; k < rec.values.size(); ++k) {
      const auto v = rec.values[k];
      if (v < 0 || static_cast<std::size_t>(v) >= dist.per_attribute[k].size()) {
        throw std::invalid_argument("feature_histogram: record " + std::to_string(i) +
                                    " has invalid index for attribute '" +
                                    schema.attribute(k).name + "'");
      }
      dist.per_attribute[k][static_cast<std::size_t>(v)] += 1.0;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(records.size());
  for (auto& vec : dist.per_attribute) {
    for (double& p : vec) p *= inv_n;
  }
  return dist;
}

Schema parse_schema(const std::string& json_text, std::string name) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("schema parse error: ") + e.what());
  }
  if (!doc.is_object()) {
    throw std::invalid_argument("schema document must be a JSON object");
  }
  std::vector<AttributeSpec> attrs;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_array()) {
      throw std::invalid_argument("attribute '" + it.key() +
                                  "': options must be an array");
    }
    AttributeSpec spec;
    spec.name = it.key();
    for (const auto& opt : it.value()) {
      if (!opt.is_string()) {
        throw std::invalid_argument("attribute '" + it.key() +
                                    "': options must be strings");
      }
      spec.options.push_back(opt.get<std::string>());
    }
    attrs.push_back(std::move(spec));
  }
  return Schema(std::move(name), std::move(attrs));
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str(), path);
}

std::string serialize_schema(const Schema& schema) {
  ordered_json doc = ordered_json::object();
  for (const auto& attr : schema.attributes()) {
    doc[attr.name] = attr.options;
  }
  return doc.dump(2);
}

void save_schema(const std::string& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write schema file: " + path);
  out << serialize_schema(schema) << "\n";
}

namespace {

FeatureRecord features_from_json(const ordered_json& obj, const Schema& schema,
                                 std::size_t line_no) {
  FeatureRecord rec;
  rec.values.assign(schema.attribute_count(), -1);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto attr = schema.attribute_index(it.key());
    if (!attr) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": unknown attribute '" + it.key() + "'");
    }
    if (!it.value().is_string()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": attribute '" +
                               it.key() + "' value must be a string");
    }
    const auto opt = schema.option_index(*attr, it.value().get<std::string>());
    if (!opt) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": attribute '" +
                               it.key() + "' has option not in schema: '" +
                               it.value().get<std::string>() + "'");
    }
    rec.values[*attr] = static_cast<std::int32_t>(*opt);
  }
  for (std::size_t k = 0; k < rec.values.size(); ++k) {
    if (rec.values[k] < 0) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing attribute '" + schema.attribute(k).name + "'");
    }
  }
  return rec;
}

}  // namespace

std::vector<TextRecord> load_jsonl(const std::string& path, const Schema* schema,
                                   std::size_t context_length) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::vector<TextRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected object with string field \"text\"");
    }
    TextRecord rec = make_text_record(obj["text"].get<std::string>(), context_length);
    if (obj.contains("features")) {
      if (schema == nullptr) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": dataset has features but no schema was given");
      }
      rec.features = features_from_json(obj["features"], *schema, line_no);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_jsonl(const std::string& path, std::span<const TextRecord> records,
                const Schema* schema) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (const auto& rec : records) {
    ordered_json obj;
    obj["text"] = rec.text;
    if (rec.features) {
      if (schema == nullptr) {
        throw std::runtime_error("save_jsonl: records carry features but no schema");
      }
      validate_record(*schema, *rec.features);
      ordered_json feats = ordered_json::object();
      for (std::size_t k = 0; k < schema->attribute_count(); ++k) {
        const auto& attr = schema->attribute(k);
        feats[attr.name] = attr.options[static_cast<std::size_t>(rec.features->values[k])];
      }
      obj["features"] = feats;
    }
    out << obj.dump() << "\n";
  }
}

}  // namespace actg
