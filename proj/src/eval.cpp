#include "actg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "actg/rng.hpp"
#include "json.hpp"

namespace actg::eval {

namespace {

void check_distribution(std::span<const double> p, const char* who) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument(std::string(who) + ": negative mass");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(who) + ": mass sums to " +
                                std::to_string(sum) + ", expected 1");
  }
}

// sum_i p_i log2(p_i / m_i) with the 0 log 0 convention.
double kl2(std::span<const double> p, std::span<const double> m) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log2(p[i] / m[i]);
  }
  return kl;
}

double kl_nats(std::span<const double> p, std::span<const double> m) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / m[i]);
  }
  return kl;
}

}  // namespace

double js_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("js_distance: dimension mismatch");
  }
  check_distribution(p, "js_distance(p)");
  check_distribution(q, "js_distance(q)");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  double jsd = 0.5 * kl2(p, m) + 0.5 * kl2(q, m);
  jsd = std::clamp(jsd, 0.0, 1.0);
  return std::sqrt(jsd);
}

AttributeJsd attribute_jsd(const Schema& schema, std::span<const FeatureRecord> a,
                           std::span<const FeatureRecord> b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("attribute_jsd: empty feature set");
  }
  const AttributeDistribution da = feature_histogram(a, schema);
  const AttributeDistribution db = feature_histogram(b, schema);
  AttributeJsd out;
  out.per_attribute.resize(schema.attribute_count());
  for (std::size_t k = 0; k < schema.attribute_count(); ++k) {
    out.per_attribute[k] = js_distance(da.per_attribute[k], db.per_attribute[k]);
    out.mean += out.per_attribute[k];
  }
  out.mean /= static_cast<double>(schema.attribute_count());
  return out;
}

void HashedBowEmbedder::embed(const TextRecord& text, std::span<double> out) const {
  if (out.size() != dim_) throw std::invalid_argument("embed: bad output span");
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& tok : text.tokens) {
    const std::uint64_t h = fnv1a64(tok);
    const std::size_t idx = static_cast<std::size_t>(h % dim_);
    const double sign = ((h >> 32) & 1u) ? 1.0 : -1.0;
    out[idx] += sign;
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  if (norm > 0.0) {
    const double inv = 1.0 / std::sqrt(norm);
    for (double& v : out) v *= inv;
  }
}

Matrix embed_corpus(std::span<const TextRecord> texts, const Embedder& embedder,
                    Exec exec) {
  Matrix m;
  m.rows = texts.size();
  m.cols = embedder.dim();
  m.data.assign(m.rows * m.cols, 0.0);
  parallel_for(m.rows, exec, [&](std::size_t i) { embedder.embed(texts[i], m.row(i)); });
  return m;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

Matrix kmeans_pp_init(const Matrix& points, std::size_t k, Rng& rng) {
  Matrix centroids;
  centroids.rows = k;
  centroids.cols = points.cols;
  centroids.data.assign(k * points.cols, 0.0);

  const std::size_t first = rng.uniform_index(points.rows);
  std::copy_n(points.row(first).data(), points.cols, centroids.row(0).data());

  std::vector<double> d2(points.rows, std::numeric_limits<double>::max());
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < points.rows; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points.row(i), centroids.row(c - 1)));
    }
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t chosen;
    if (total <= 0.0) {
      chosen = rng.uniform_index(points.rows);
    } else {
      double u = rng.uniform() * total;
      chosen = points.rows - 1;
      for (std::size_t i = 0; i < points.rows; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy_n(points.row(chosen).data(), points.cols, centroids.row(c).data());
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    int max_iterations, Exec exec) {
  if (k == 0 || k > points.rows) {
    throw std::invalid_argument("kmeans: need 1 <= k <= point count");
  }
  Rng rng(seed);
  KmeansResult res;
  res.centroids = kmeans_pp_init(points, k, rng);
  res.assignments.assign(points.rows, 0);

  std::vector<std::uint32_t> next(points.rows, 0);
  std::vector<double> sums(k * points.cols);
  std::vector<std::size_t> counts(k);

  for (int iter = 0; iter < max_iterations; ++iter) {
    res.iterations = iter + 1;
    // Assignment: pure per point.
    parallel_for(points.rows, exec, [&](std::size_t i) {
      double best = std::numeric_limits<double>::max();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(points.row(i), res.centroids.row(c));
        if (d < best) {
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      next[i] = best_c;
    });

    const bool converged = (iter > 0 && next == res.assignments);
    res.assignments = next;
    if (converged) break;

    // Update: serial accumulation in point order.
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < points.rows; ++i) {
      const std::size_t c = res.assignments[i];
      ++counts[c];
      const auto p = points.row(i);
      double* s = sums.data() + c * points.cols;
      for (std::size_t j = 0; j < points.cols; ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      const double inv = 1.0 / static_cast<double>(counts[c]);
      double* dst = res.centroids.row(c).data();
      const double* s = sums.data() + c * points.cols;
      for (std::size_t j = 0; j < points.cols; ++j) dst[j] = s[j] * inv;
    }
  }
  return res;
}

double frontier_score(std::span<const double> p, std::span<const double> q, double c) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("frontier_score: dimension mismatch");
  }
  if (!(c > 0.0)) throw std::invalid_argument("frontier_score: scaling must be > 0");

  std::vector<double> xs, ys;
  xs.reserve(101);
  ys.reserve(101);
  xs.push_back(1.0);  // lambda -> 0 extreme
  ys.push_back(0.0);
  std::vector<double> mix(p.size());
  for (int i = 1; i <= 99; ++i) {
    const double lambda = 0.01 * i;
    for (std::size_t j = 0; j < p.size(); ++j) {
      mix[j] = lambda * p[j] + (1.0 - lambda) * q[j];
    }
    xs.push_back(std::exp(-c * kl_nats(q, mix)));
    ys.push_back(std::exp(-c * kl_nats(p, mix)));
  }
  xs.push_back(0.0);  // lambda -> 1 extreme
  ys.push_back(1.0);

  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    area += 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]);
  }
  return std::clamp(std::abs(area), 0.0, 1.0);
}

std::size_t default_cluster_count(std::size_t synthetic_size) {
  return std::max<std::size_t>(1, synthetic_size / 10);
}

double mauve_lite(std::span<const TextRecord> texts_a, std::span<const TextRecord> texts_b,
                  const Embedder& embedder, const MauveOptions& options) {
  std::size_t k = options.cluster_count;
  if (k == 0) k = default_cluster_count(texts_b.size());
  if (texts_a.size() < k || texts_b.size() < k) {
    throw std::invalid_argument(
        "mauve_lite: corpus smaller than cluster count " + std::to_string(k) +
        "; pass a smaller cluster_count");
  }

  std::vector<TextRecord> joint;
  joint.reserve(texts_a.size() + texts_b.size());
  joint.insert(joint.end(), texts_a.begin(), texts_a.end());
  joint.insert(joint.end(), texts_b.begin(), texts_b.end());

  const Matrix points = embed_corpus(joint, embedder, options.exec);
  const KmeansResult km =
      kmeans(points, k, options.seed, options.kmeans_iterations, options.exec);

  constexpr double kSmoothing = 1e-6;
  std::vector<double> hist_a(k, kSmoothing), hist_b(k, kSmoothing);
  for (std::size_t i = 0; i < texts_a.size(); ++i) hist_a[km.assignments[i]] += 1.0;
  for (std::size_t i = 0; i < texts_b.size(); ++i) {
    hist_b[km.assignments[texts_a.size() + i]] += 1.0;
  }
  auto normalize = [](std::vector<double>& h) {
    double sum = 0.0;
    for (double v : h) sum += v;
    for (double& v : h) v /= sum;
  };
  normalize(hist_a);
  normalize(hist_b);
  return frontier_score(hist_a, hist_b, options.scaling);
}

namespace {

double percentile(std::vector<double> sorted, double pct) {
  if (sorted.empty()) return 0.0;
  const double pos = pct * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

LengthStats length_stats(std::span<const TextRecord> texts, double reference_median) {
  if (texts.empty()) throw std::invalid_argument("length_stats: empty text list");
  std::vector<double> lens;
  lens.reserve(texts.size());
  double sum = 0.0;
  std::size_t collapsed = 0;
  const double threshold = 0.25 * reference_median;
  for (const auto& t : texts) {
    const double len = static_cast<double>(t.tokens.size());
    lens.push_back(len);
    sum += len;
    if (reference_median > 0.0 && len < threshold) ++collapsed;
  }
  std::sort(lens.begin(), lens.end());
  LengthStats out;
  out.median = percentile(lens, 0.5);
  out.mean = sum / static_cast<double>(texts.size());
  out.p10 = percentile(lens, 0.10);
  out.collapse_fraction =
      static_cast<double>(collapsed) / static_cast<double>(texts.size());
  return out;
}

IfaccReport dataset_ifacc(std::span<const GeneratedPair> pairs,
                          const FeatureExtractor& extractor, const Schema& schema) {
  if (pairs.empty()) throw std::invalid_argument("dataset_ifacc: empty pair list");
  const std::size_t k = schema.attribute_count();
  IfaccReport report;
  report.per_attribute_match.assign(k, 0.0);
  for (const auto& pair : pairs) {
    validate_record(schema, pair.feature);
    const auto extracted = extractor(pair.text);
    if (!extracted) {
      ++report.failures;
      continue;  // scores 0, matches nothing
    }
    validate_record(schema, *extracted);
    double matched = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      if (pair.feature.values[a] == extracted->values[a]) {
        matched += 1.0;
        report.per_attribute_match[a] += 1.0;
      }
    }
    report.mean += matched / static_cast<double>(k);
  }
  report.mean /= static_cast<double>(pairs.size());
  for (double& m : report.per_attribute_match) {
    m /= static_cast<double>(pairs.size());
  }
  return report;
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::json doc;
  doc["scalars"] = report.scalars;
  doc["per_attribute"] = report.per_attribute;
  doc["metadata"] = report.metadata;
  return doc.dump(2);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string metric_report_csv_header(const MetricReport& report) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [key, _] : report.scalars) {
    if (!first) os << ',';
    os << csv_escape(key);
    first = false;
  }
  for (const auto& [key, _] : report.metadata) {
    if (!first) os << ',';
    os << csv_escape(key);
    first = false;
  }
  return os.str();
}

std::string metric_report_csv_row(const MetricReport& report) {
  std::ostringstream os;
  os.precision(12);
  bool first = true;
  for (const auto& [_, value] : report.scalars) {
    if (!first) os << ',';
    os << value;
    first = false;
  }
  for (const auto& [_, value] : report.metadata) {
    if (!first) os << ',';
    os << csv_escape(value);
    first = false;
  }
  return os.str();
}

void save_metric_report(const std::string& json_path, const std::string& csv_path,
                        const MetricReport& report) {
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write metric report: " + json_path);
    out << metric_report_json(report) << "\n";
  }
  {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write metric CSV: " + csv_path);
    out << metric_report_csv_header(report) << "\n"
        << metric_report_csv_row(report) << "\n";
  }
}

}  // namespace actg::eval
