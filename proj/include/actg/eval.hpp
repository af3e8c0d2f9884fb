#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actg/parallel.hpp"
#include "actg/schema.hpp"

namespace actg::eval {

// Jensen-Shannon distance with base-2 logarithms, so the result lies in
// [0, 1] with 1 attained exactly on disjoint supports. Inputs must be valid
// distributions of equal dimension (unit sum within 1e-9).
double js_distance(std::span<const double> p, std::span<const double> q);

struct AttributeJsd {
  double mean = 0.0;
  std::vector<double> per_attribute;
};

// Per-attribute JS distance between the empirical feature distributions of
// two record sets, plus the unweighted mean over attributes. Feeding it
// different pairs of datasets yields the end-to-end, feature-learning, and
// conditional-generation errors respectively.
AttributeJsd attribute_jsd(const Schema& schema, std::span<const FeatureRecord> a,
                           std::span<const FeatureRecord> b);

// Text -> fixed-dimension vector. Implementations must be deterministic.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual void embed(const TextRecord& text, std::span<double> out) const = 0;
};

// Signed feature hashing over tokens, L2-normalized. The default stand-in
// embedding: cheap, deterministic, uses the whole text.
class HashedBowEmbedder : public Embedder {
 public:
  explicit HashedBowEmbedder(std::size_t dim = 256) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  void embed(const TextRecord& text, std::span<double> out) const override;

 private:
  std::size_t dim_;
};

// Row-major point matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

Matrix embed_corpus(std::span<const TextRecord> texts, const Embedder& embedder,
                    Exec exec = Exec::parallel);

struct KmeansResult {
  Matrix centroids;
  std::vector<std::uint32_t> assignments;
  int iterations = 0;
};

// Lloyd's algorithm with seeded k-means++ init. Assignment is the parallel
// kernel; accumulation runs serially in point order, so the result is
// identical for any thread count.
KmeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    int max_iterations = 100, Exec exec = Exec::parallel);

// Area under the divergence frontier of two histograms: points
// (exp(-c KL(Q||M)), exp(-c KL(P||M))) over 99 mixtures M = l P + (1-l) Q,
// with the (1,0) and (0,1) extremes appended. Natural-log KL.
double frontier_score(std::span<const double> p, std::span<const double> q, double c);

struct MauveOptions {
  std::size_t cluster_count = 0;  // 0 -> default_cluster_count(|texts_b|)
  double scaling = 5.0;
  std::uint64_t seed = 1;
  int kmeans_iterations = 100;
  Exec exec = Exec::parallel;
};

// A tenth of the synthetic corpus size.
std::size_t default_cluster_count(std::size_t synthetic_size);

// Divergence-frontier score between two corpora over jointly k-means
// quantized embeddings. Histograms get additive smoothing 1e-6.
double mauve_lite(std::span<const TextRecord> texts_a, std::span<const TextRecord> texts_b,
                  const Embedder& embedder, const MauveOptions& options);

struct LengthStats {
  double median = 0.0;
  double mean = 0.0;
  double p10 = 0.0;
  // Share of texts shorter than a quarter of the reference median.
  double collapse_fraction = 0.0;
};

LengthStats length_stats(std::span<const TextRecord> texts, double reference_median);

using FeatureExtractor = std::function<std::optional<FeatureRecord>(const TextRecord&)>;

struct IfaccReport {
  double mean = 0.0;
  std::vector<double> per_attribute_match;
  std::size_t failures = 0;
};

struct GeneratedPair {
  FeatureRecord feature;
  TextRecord text;
};

// Mean instruction-following accuracy of generated texts against their input
// features, plus per-attribute exact-match rates. Extraction failures score 0.
IfaccReport dataset_ifacc(std::span<const GeneratedPair> pairs,
                          const FeatureExtractor& extractor, const Schema& schema);

struct MetricReport {
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<double>> per_attribute;
  std::map<std::string, std::string> metadata;
};

std::string metric_report_json(const MetricReport& report);
// Flat CSV emission for run aggregation: header + single data row.
std::string metric_report_csv_header(const MetricReport& report);
std::string metric_report_csv_row(const MetricReport& report);
void save_metric_report(const std::string& json_path, const std::string& csv_path,
                        const MetricReport& report);

}  // namespace actg::eval
