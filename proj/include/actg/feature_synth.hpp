#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "actg/rng.hpp"
#include "actg/schema.hpp"

namespace actg::synth {

// A 1- or 2-way marginal over schema attributes.
struct MarginalQuery {
  std::vector<int> attrs;

  bool operator==(const MarginalQuery&) const = default;
};

struct Measurement {
  MarginalQuery query;
  std::vector<double> counts;  // noisy, clamped at 0
  double sigma = 0.0;
};

// DP-fitted joint estimate over the schema: per-attribute factors plus
// pairwise coupling factors (linear domain), with the normalized joint
// materialized explicitly. The materialization caps the product space; this
// synthesizer targets desk-scale schemas, not arbitrary ones.
class MarginalModel {
 public:
  MarginalModel(const Schema& schema, std::size_t max_joint_cells = 5'000'000);

  const Schema& schema() const { return schema_; }
  std::size_t cell_count() const { return joint_.size(); }
  const std::vector<double>& joint() const { return joint_; }

  // Distribution of the model over a 1- or 2-way query, row-major for pairs.
  std::vector<double> marginal(const MarginalQuery& query) const;

  // Multiplies the factor for the query by (target / current)^eta and
  // renormalizes the joint. target is a distribution over the query cells.
  void ipf_update(const MarginalQuery& query, std::span<const double> target,
                  double eta);

  // Sum over measurements of the squared L2 gap between the model marginal
  // and the measured (normalized) marginal.
  double objective() const;

  void add_measurement(Measurement m);
  const std::vector<Measurement>& measurements() const { return measurements_; }

  // Full fitting state (factors + joint) for backtracked IPF sweeps.
  struct State {
    std::vector<std::vector<double>> theta;
    std::map<std::pair<int, int>, std::vector<double>> psi;
    std::vector<double> joint;
  };
  State snapshot() const { return {theta_, psi_, joint_}; }
  void restore(State state);

  double rho_total() const { return rho_total_; }
  double rho_spent() const { return rho_spent_; }
  void set_budget(double rho_total) { rho_total_ = rho_total; }
  void spend(double rho) { rho_spent_ += rho; }
  bool stopped_early() const { return stopped_early_; }
  void mark_stopped_early() { stopped_early_ = true; }

  std::string to_json() const;
  static MarginalModel from_json(const std::string& text, const Schema& schema);
  void save(const std::string& path) const;
  static MarginalModel load(const std::string& path, const Schema& schema);

  // Cell index <-> per-attribute option values (mixed-radix decode).
  void decode_cell(std::size_t cell, std::span<std::int32_t> out) const;

 private:
  friend std::vector<FeatureRecord> aim_sample(const MarginalModel&, std::size_t,
                                               std::uint64_t);
  void renormalize();

  Schema schema_;
  std::vector<std::size_t> strides_;
  std::vector<std::vector<double>> theta_;          // per-attribute factors
  std::map<std::pair<int, int>, std::vector<double>> psi_;  // pairwise factors
  std::vector<double> joint_;                       // normalized probabilities
  std::vector<Measurement> measurements_;
  double rho_total_ = 0.0;
  double rho_spent_ = 0.0;
  bool stopped_early_ = false;
};

// Exponential mechanism: samples an index with probability proportional to
// exp(eps_sel * quality / (2 * sensitivity)). An infinite eps_sel selects the
// argmax (lowest index on ties).
std::size_t exp_mech_select(std::span<const double> qualities, double eps_sel,
                            double sensitivity, Rng& rng);

struct AimOptions {
  int rounds = 0;  // 0 -> 3 * attribute_count
  std::size_t max_joint_cells = 5'000'000;
  int max_ipf_sweeps = 200;
  double ipf_tolerance = 1e-9;
};

// Workload-adaptive marginal synthesizer over all 1- and 2-way marginals.
// Each round spends an equal share of rho_total, half on exponential-
// mechanism query selection and half on a Gaussian measurement, then refits
// the model by damped IPF. rho_total = infinity runs the no-noise sentinel
// path (exact measurements, argmax selection).
MarginalModel aim_fit(std::span<const FeatureRecord> features, const Schema& schema,
                      double rho_total, std::uint64_t seed, const AimOptions& options = {});

std::vector<FeatureRecord> aim_sample(const MarginalModel& model, std::size_t n,
                                      std::uint64_t seed);

// Single-axis noisy histogram: counts + N(0, sigma^2) per bin, bins at or
// below the threshold zeroed, remainder normalized. Throws when every bin is
// zeroed (noise-dominated histogram).
struct DpHistogram {
  std::vector<double> noisy_counts;
  std::vector<double> probs;
  double sigma = 10.0;
  double threshold = 0.0;
};

DpHistogram dp_histogram_fit(std::span<const FeatureRecord> features, const Schema& schema,
                             std::size_t attribute, double sigma, double threshold,
                             std::uint64_t seed);

std::vector<std::int32_t> histogram_sample(const DpHistogram& hist, std::size_t n,
                                           std::uint64_t seed);

// Independent per-attribute DP histograms at a shared zCDP budget (each
// attribute gets rho_total / K). The baseline stage-1 generator.
struct HistogramModel {
  std::vector<DpHistogram> per_attribute;
  double rho_total = 0.0;
};

HistogramModel histogram_fit_budget(std::span<const FeatureRecord> features,
                                    const Schema& schema, double rho_total,
                                    std::uint64_t seed, double threshold = 0.0);
std::vector<FeatureRecord> histogram_model_sample(const HistogramModel& model,
                                                  std::size_t n, std::uint64_t seed);

}  // namespace actg::synth
