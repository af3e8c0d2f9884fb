#include "actg/feature_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace actg::synth {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTargetFloor = 1e-8;

void check_query(const Schema& schema, const MarginalQuery& query) {
  if (query.attrs.empty() || query.attrs.size() > 2) {
    throw std::invalid_argument("marginal query must cover 1 or 2 attributes");
  }
  for (int a : query.attrs) {
    if (a < 0 || static_cast<std::size_t>(a) >= schema.attribute_count()) {
      throw std::invalid_argument("marginal query attribute out of range");
    }
  }
  if (query.attrs.size() == 2 && query.attrs[0] == query.attrs[1]) {
    throw std::invalid_argument("marginal query attributes must be distinct");
  }
}

std::size_t query_cells(const Schema& schema, const MarginalQuery& query) {
  std::size_t cells = 1;
  for (int a : query.attrs) cells *= schema.attribute(a).options.size();
  return cells;
}

// Normalized measurement target with a small positive floor so multiplicative
// updates never permanently zero a region.
std::vector<double> measurement_target(const Measurement& m) {
  std::vector<double> t = m.counts;
  double sum = 0.0;
  for (double v : t) sum += v;
  if (sum <= 0.0) {
    std::fill(t.begin(), t.end(), 1.0 / static_cast<double>(t.size()));
    return t;
  }
  for (double& v : t) v = std::max(v / sum, kTargetFloor);
  sum = 0.0;
  for (double v : t) sum += v;
  for (double& v : t) v /= sum;
  return t;
}

std::vector<double> measurement_distribution(const Measurement& m) {
  std::vector<double> t = m.counts;
  double sum = 0.0;
  for (double v : t) sum += v;
  if (sum <= 0.0) {
    std::fill(t.begin(), t.end(), 1.0 / static_cast<double>(t.size()));
    return t;
  }
  for (double& v : t) v /= sum;
  return t;
}

}  // namespace

MarginalModel::MarginalModel(const Schema& schema, std::size_t max_joint_cells)
    : schema_(schema) {
  const std::size_t k = schema_.attribute_count();
  strides_.assign(k, 1);
  std::size_t cells = 1;
  for (std::size_t i = k; i-- > 0;) {
    strides_[i] = cells;
    const std::size_t card = schema_.attribute(i).options.size();
    if (cells > max_joint_cells / card) {
      throw std::invalid_argument(
          "MarginalModel: schema product space exceeds the joint cell cap (" +
          std::to_string(max_joint_cells) + "); this synthesizer is desk-scale");
    }
    cells *= card;
  }
  theta_.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    theta_[i].assign(schema_.attribute(i).options.size(), 1.0);
  }
  joint_.assign(cells, 1.0 / static_cast<double>(cells));
}

void MarginalModel::decode_cell(std::size_t cell, std::span<std::int32_t> out) const {
  for (std::size_t i = 0; i < strides_.size(); ++i) {
    out[i] = static_cast<std::int32_t>((cell / strides_[i]) %
                                       schema_.attribute(i).options.size());
  }
}

std::vector<double> MarginalModel::marginal(const MarginalQuery& query) const {
  check_query(schema_, query);
  std::vector<double> marg(query_cells(schema_, query), 0.0);
  if (query.attrs.size() == 1) {
    const int a = query.attrs[0];
    const std::size_t card = schema_.attribute(a).options.size();
    for (std::size_t cell = 0; cell < joint_.size(); ++cell) {
      marg[(cell / strides_[a]) % card] += joint_[cell];
    }
  } else {
    const int a = query.attrs[0], b = query.attrs[1];
    const std::size_t card_a = schema_.attribute(a).options.size();
    const std::size_t card_b = schema_.attribute(b).options.size();
    for (std::size_t cell = 0; cell < joint_.size(); ++cell) {
      const std::size_t va = (cell / strides_[a]) % card_a;
      const std::size_t vb = (cell / strides_[b]) % card_b;
      marg[va * card_b + vb] += joint_[cell];
    }
  }
  return marg;
}

void MarginalModel::renormalize() {
  double sum = 0.0;
  for (double v : joint_) sum += v;
  if (!(sum > 0.0)) {
    throw std::runtime_error("MarginalModel: joint mass collapsed to zero");
  }
  const double inv = 1.0 / sum;
  for (double& v : joint_) v *= inv;
}

void MarginalModel::ipf_update(const MarginalQuery& query, std::span<const double> target,
                               double eta) {
  check_query(schema_, query);
  const std::vector<double> current = marginal(query);
  if (target.size() != current.size()) {
    throw std::invalid_argument("ipf_update: target size mismatch");
  }
  std::vector<double> ratio(current.size(), 1.0);
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (current[i] > 0.0) ratio[i] = std::pow(target[i] / current[i], eta);
  }

  if (query.attrs.size() == 1) {
    const int a = query.attrs[0];
    const std::size_t card = schema_.attribute(a).options.size();
    for (std::size_t v = 0; v < card; ++v) theta_[a][v] *= ratio[v];
    for (std::size_t cell = 0; cell < joint_.size(); ++cell) {
      joint_[cell] *= ratio[(cell / strides_[a]) % card];
    }
  } else {
    const int a = query.attrs[0], b = query.attrs[1];
    const std::size_t card_a = schema_.attribute(a).options.size();
    const std::size_t card_b = schema_.attribute(b).options.size();
    auto& psi = psi_[{a, b}];
    if (psi.empty()) psi.assign(card_a * card_b, 1.0);
    for (std::size_t i = 0; i < psi.size(); ++i) psi[i] *= ratio[i];
    for (std::size_t cell = 0; cell < joint_.size(); ++cell) {
      const std::size_t va = (cell / strides_[a]) % card_a;
      const std::size_t vb = (cell / strides_[b]) % card_b;
      joint_[cell] *= ratio[va * card_b + vb];
    }
  }
  renormalize();
}

double MarginalModel::objective() const {
  double obj = 0.0;
  for (const auto& m : measurements_) {
    const std::vector<double> model = marginal(m.query);
    const std::vector<double> measured = measurement_distribution(m);
    for (std::size_t i = 0; i < model.size(); ++i) {
      const double d = model[i] - measured[i];
      obj += d * d;
    }
  }
  return obj;
}

void MarginalModel::restore(State state) {
  theta_ = std::move(state.theta);
  psi_ = std::move(state.psi);
  joint_ = std::move(state.joint);
}

void MarginalModel::add_measurement(Measurement m) {
  check_query(schema_, m.query);
  if (m.counts.size() != query_cells(schema_, m.query)) {
    throw std::invalid_argument("add_measurement: cell count mismatch");
  }
  measurements_.push_back(std::move(m));
}

std::string MarginalModel::to_json() const {
  nlohmann::json doc;
  doc["schema_hash"] = schema_.hash();
  doc["rho_total"] = rho_total_ == kInf ? -1.0 : rho_total_;
  doc["rho_spent"] = rho_spent_ == kInf ? -1.0 : rho_spent_;
  doc["stopped_early"] = stopped_early_;
  doc["theta"] = theta_;
  nlohmann::json psi = nlohmann::json::array();
  for (const auto& [key, values] : psi_) {
    psi.push_back({{"a", key.first}, {"b", key.second}, {"values", values}});
  }
  doc["psi"] = std::move(psi);
  nlohmann::json meas = nlohmann::json::array();
  for (const auto& m : measurements_) {
    meas.push_back({{"attrs", m.query.attrs}, {"counts", m.counts}, {"sigma", m.sigma}});
  }
  doc["measurements"] = std::move(meas);
  return doc.dump();
}

MarginalModel MarginalModel::from_json(const std::string& text, const Schema& schema) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.at("schema_hash").get<std::uint64_t>() != schema.hash()) {
    throw std::runtime_error("MarginalModel: schema hash mismatch");
  }
  MarginalModel model(schema);
  const double rho_total = doc.at("rho_total").get<double>();
  const double rho_spent = doc.at("rho_spent").get<double>();
  model.rho_total_ = rho_total < 0.0 ? kInf : rho_total;
  model.rho_spent_ = rho_spent < 0.0 ? kInf : rho_spent;
  model.stopped_early_ = doc.at("stopped_early").get<bool>();
  model.theta_ = doc.at("theta").get<std::vector<std::vector<double>>>();
  for (const auto& entry : doc.at("psi")) {
    model.psi_[{entry.at("a").get<int>(), entry.at("b").get<int>()}] =
        entry.at("values").get<std::vector<double>>();
  }
  for (const auto& entry : doc.at("measurements")) {
    Measurement m;
    m.query.attrs = entry.at("attrs").get<std::vector<int>>();
    m.counts = entry.at("counts").get<std::vector<double>>();
    m.sigma = entry.at("sigma").get<double>();
    model.measurements_.push_back(std::move(m));
  }
  // Rebuild the joint from the factors.
  for (std::size_t cell = 0; cell < model.joint_.size(); ++cell) {
    std::vector<std::int32_t> values(schema.attribute_count());
    model.decode_cell(cell, values);
    double v = 1.0;
    for (std::size_t k = 0; k < values.size(); ++k) v *= model.theta_[k][values[k]];
    for (const auto& [key, psi] : model.psi_) {
      const std::size_t card_b = schema.attribute(key.second).options.size();
      v *= psi[values[key.first] * card_b + values[key.second]];
    }
    model.joint_[cell] = v;
  }
  model.renormalize();
  return model;
}

void MarginalModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << to_json() << "\n";
}

MarginalModel MarginalModel::load(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), schema);
}

std::size_t exp_mech_select(std::span<const double> qualities, double eps_sel,
                            double sensitivity, Rng& rng) {
  if (qualities.empty()) throw std::invalid_argument("exp_mech_select: no candidates");
  if (!(sensitivity > 0.0)) {
    throw std::invalid_argument("exp_mech_select: sensitivity must be > 0");
  }
  double best = -kInf;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < qualities.size(); ++i) {
    if (!std::isfinite(qualities[i])) {
      throw std::invalid_argument("exp_mech_select: non-finite quality at index " +
                                  std::to_string(i));
    }
    if (qualities[i] > best) {
      best = qualities[i];
      best_idx = i;
    }
  }
  if (std::isinf(eps_sel)) return best_idx;

  std::vector<double> weights(qualities.size());
  const double scale = eps_sel / (2.0 * sensitivity);
  for (std::size_t i = 0; i < qualities.size(); ++i) {
    weights[i] = std::exp(scale * (qualities[i] - best));
  }
  return rng.categorical(weights);
}

namespace {

std::vector<double> private_counts(std::span<const FeatureRecord> features,
                                   const Schema& schema, const MarginalQuery& query) {
  std::vector<double> counts(query_cells(schema, query), 0.0);
  if (query.attrs.size() == 1) {
    const int a = query.attrs[0];
    for (const auto& rec : features) counts[rec.values[a]] += 1.0;
  } else {
    const int a = query.attrs[0], b = query.attrs[1];
    const std::size_t card_b = schema.attribute(b).options.size();
    for (const auto& rec : features) {
      counts[static_cast<std::size_t>(rec.values[a]) * card_b + rec.values[b]] += 1.0;
    }
  }
  return counts;
}

// Damped IPF passes over every stored measurement, backtracking on the
// squared-error objective so it never increases across sweeps.
void refit(MarginalModel& model, int max_sweeps, double tolerance) {
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double before = model.objective();
    const MarginalModel::State saved = model.snapshot();

    double eta = 1.0;
    bool accepted = false;
    double after = before;
    for (int attempt = 0; attempt < 9; ++attempt) {
      for (const auto& m : model.measurements()) {
        model.ipf_update(m.query, measurement_target(m), eta);
      }
      after = model.objective();
      if (after <= before + 1e-15) {
        accepted = true;
        break;
      }
      model.restore(saved);
      eta *= 0.5;
    }
    if (!accepted) break;  // model already restored to the pre-sweep state
    if (before - after < tolerance * std::max(1.0, before)) break;
  }
}

}  // namespace

MarginalModel aim_fit(std::span<const FeatureRecord> features, const Schema& schema,
                      double rho_total, std::uint64_t seed, const AimOptions& options) {
  if (features.empty()) throw std::invalid_argument("aim_fit: empty feature set");
  if (!(rho_total > 0.0)) throw std::invalid_argument("aim_fit: rho_total must be > 0");
  for (std::size_t i = 0; i < features.size(); ++i) validate_record(schema, features[i]);

  const std::size_t k = schema.attribute_count();
  const int rounds = options.rounds > 0 ? options.rounds : static_cast<int>(3 * k);
  const bool noiseless = std::isinf(rho_total);

  // Workload: every 1-way and 2-way marginal.
  std::vector<MarginalQuery> workload;
  for (std::size_t a = 0; a < k; ++a) workload.push_back({{static_cast<int>(a)}});
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      workload.push_back({{static_cast<int>(a), static_cast<int>(b)}});
    }
  }
  std::vector<std::vector<double>> priv;
  priv.reserve(workload.size());
  for (const auto& q : workload) priv.push_back(private_counts(features, schema, q));

  MarginalModel model(schema, options.max_joint_cells);
  model.set_budget(rho_total);

  // Equal shares per round, half to selection, half to measurement.
  const double rho_share = noiseless ? 0.0 : rho_total / (2.0 * rounds);
  const double sigma_round = noiseless ? 0.0 : std::sqrt(1.0 / (2.0 * rho_share));
  const double eps_sel = noiseless ? kInf : std::sqrt(8.0 * rho_share);
  const double n = static_cast<double>(features.size());

  Rng select_rng(derive_seed(seed, "aim-select"));
  Rng noise_rng(derive_seed(seed, "aim-noise"));

  for (int round = 0; round < rounds; ++round) {
    if (!noiseless &&
        model.rho_spent() + 2.0 * rho_share > rho_total * (1.0 + 1e-9)) {
      model.mark_stopped_early();
      break;
    }

    std::vector<double> qualities(workload.size());
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const std::vector<double> marg = model.marginal(workload[i]);
      double gap = 0.0;
      for (std::size_t c = 0; c < marg.size(); ++c) {
        gap += std::abs(priv[i][c] - n * marg[c]);
      }
      qualities[i] = gap - std::sqrt(static_cast<double>(marg.size())) * sigma_round;
    }
    const std::size_t chosen = exp_mech_select(qualities, eps_sel, 1.0, select_rng);
    model.spend(rho_share);

    Measurement m;
    m.query = workload[chosen];
    m.sigma = sigma_round;
    m.counts = priv[chosen];
    if (sigma_round > 0.0) {
      for (double& c : m.counts) c += sigma_round * noise_rng.gaussian();
    }
    for (double& c : m.counts) c = std::max(c, 0.0);
    model.add_measurement(std::move(m));
    model.spend(rho_share);

    refit(model, options.max_ipf_sweeps, options.ipf_tolerance);
  }
  return model;
}

std::vector<FeatureRecord> aim_sample(const MarginalModel& model, std::size_t n,
                                      std::uint64_t seed) {
  const auto& joint = model.joint();
  std::vector<double> cdf(joint.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    acc += joint[i];
    cdf[i] = acc;
  }
  cdf.back() = 1.0;

  Rng rng(derive_seed(seed, "aim-sample"));
  const std::size_t k = model.schema().attribute_count();
  std::vector<FeatureRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const std::size_t cell = static_cast<std::size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    out[i].values.resize(k);
    model.decode_cell(std::min(cell, joint.size() - 1), out[i].values);
  }
  return out;
}

DpHistogram dp_histogram_fit(std::span<const FeatureRecord> features, const Schema& schema,
                             std::size_t attribute, double sigma, double threshold,
                             std::uint64_t seed) {
  if (attribute >= schema.attribute_count()) {
    throw std::invalid_argument("dp_histogram_fit: attribute out of range");
  }
  const std::size_t card = schema.attribute(attribute).options.size();
  DpHistogram hist;
  hist.sigma = sigma;
  hist.threshold = threshold;
  hist.noisy_counts.assign(card, 0.0);
  for (const auto& rec : features) {
    validate_record(schema, rec);
    hist.noisy_counts[rec.values[attribute]] += 1.0;
  }
  if (sigma > 0.0) {
    Rng rng(derive_seed(seed, "dp-histogram"));
    for (double& c : hist.noisy_counts) c += sigma * rng.gaussian();
  }
  hist.probs.assign(card, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < card; ++i) {
    if (hist.noisy_counts[i] > threshold) {
      hist.probs[i] = hist.noisy_counts[i];
      sum += hist.probs[i];
    }
  }
  if (!(sum > 0.0)) {
    throw std::runtime_error(
        "dp_histogram_fit: noise-dominated histogram, every bin fell at or below "
        "the threshold");
  }
  for (double& p : hist.probs) p /= sum;
  return hist;
}

std::vector<std::int32_t> histogram_sample(const DpHistogram& hist, std::size_t n,
                                           std::uint64_t seed) {
  Rng rng(derive_seed(seed, "histogram-sample"));
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<std::int32_t>(rng.categorical(hist.probs));
  }
  return out;
}

HistogramModel histogram_fit_budget(std::span<const FeatureRecord> features,
                                    const Schema& schema, double rho_total,
                                    std::uint64_t seed, double threshold) {
  if (!(rho_total > 0.0)) {
    throw std::invalid_argument("histogram_fit_budget: rho_total must be > 0");
  }
  HistogramModel model;
  model.rho_total = rho_total;
  const std::size_t k = schema.attribute_count();
  // rho_total / K per attribute; sigma from rho = 1 / (2 sigma^2).
  const double sigma = std::isinf(rho_total)
                           ? 0.0
                           : std::sqrt(static_cast<double>(k) / (2.0 * rho_total));
  for (std::size_t a = 0; a < k; ++a) {
    model.per_attribute.push_back(dp_histogram_fit(
        features, schema, a, sigma, threshold, derive_seed(seed, "histogram-attr", a)));
  }
  return model;
}

std::vector<FeatureRecord> histogram_model_sample(const HistogramModel& model,
                                                  std::size_t n, std::uint64_t seed) {
  const std::size_t k = model.per_attribute.size();
  std::vector<FeatureRecord> out(n);
  Rng rng(derive_seed(seed, "histogram-model-sample"));
  for (std::size_t i = 0; i < n; ++i) {
    out[i].values.resize(k);
    for (std::size_t a = 0; a < k; ++a) {
      out[i].values[a] =
          static_cast<std::int32_t>(rng.categorical(model.per_attribute[a].probs));
    }
  }
  return out;
}

}  // namespace actg::synth
