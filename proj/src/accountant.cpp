#include "actg/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace actg::accountant {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> build_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 36; ++i) grid.push_back(1.25 + 0.25 * i);  // 1.25 .. 10.0
  for (int a = 11; a <= 64; ++a) grid.push_back(a);
  for (int a : {80, 96, 128, 160, 192, 256, 320, 384, 448, 512}) grid.push_back(a);
  return grid;
}

double log_sum_exp(std::span<const double> xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log of sum_{j=0}^{a} C(a,j) (1-q)^{a-j} q^j exp(j(j-1)/(2 sigma^2)),
// divided by (a - 1). Valid for integer a >= 2, 0 < q < 1.
double subsampled_integer_order(double sigma, double q, int a) {
  std::vector<double> terms(a + 1);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv_2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j <= a; ++j) {
    terms[j] = log_binom(a, j) + (a - j) * log_1mq + j * log_q +
               static_cast<double>(j) * (j - 1) * inv_2s2;
  }
  const double lse = log_sum_exp(terms);
  // The sum is >= 1, so lse >= 0 mathematically; clamp rounding dust.
  return std::max(0.0, lse) / (a - 1);
}

}  // namespace

const std::vector<double>& alpha_grid() {
  static const std::vector<double> grid = build_grid();
  return grid;
}

RdpCurve::RdpCurve() : eps(alpha_grid().size(), 0.0) {}

RdpCurve& RdpCurve::operator+=(const RdpCurve& other) {
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] += other.eps[i];
  return *this;
}

RdpCurve operator+(RdpCurve a, const RdpCurve& b) {
  a += b;
  return a;
}

MechanismSpec gaussian_mechanism(double sigma, std::int64_t steps, std::string label) {
  MechanismSpec s;
  s.kind = MechanismKind::gaussian;
  s.sigma = sigma;
  s.steps = steps;
  s.label = std::move(label);
  return s;
}

MechanismSpec subsampled_gaussian_mechanism(double sigma, double q, std::int64_t steps,
                                            std::string label) {
  MechanismSpec s;
  s.kind = MechanismKind::subsampled_gaussian;
  s.sigma = sigma;
  s.q = q;
  s.steps = steps;
  s.label = std::move(label);
  return s;
}

MechanismSpec zcdp_mechanism(double rho, std::int64_t steps, std::string label) {
  MechanismSpec s;
  s.kind = MechanismKind::zcdp;
  s.rho = rho;
  s.steps = steps;
  s.label = std::move(label);
  return s;
}

MechanismSpec no_noise_mechanism(std::string label) {
  MechanismSpec s;
  s.kind = MechanismKind::none;
  s.steps = 1;
  s.label = std::move(label);
  return s;
}

double zcdp_rdp(double rho, double alpha) {
  if (!(rho >= 0.0)) throw std::invalid_argument("zcdp_rdp: rho must be >= 0");
  if (!(alpha > 1.0)) throw std::invalid_argument("zcdp_rdp: alpha must be > 1");
  return rho * alpha;
}

double gaussian_rdp(double sigma, double alpha) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_rdp: sigma must be > 0");
  // Defined through the zCDP identity rho = 1/(2 sigma^2) so the two agree
  // bit for bit on every order.
  return zcdp_rdp(1.0 / (2.0 * sigma * sigma), alpha);
}

double subsampled_gaussian_rdp(double sigma, double q, double alpha) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: sigma must be > 0");
  }
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: q must lie in [0, 1]");
  }
  if (!(alpha > 1.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: alpha must be > 1");
  }
  if (q == 0.0) return 0.0;
  if (q == 1.0) return gaussian_rdp(sigma, alpha);

  auto at_integer = [&](int a) { return subsampled_integer_order(sigma, q, a); };

  if (alpha < 2.0) {
    // No expansion below order 2; both candidates are valid upper bounds.
    return std::min(at_integer(2), gaussian_rdp(sigma, alpha));
  }
  const double fl = std::floor(alpha);
  const int lo = static_cast<int>(fl);
  if (alpha == fl) return at_integer(lo);
  const double e_lo = at_integer(lo);
  const double e_hi = at_integer(lo + 1);
  return e_lo + (e_hi - e_lo) * (alpha - fl);
}

RdpCurve mechanism_curve(const MechanismSpec& spec) {
  if (spec.steps < 1) throw std::invalid_argument("mechanism_curve: steps must be >= 1");
  RdpCurve curve;
  const auto& grid = alpha_grid();
  const double t = static_cast<double>(spec.steps);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double e = 0.0;
    switch (spec.kind) {
      case MechanismKind::gaussian:
        e = gaussian_rdp(spec.sigma, grid[i]);
        break;
      case MechanismKind::subsampled_gaussian:
        e = subsampled_gaussian_rdp(spec.sigma, spec.q, grid[i]);
        break;
      case MechanismKind::zcdp:
        e = zcdp_rdp(spec.rho, grid[i]);
        break;
      case MechanismKind::none:
        e = 0.0;
        break;
    }
    curve.eps[i] = t * e;
  }
  return curve;
}

RdpCurve compose(std::span<const MechanismSpec> specs) {
  if (specs.empty()) throw std::invalid_argument("compose: empty mechanism list");
  RdpCurve total;
  for (const auto& spec : specs) total += mechanism_curve(spec);
  return total;
}

DpResult rdp_to_dp(const RdpCurve& curve, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("rdp_to_dp: delta must lie in (0, 1)");
  }
  const auto& grid = alpha_grid();
  if (curve.eps.size() != grid.size()) {
    throw std::invalid_argument("rdp_to_dp: curve not on the shared grid");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  DpResult best{kInf, 0.0};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = curve.eps[i] + log_inv_delta / (grid[i] - 1.0);
    if (e < best.epsilon) best = {e, grid[i]};
  }
  return best;
}

double delta_rule(double n) {
  // Need n ln n > 1 for a valid delta in (0, 1).
  if (!(n > 1.0) || !(n * std::log(n) > 1.0)) {
    throw std::invalid_argument("delta_rule: n too small for a valid delta");
  }
  return 1.0 / (n * std::log(n));
}

namespace {

double account_subsampled(double sigma, double q, std::int64_t steps, double delta) {
  const MechanismSpec spec = subsampled_gaussian_mechanism(sigma, q, steps);
  return rdp_to_dp(mechanism_curve(spec), delta).epsilon;
}

}  // namespace

double calibrate_sigma(double target_eps, double delta, double q, std::int64_t steps) {
  if (std::isinf(target_eps)) return 0.0;  // no-noise sentinel; clipping still applies
  if (!(target_eps > 0.0)) {
    throw std::invalid_argument("calibrate_sigma: target epsilon must be > 0");
  }
  constexpr double kSigmaLo = 0.3;
  constexpr double kSigmaHi = 1e4;
  const double band_lo = target_eps * (1.0 - 1e-3);

  double eps_at_lo = account_subsampled(kSigmaLo, q, steps, delta);
  if (eps_at_lo < band_lo) {
    throw std::runtime_error(
        "calibrate_sigma: target unreachable, even sigma = 0.3 spends only eps = " +
        std::to_string(eps_at_lo));
  }
  double eps_at_hi = account_subsampled(kSigmaHi, q, steps, delta);
  if (eps_at_hi > target_eps) {
    throw std::runtime_error(
        "calibrate_sigma: target unreachable, sigma = 1e4 still spends eps = " +
        std::to_string(eps_at_hi));
  }

  double lo = kSigmaLo, hi = kSigmaHi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double eps = account_subsampled(mid, q, steps, delta);
    if (eps >= band_lo && eps <= target_eps) return mid;
    if (eps > target_eps) {
      lo = mid;  // too little noise
    } else {
      hi = mid;
    }
  }
  throw std::runtime_error("calibrate_sigma: bisection failed to land in the band");
}

BudgetSplit split_budget(double total_eps, double delta, double ratio, double q,
                         std::int64_t steps) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("split_budget: ratio must lie in (0, 1)");
  }
  if (!(total_eps > 0.0)) {
    throw std::invalid_argument("split_budget: total epsilon must be > 0");
  }

  BudgetSplit out;
  const double stage1_target = ratio * total_eps;

  // Stage 1: monotone bisection on rho against the standalone guarantee.
  {
    double lo = 0.0, hi = 1e6;
    const double eps_hi =
        rdp_to_dp(mechanism_curve(zcdp_mechanism(hi)), delta).epsilon;
    if (eps_hi < stage1_target) {
      throw std::runtime_error("split_budget: stage 1 target beyond rho search range");
    }
    double rho = hi;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double eps =
          rdp_to_dp(mechanism_curve(zcdp_mechanism(mid)), delta).epsilon;
      if (eps >= stage1_target * (1.0 - 1e-3) && eps <= stage1_target) {
        rho = mid;
        break;
      }
      if (eps > stage1_target) {
        hi = mid;
      } else {
        lo = mid;
      }
      rho = mid;
    }
    out.rho_stage1 = rho;
    out.eps_stage1 =
        rdp_to_dp(mechanism_curve(zcdp_mechanism(rho)), delta).epsilon;
    if (out.eps_stage1 > stage1_target * 1.01) {
      throw std::runtime_error("split_budget: stage 1 (zCDP) calibration is binding");
    }
  }

  // Stage 2: bisection on sigma against the composed guarantee.
  constexpr double kSigmaLo = 0.3;
  constexpr double kSigmaHi = 1e4;
  auto composed_eps = [&](double sigma) {
    const MechanismSpec specs[] = {
        zcdp_mechanism(out.rho_stage1),
        subsampled_gaussian_mechanism(sigma, q, steps),
    };
    return rdp_to_dp(compose(specs), delta).epsilon;
  };

  const double band_lo = total_eps * (1.0 - 1e-3);
  if (composed_eps(kSigmaLo) < band_lo) {
    // Even the smallest admissible noise cannot spend the remaining budget;
    // stay under it rather than fail.
    out.sigma_stage2 = kSigmaLo;
  } else if (composed_eps(kSigmaHi) > total_eps) {
    if (rdp_to_dp(mechanism_curve(zcdp_mechanism(out.rho_stage1)), delta).epsilon >
        total_eps) {
      throw std::runtime_error("split_budget: infeasible, stage 1 (zCDP) is binding");
    }
    throw std::runtime_error(
        "split_budget: infeasible, stage 2 (subsampled Gaussian) is binding");
  } else {
    double lo = kSigmaLo, hi = kSigmaHi, sigma = kSigmaHi;
    bool landed = false;
    for (int it = 0; it < 200 && !landed; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double eps = composed_eps(mid);
      if (eps >= band_lo && eps <= total_eps) {
        sigma = mid;
        landed = true;
      } else if (eps > total_eps) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    if (!landed) {
      throw std::runtime_error("split_budget: sigma bisection failed to converge");
    }
    out.sigma_stage2 = sigma;
  }
  out.sigma_capped = (out.sigma_stage2 == kSigmaLo || out.sigma_stage2 == kSigmaHi);
  out.eps_stage2 =
      rdp_to_dp(mechanism_curve(
                    subsampled_gaussian_mechanism(out.sigma_stage2, q, steps)),
                delta)
          .epsilon;
  out.eps_composed = composed_eps(out.sigma_stage2);
  return out;
}

void PrivacySpend::charge(MechanismSpec spec) {
  if (spec.kind == MechanismKind::none) no_noise = true;
  ledger.push_back(std::move(spec));
  if (delta > 0.0) epsilon = account().epsilon;
}

DpResult PrivacySpend::account() const {
  if (ledger.empty()) return {0.0, 0.0};
  return rdp_to_dp(compose(ledger), delta);
}

std::string kind_name(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::gaussian: return "gaussian";
    case MechanismKind::subsampled_gaussian: return "subsampled_gaussian";
    case MechanismKind::zcdp: return "zcdp";
    case MechanismKind::none: return "none";
  }
  return "unknown";
}

std::string ledger_to_json(const PrivacySpend& spend) {
  nlohmann::json doc;
  doc["delta"] = spend.delta;
  doc["no_noise"] = spend.no_noise;
  nlohmann::json mechs = nlohmann::json::array();
  for (const auto& spec : spend.ledger) {
    nlohmann::json m;
    m["kind"] = kind_name(spec.kind);
    m["steps"] = spec.steps;
    if (!spec.label.empty()) m["label"] = spec.label;
    switch (spec.kind) {
      case MechanismKind::gaussian:
        m["sigma"] = spec.sigma;
        break;
      case MechanismKind::subsampled_gaussian:
        m["sigma"] = spec.sigma;
        m["q"] = spec.q;
        break;
      case MechanismKind::zcdp:
        m["rho"] = spec.rho;
        break;
      case MechanismKind::none:
        break;
    }
    mechs.push_back(std::move(m));
  }
  doc["mechanisms"] = std::move(mechs);
  doc["alpha_grid"] = alpha_grid();
  if (!spend.ledger.empty() && spend.delta > 0.0) {
    const DpResult res = spend.account();
    doc["epsilon"] = res.epsilon;
    doc["best_alpha"] = res.best_alpha;
  } else {
    doc["epsilon"] = spend.epsilon;
    doc["best_alpha"] = 0.0;
  }
  return doc.dump(2);
}

void save_ledger(const std::string& path, const PrivacySpend& spend) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ledger file: " + path);
  out << ledger_to_json(spend) << "\n";
}

}  // namespace actg::accountant
