#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace actg::accountant {

// Shared evaluation grid of Renyi orders: quarter steps on [1.25, 10], every
// integer up to 64, then a sparse tail out to 512. 100 points, all exactly
// representable.
const std::vector<double>& alpha_grid();

// Renyi-DP curve evaluated on alpha_grid(). eps[i] is the guarantee at
// alpha_grid()[i], in nats. Curves compose by pointwise addition.
struct RdpCurve {
  std::vector<double> eps;

  RdpCurve();
  RdpCurve& operator+=(const RdpCurve& other);
};

RdpCurve operator+(RdpCurve a, const RdpCurve& b);

enum class MechanismKind {
  gaussian,             // Gaussian mechanism, noise multiplier sigma, sensitivity 1
  subsampled_gaussian,  // Poisson-subsampled Gaussian, rate q
  zcdp,                 // rho-zCDP released mechanism
  none,                 // no-noise sentinel for the epsilon = infinity setting
};

struct MechanismSpec {
  MechanismKind kind = MechanismKind::gaussian;
  double sigma = 1.0;
  double q = 1.0;
  double rho = 0.0;
  std::int64_t steps = 1;
  std::string label;
};

MechanismSpec gaussian_mechanism(double sigma, std::int64_t steps = 1,
                                 std::string label = {});
MechanismSpec subsampled_gaussian_mechanism(double sigma, double q, std::int64_t steps,
                                            std::string label = {});
MechanismSpec zcdp_mechanism(double rho, std::int64_t steps = 1, std::string label = {});
MechanismSpec no_noise_mechanism(std::string label = {});

// Single-order evaluations. All require alpha > 1.
double gaussian_rdp(double sigma, double alpha);
double zcdp_rdp(double rho, double alpha);

// Upper bound for the Poisson-subsampled Gaussian. Exact formula applies at
// integer alpha >= 2; fractional orders above 2 are filled by linear
// interpolation between the bracketing integers, and orders below 2 take
// min(value at 2, unamplified Gaussian), both conservative.
double subsampled_gaussian_rdp(double sigma, double q, double alpha);

// Curve of one spec including its step count, on the shared grid.
RdpCurve mechanism_curve(const MechanismSpec& spec);

// Pointwise sum of all specs' curves, each multiplied by its step count.
RdpCurve compose(std::span<const MechanismSpec> specs);

struct DpResult {
  double epsilon = 0.0;
  double best_alpha = 0.0;
};

// (eps, delta) from an RDP curve: min over the grid of eps(alpha) +
// log(1/delta)/(alpha - 1). Reports the minimizing order.
DpResult rdp_to_dp(const RdpCurve& curve, double delta);

// delta = 1 / (n ln n). Requires n >= 3.
double delta_rule(double n);

// Smallest noise multiplier (within 0.1% of target) for T steps of the
// subsampled Gaussian at rate q. target_eps = infinity returns the sigma = 0
// sentinel. Throws if the target is unreachable within sigma in [0.3, 1e4].
double calibrate_sigma(double target_eps, double delta, double q, std::int64_t steps);

struct BudgetSplit {
  double rho_stage1 = 0.0;
  double sigma_stage2 = 0.0;
  double eps_stage1 = 0.0;    // standalone (eps, delta) of stage 1 alone
  double eps_stage2 = 0.0;    // standalone (eps, delta) of stage 2 alone
  double eps_composed = 0.0;  // joint guarantee of both stages
  bool sigma_capped = false;  // stage-2 search hit the upper sigma bound
};

// Splits a total budget between a zCDP stage and a T-step subsampled-Gaussian
// stage. Stage 1 is calibrated standalone to ratio * total_eps, then sigma is
// chosen so the composed guarantee lands in [total * (1 - 1e-3), total].
// Throws naming the binding stage when infeasible.
BudgetSplit split_budget(double total_eps, double delta, double ratio, double q,
                         std::int64_t steps);

// Append-only record of everything charged against the budget.
struct PrivacySpend {
  double epsilon = 0.0;
  double delta = 0.0;
  std::vector<MechanismSpec> ledger;
  bool no_noise = false;  // the epsilon = infinity sentinel path

  void charge(MechanismSpec spec);
  // Recomputes (epsilon, best alpha) from the ledger at the stored delta.
  DpResult account() const;
};

std::string ledger_to_json(const PrivacySpend& spend);
void save_ledger(const std::string& path, const PrivacySpend& spend);

std::string kind_name(MechanismKind kind);

}  // namespace actg::accountant
