#pragma once

#include <cstddef>
#include <vector>

#include "wgf/energy.hpp"
#include "wgf/jko.hpp"
#include "wgf/measure.hpp"

namespace wgf {

// Three-branch dynamic-cost integrand: |x|^p / (p t^{p-1}) for t > 0,
// 0 at (0,0), +inf otherwise. Total into the extended reals.
double bp_value(double t, double x, double p);

struct SlopeEval {
  double value = 0.0;            // (1/q) int |grad L_f(rho)/rho|^q d rho
  double value_via_fprime = 0.0; // same through grad f'(rho); must agree
};
// Central differences on interior cells, one-sided second order at support
// edges; cells below 1e-12 * max rho are excluded (integrand extended by 0).
SlopeEval slope_term(const GridDensity& rho, const DerivedEnergy& energy, double q);

struct StepLedger {
  std::size_t k = 0;
  double t = 0.0;
  double energy = 0.0;          // F(rho_k), quantile form, effective energy
  double transport_term = 0.0;  // W_p^p / (p tau^{p-1}) of step k-1 -> k
  double slope_term = 0.0;      // Gauss mean over s of the grid slope functional
  double kinetic_term = 0.0;    // (1/p)(1/m) sum |v_i|^p
  double edi_precursor_residual = 0.0;
  double tv = 0.0;
  double renyi_beta = 0.0;      // int rho^beta (or int rho log rho at beta = 1)
  double lalpha = 0.0;          // int rho^alpha; entropy at alpha = 1; NaN if void
  double young_gap_term = 0.0;  // tau * int [a v + |a|^q/q + |v|^p/p] d rho
};

struct RunReport {
  std::vector<StepLedger> rows;     // row 0 = initial state, rows 1..K = steps
  double F0 = 0.0, FT = 0.0;
  double edi_global_residual = 0.0; // F0 - FT - sum(slope + kinetic) integrals
  double young_gap_total = 0.0;
  double law_residual_total = 0.0;  // sum tau * int |v + (grad L_f/rho)^{q-1}|^p d rho
  ExponentSet exps;
  double tolerance = 0.0;           // max(1e-7, 10 inner_tol) * (1 + |F0|)
};

// Assembles the discrete energy-dissipation ledger: slope terms on De Giorgi
// interpolants (8 Gauss points in s per step), kinetic terms from the
// geodesic velocity; the per-step precursor uses the W_p identity.
RunReport edi_report(const Trajectory& traj, int d, std::size_t grid_n);

struct YoungReport {
  double gap_total = 0.0;
  double law_residual_total = 0.0;
  std::vector<double> per_step;
};
// Nonnegative chain-rule gap sum_k tau int [a v + |a|^q/q + |v|^p/p] d rho
// with a = grad L_f(rho)/rho on the density grid and v transferred from the
// mass cells by the monotone rearrangement.
YoungReport young_gap(const Trajectory& traj, std::size_t grid_n);

struct FlowInterchangeReport {
  double beta = 0.0;
  std::vector<double> values;  // k -> int rho_k^beta/(beta-1) (entropy at beta=1)
  bool monotone = false;
  double max_violation = 0.0;
  double dissipation = 0.0;    // sum_k tau int |grad h_beta(rho_k)|^q dx
  bool budget_applicable = false;
  double alpha = 0.0;
  double budget_lhs = 0.0, budget_rhs = 0.0, budget_slack = 0.0;
};
FlowInterchangeReport flow_interchange_check(const Trajectory& traj, double beta, int d,
                                             std::size_t grid_n);

struct BVReport {
  std::vector<double> tv;
  bool monotone = false;
  double max_violation = 0.0;
  double sup_scaled = 0.0;    // sup_k TV(rho_k) (k tau)^{1/q}
  double fitted_slope = 0.0;  // log TV vs log t over the first decade
};
BVReport bv_checks(const Trajectory& traj, std::size_t grid_n);

struct Step2Report {
  bool holds = false;
  double max_ratio = 0.0;     // max over cells of |grad L_f2| / (rho^{(q-1)/q} |grad h|)
  double integral_lhs = 0.0;  // int |grad L_f2|^q / rho^{q-1}
  double integral_rhs = 0.0;  // int |grad h|^q
};
// Pointwise bound |grad L_f2(rho)| <= rho^{(q-1)/q} |grad h(rho)| on interior
// cells, with f2 from decompose_truncated and h from reg_h_prime.
Step2Report step2_bound_check(const GridDensity& rho, const EnergySpec& spec, double p, int d,
                              double z0, double z1);

// Transfer of mass-cell velocities to the density grid (mass-weighted).
std::vector<double> velocity_on_grid(const QuantileRep& layout, const std::vector<double>& v_cells,
                                     const GridDensity& rho);

double renyi_integral(const GridDensity& rho, double beta);  // 0 log 0 = 0 at beta = 1

}  // namespace wgf
