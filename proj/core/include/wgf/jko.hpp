#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wgf/energy.hpp"
#include "wgf/measure.hpp"

namespace wgf {

struct SchemeConfig {
  double p = 2.0;
  double tau = 1e-3;
  double T = 5e-2;
  std::size_t m = 256;
  std::vector<double> eps_schedule;  // decreasing; empty = direct unregularized solve
  double inner_tol = 1e-9;           // KKT residual bound
  int inner_max_iter = 200;

  void validate() const;
  std::size_t step_count() const;  // ceil(T / tau)
};

struct StepResult {
  QuantileRep next;
  double objective = 0.0;       // J at the minimizer
  double transport_term = 0.0;  // W_p^p / (p tau_eff^{p-1})
  double kkt_residual = 0.0;
  double multiplier = 0.0;      // discrete optimality constant C
  int iterations = 0;
  bool converged = true;
  bool lo_active = false, hi_active = false;  // endpoint box constraints at the solution
  // (eps, W_p to previous eps-solution) pairs recorded by the continuation.
  std::vector<std::pair<double, double>> continuation;
};

// One minimizing-movement step at effective step tau_eff with entropy
// regularization eps (eps = 0 requires a value or slope barrier in G).
StepResult jko_step(const QuantileRep& prev, const EnergySpec& spec, double p, double tau_eff,
                    double eps, double inner_tol = 1e-9, int max_iter = 200);

// Warm-started sweep down the schedule; appends a final eps = 0 polish when
// the energy is self-barriered.
StepResult epsilon_continuation(const QuantileRep& prev, const EnergySpec& spec, double p,
                                double tau_eff, std::span<const double> eps_schedule,
                                double inner_tol = 1e-9, int max_iter = 200);

// Intermediate minimizer with effective step s*tau; s = 1 is the scheme step.
StepResult degiorgi_step(const QuantileRep& prev, const EnergySpec& spec, double p, double tau,
                         double s, double eps, double inner_tol = 1e-9, int max_iter = 200);

struct Trajectory {
  SchemeConfig config;
  EnergySpec spec;            // base energy
  double effective_eps = 0.0; // regularization the stored minimizers solve for
  std::vector<QuantileRep> steps;    // rho_k at t = k tau, k = 0..K
  std::vector<StepResult> results;   // per step k -> k+1
  bool aborted = false;
  std::string abort_reason;

  std::size_t step_count() const { return results.size(); }
  // Energy spec the stored states actually minimize (base + effective eps).
  EnergySpec effective_spec() const;
};

Trajectory run_scheme(const GridDensity& rho0, const SchemeConfig& config, const EnergySpec& spec);

enum class Interp { Constant, Geodesic, DeGiorgi };

QuantileRep interpolate(const Trajectory& traj, double t, Interp kind);

// Per-cell displacement rate (Xbar^{k+1}_i - Xbar^k_i)/tau on the m mass
// cells; (1/m) sum |v_i|^p tau^p = W_p^p(rho_k, rho_{k+1}) exactly.
std::vector<double> velocity(const Trajectory& traj, std::size_t k);

}  // namespace wgf
