#pragma once

#include <cstddef>
#include <vector>

#include "wgf/energy.hpp"
#include "wgf/jko.hpp"
#include "wgf/measure.hpp"

namespace wgf {

// Explicit conservative scheme for d_t rho = (|D|^{q-2} D)_x, D = (H(rho))_x,
// with no-flux boundaries. Shares no code path with the variational solver.
struct FDConfig {
  std::size_t n = 256;
  double cfl_safety = 0.4;  // <= 0.5
  double T = 5e-2;
  std::vector<double> snapshot_times;
  double grad_floor = 1e-12;  // degenerate-diffusion guard delta

  void validate() const;
};

struct FDSnapshot {
  double t = 0.0;
  GridDensity rho;
};

std::vector<FDSnapshot> fd_solve(const GridDensity& rho0, const EnergySpec& spec, double p,
                                 const FDConfig& config);

struct CompareRow {
  double t = 0.0;
  double l1 = 0.0;
  double wp = 0.0;
};
struct CompareReport {
  std::vector<CompareRow> rows;
  double max_l1 = 0.0;
  double max_wp = 0.0;
};

// Per snapshot: L1 distance between the piecewise-constant trajectory
// interpolant and the oracle density, plus W_p through quantiles.
CompareReport compare(const Trajectory& traj, const std::vector<FDSnapshot>& snapshots);

}  // namespace wgf
