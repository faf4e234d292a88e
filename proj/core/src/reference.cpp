#include "wgf/reference.hpp"

#include <algorithm>
#include <cmath>

namespace wgf {

void FDConfig::validate() const {
  if (n < 4) throw ConfigError("fd oracle needs n >= 4");
  if (!(cfl_safety > 0.0) || cfl_safety > 0.5)
    throw ConfigError("cfl_safety must lie in (0, 0.5]");
  if (!(T > 0.0)) throw ConfigError("T must be positive");
  for (double t : snapshot_times)
    if (t < 0.0 || t > T + 1e-12) throw ConfigError("snapshot times must lie in [0, T]");
}

std::vector<FDSnapshot> fd_solve(const GridDensity& rho0, const EnergySpec& spec, double p,
                                 const FDConfig& config) {
  config.validate();
  rho0.validate();
  const double q = conjugate_exponent(p);
  const FluxFunction flux = flux_h_prime(spec, p);

  const std::size_t n = config.n;
  GridDensity rho = rho0;
  if (rho.n() != n) {
    // Resample through the quantile representation when grids differ.
    rho = quantile_to_density(density_to_quantile(rho0, 4 * n), n);
  }
  const double dx = rho.dx();

  std::vector<double> snaps = config.snapshot_times;
  std::sort(snaps.begin(), snaps.end());
  if (snaps.empty() || snaps.back() < config.T) snaps.push_back(config.T);

  std::vector<FDSnapshot> out;
  if (!snaps.empty() && snaps.front() <= 0.0) {
    out.push_back({0.0, rho});
    snaps.erase(snaps.begin());
  }

  std::vector<double> u(n), D(n + 1, 0.0), phi(n + 1, 0.0), scale(n + 1, 1.0);
  double t = 0.0;
  std::size_t next_snap = 0;
  // For q < 2 the per-face |D|^{q-2} factor is singular at flat faces; faces
  // with |D| below the resolution floor carry negligible flux and are floored
  // at max(delta, dx^{3/2}) in the step-size rule.
  const double floor_q = q < 2.0 ? std::max(config.grad_floor, std::pow(dx, 1.5))
                                 : config.grad_floor;

  while (next_snap < snaps.size()) {
    for (std::size_t i = 0; i < n; ++i) u[i] = flux.H(rho.values[i]);
    double stiff = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      D[i + 1] = (u[i + 1] - u[i]) / dx;
      const double hp = flux.Hp(0.5 * (rho.values[i] + rho.values[i + 1]));
      const double dmag = std::max(std::abs(D[i + 1]), floor_q);
      const double s = std::pow(std::abs(hp), q - 1.0) * std::pow(dmag, q - 2.0);
      stiff = std::max(stiff, s);
    }
    D[0] = D[n] = 0.0;  // no-flux boundary faces

    double dt = config.cfl_safety * std::pow(dx, q) / (q * std::max(stiff, 1e-300));
    dt = std::min(dt, snaps[next_snap] - t);
    if (dt < 1e-12 && snaps[next_snap] - t > 1e-12)
      throw StiffnessError("explicit step size underflow at t=" + std::to_string(t));

    for (std::size_t i = 0; i <= n; ++i)
      phi[i] = (i == 0 || i == n || D[i] == 0.0)
                   ? 0.0
                   : std::pow(std::abs(D[i]), q - 2.0) * D[i];

    // Donor-cell flux limiting: outflow from a cell within one step is capped
    // at its content, applied as a per-face scale so conservation is exact.
    std::fill(scale.begin(), scale.end(), 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      // mass flux F = -phi; face i+1: F>0 drains cell i, face i: F<0 drains cell i
      double outflow = 0.0;
      if (-phi[i + 1] > 0.0) outflow += -phi[i + 1];
      if (-phi[i] < 0.0) outflow += phi[i];
      if (outflow <= 0.0) continue;
      const double cap = rho.values[i] * dx / dt;
      if (outflow > cap) {
        const double s = cap / outflow;
        if (-phi[i + 1] > 0.0) scale[i + 1] = std::min(scale[i + 1], s);
        if (-phi[i] < 0.0) scale[i] = std::min(scale[i], s);
      }
    }
    for (std::size_t i = 0; i <= n; ++i) phi[i] *= scale[i];

    for (std::size_t i = 0; i < n; ++i) {
      rho.values[i] += dt / dx * (phi[i + 1] - phi[i]);
      if (rho.values[i] < 0.0 && rho.values[i] > -1e-13) rho.values[i] = 0.0;
    }
    t += dt;

    if (t >= snaps[next_snap] - 1e-15) {
      out.push_back({snaps[next_snap], rho});
      ++next_snap;
    }
  }
  return out;
}

CompareReport compare(const Trajectory& traj, const std::vector<FDSnapshot>& snapshots) {
  if (traj.steps.empty()) throw IncompleteTrajectory("empty trajectory");
  CompareReport rep;
  const double tau = traj.config.tau;
  for (const auto& snap : snapshots) {
    const double a = snap.rho.a, b = snap.rho.b;
    if (std::abs(a - traj.steps.front().a) > 1e-14 * (b - a) ||
        std::abs(b - traj.steps.front().b) > 1e-14 * (b - a))
      throw MismatchError("oracle and trajectory domains differ");
    const double t_max = double(traj.step_count()) * tau;
    if (snap.t > t_max + 0.5 * tau)
      throw MismatchError("snapshot time beyond the trajectory horizon");

    const QuantileRep Xt = interpolate(traj, std::min(snap.t, t_max), Interp::Constant);
    const GridDensity jko = quantile_to_density(Xt, snap.rho.n());
    double l1 = 0.0;
    for (std::size_t i = 0; i < jko.n(); ++i)
      l1 += std::abs(jko.values[i] - snap.rho.values[i]) * jko.dx();
    const double wp =
        wasserstein_p(Xt, density_to_quantile(snap.rho, traj.config.m), traj.config.p);
    rep.rows.push_back({snap.t, l1, wp});
    rep.max_l1 = std::max(rep.max_l1, l1);
    rep.max_wp = std::max(rep.max_wp, wp);
  }
  return rep;
}

}  // namespace wgf
