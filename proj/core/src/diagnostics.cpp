#include "wgf/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace wgf {

namespace {

constexpr double kGaussNodes8[8] = {-0.9602898564975363, -0.7966664774136267,
                                    -0.5255324099163290, -0.1834346424956498,
                                    0.1834346424956498,  0.5255324099163290,
                                    0.7966664774136267,  0.9602898564975363};
constexpr double kGaussWeights8[8] = {0.1012285362903763, 0.2223810344533745,
                                      0.3137066458778873, 0.3626837833783620,
                                      0.3626837833783620, 0.3137066458778873,
                                      0.2223810344533745, 0.1012285362903763};

double spow(double x, double e) {
  if (x == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(x), e), x);
}

// Per-cell gradient of composed values val(rho_i) with support masking:
// central differences inside, one-sided second order at support edges,
// below-threshold cells excluded (gradient 0, mask false).
struct MaskedGradient {
  std::vector<double> grad;
  std::vector<bool> mask;
};

MaskedGradient masked_gradient(const GridDensity& rho,
                               const std::function<double(double)>& val) {
  const std::size_t n = rho.n();
  const double dx = rho.dx();
  double rho_max = 0.0;
  for (double v : rho.values) rho_max = std::max(rho_max, v);
  const double thresh = 1e-12 * rho_max;

  MaskedGradient out;
  out.grad.assign(n, 0.0);
  out.mask.assign(n, false);

  std::size_t i = 0;
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  while (i < n) {
    if (rho.values[i] <= thresh) {
      ++i;
      continue;
    }
    std::size_t l = i;
    while (i < n && rho.values[i] > thresh) ++i;
    runs.emplace_back(l, i - 1);
  }
  if (runs.empty()) return out;

  // A single-cell vacuum between support runs with a jump in the composed
  // values carries an unbounded integrand; wider vacua extend by zero.
  for (std::size_t k = 0; k + 1 < runs.size(); ++k) {
    const std::size_t hole_l = runs[k].second + 1, hole_r = runs[k + 1].first - 1;
    if (hole_r == hole_l) {
      const double vl = val(rho.values[runs[k].second]);
      const double vr = val(rho.values[runs[k + 1].first]);
      const double scale = 1.0 + std::max(std::abs(vl), std::abs(vr));
      if (std::abs(vr - vl) > 1e-8 * scale)
        throw DomainError("integrand not extendable by 0 across a zero-density cell");
    }
  }

  for (auto [l, r] : runs) {
    std::vector<double> cv(r - l + 1);
    for (std::size_t j = l; j <= r; ++j) cv[j - l] = val(rho.values[j]);
    for (std::size_t j = l; j <= r; ++j) {
      out.mask[j] = true;
      if (j > l && j < r) {
        out.grad[j] = (cv[j - l + 1] - cv[j - l - 1]) / (2.0 * dx);
      } else if (j == l && r >= l + 2) {
        out.grad[j] = (-3.0 * cv[0] + 4.0 * cv[1] - cv[2]) / (2.0 * dx);
      } else if (j == r && r >= l + 2) {
        out.grad[j] = (3.0 * cv[r - l] - 4.0 * cv[r - l - 1] + cv[r - l - 2]) / (2.0 * dx);
      } else if (r == l + 1) {
        out.grad[j] = (cv[1] - cv[0]) / dx;
      } else {
        out.grad[j] = 0.0;  // single-cell support
      }
    }
  }
  return out;
}

}  // namespace

double bp_value(double t, double x, double p) {
  if (t > 0.0) return std::pow(std::abs(x), p) / (p * std::pow(t, p - 1.0));
  if (t == 0.0 && x == 0.0) return 0.0;
  return kInf;
}

SlopeEval slope_term(const GridDensity& rho, const DerivedEnergy& energy, double q) {
  if (!(q > 1.0)) throw PreconditionError("slope_term needs q > 1");
  const double dx = rho.dx();
  auto gl = masked_gradient(rho, [&](double z) { return energy.Lf(z); });
  auto gf = masked_gradient(rho, [&](double z) { return energy.fp(z); });
  SlopeEval out;
  for (std::size_t j = 0; j < rho.n(); ++j) {
    if (!gl.mask[j]) continue;
    const double r = rho.values[j];
    out.value += r * std::pow(std::abs(gl.grad[j] / r), q) * dx;
    out.value_via_fprime += r * std::pow(std::abs(gf.grad[j]), q) * dx;
  }
  out.value /= q;
  out.value_via_fprime /= q;
  return out;
}

std::vector<double> velocity_on_grid(const QuantileRep& layout, const std::vector<double>& v_cells,
                                     const GridDensity& rho) {
  if (v_cells.size() != layout.m()) throw ShapeMismatch("velocity count != mass cells");
  const std::size_t n = rho.n();
  const double dx = rho.dx();
  std::vector<double> mom(n, 0.0), mass(n, 0.0);
  const double w = 1.0 / double(layout.m());
  for (std::size_t i = 0; i < layout.m(); ++i) {
    const double lo = layout.X[i], hi = layout.X[i + 1];
    const double gap = hi - lo;
    std::size_t j0 = std::size_t(std::clamp((lo - rho.a) / dx, 0.0, double(n - 1)));
    std::size_t j1 = std::size_t(std::clamp((hi - rho.a) / dx, 0.0, double(n - 1)));
    for (std::size_t j = j0; j <= j1; ++j) {
      const double cl = rho.a + double(j) * dx, cr = cl + dx;
      const double ov = std::min(hi, cr) - std::max(lo, cl);
      if (ov > 0.0) {
        const double mcontrib = w * ov / gap;
        mom[j] += mcontrib * v_cells[i];
        mass[j] += mcontrib;
      }
    }
  }
  std::vector<double> v(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    if (mass[j] > 0.0) v[j] = mom[j] / mass[j];
  return v;
}

double renyi_integral(const GridDensity& rho, double beta) {
  const double dx = rho.dx();
  double acc = 0.0;
  if (beta == 1.0) {
    for (double v : rho.values)
      if (v > 0.0) acc += v * std::log(v);
  } else {
    for (double v : rho.values)
      if (v > 0.0) acc += std::pow(v, beta);
  }
  return acc * dx;
}

namespace {

struct YoungStep {
  double gap = 0.0;
  double law_residual = 0.0;
};

YoungStep young_step(const Trajectory& traj, const DerivedEnergy& energy, std::size_t k,
                     std::size_t grid_n, double p, double q) {
  const GridDensity rho = quantile_to_density(traj.steps[k + 1], grid_n);
  const std::vector<double> v = velocity_on_grid(traj.steps[k + 1], velocity(traj, k), rho);
  auto gl = masked_gradient(rho, [&](double z) { return energy.Lf(z); });
  const double dx = rho.dx();
  YoungStep out;
  for (std::size_t j = 0; j < rho.n(); ++j) {
    if (!gl.mask[j]) continue;
    const double r = rho.values[j];
    const double a = gl.grad[j] / r;
    const double cell = a * v[j] + std::pow(std::abs(a), q) / q + std::pow(std::abs(v[j]), p) / p;
    out.gap += r * cell * dx;
    out.law_residual += r * std::pow(std::abs(v[j] + spow(a, q - 1.0)), p) * dx;
  }
  out.gap *= traj.config.tau;
  out.law_residual *= traj.config.tau;
  return out;
}

}  // namespace

RunReport edi_report(const Trajectory& traj, int d, std::size_t grid_n) {
  if (traj.steps.size() < 2) throw IncompleteTrajectory("trajectory has no steps");
  if (traj.aborted) throw IncompleteTrajectory("trajectory aborted: " + traj.abort_reason);
  const double p = traj.config.p;
  const double q = conjugate_exponent(p);
  const double tau = traj.config.tau;
  const EnergySpec eff = traj.effective_spec();
  DerivedEnergy energy(eff);

  RunReport rep;
  rep.exps = exponents(traj.spec, p, d);
  const std::size_t K = traj.step_count();

  auto state_row = [&](std::size_t k) {
    StepLedger row;
    row.k = k;
    row.t = double(k) * tau;
    row.energy = energy_functional(traj.steps[k], energy);
    const GridDensity g = quantile_to_density(traj.steps[k], grid_n);
    row.tv = tv_norm(g);
    row.renyi_beta = renyi_integral(g, rep.exps.beta);
    if (rep.exps.bounded_branch || rep.exps.void_branch)
      row.lalpha = std::numeric_limits<double>::quiet_NaN();
    else
      row.lalpha = renyi_integral(g, rep.exps.alpha);
    return row;
  };

  rep.rows.push_back(state_row(0));
  rep.F0 = rep.rows[0].energy;

  double slope_int_total = 0.0, kinetic_int_total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    StepLedger row = state_row(k + 1);

    const double Wstep = wasserstein_p(traj.steps[k], traj.steps[k + 1], p);
    const double kinetic_int = std::pow(Wstep, p) / (p * std::pow(tau, p - 1.0));
    row.transport_term = kinetic_int;
    const auto vel = velocity(traj, k);
    double vp = 0.0;
    for (double v : vel) vp += std::pow(std::abs(v), p);
    row.kinetic_term = vp / double(vel.size()) / p;

    // De Giorgi interpolants at the Gauss nodes in s.
    double slope_w_int = 0.0, slope_fd_mean = 0.0;
    for (int gidx = 0; gidx < 8; ++gidx) {
      const double s = 0.5 * (kGaussNodes8[gidx] + 1.0);
      const double w = 0.5 * kGaussWeights8[gidx];
      StepResult dg = degiorgi_step(traj.steps[k], traj.spec, p, tau, s, traj.effective_eps,
                                    traj.config.inner_tol, traj.config.inner_max_iter);
      const double Ws = wasserstein_p(dg.next, traj.steps[k], p);
      slope_w_int += w * std::pow(Ws, p) / (std::pow(s, p) * std::pow(tau, p - 1.0)) / q;
      const GridDensity gs = quantile_to_density(dg.next, grid_n);
      slope_fd_mean += w * slope_term(gs, energy, q).value;
    }
    row.slope_term = slope_fd_mean;
    const double slope_fd_int = tau * slope_fd_mean;

    row.edi_precursor_residual =
        rep.rows[k].energy - row.energy - slope_w_int - kinetic_int;

    const YoungStep ys = young_step(traj, energy, k, grid_n, p, q);
    row.young_gap_term = ys.gap;
    rep.young_gap_total += ys.gap;
    rep.law_residual_total += ys.law_residual;

    slope_int_total += slope_fd_int;
    kinetic_int_total += kinetic_int;
    rep.rows.push_back(row);
  }
  rep.FT = rep.rows.back().energy;
  rep.edi_global_residual = rep.F0 - rep.FT - slope_int_total - kinetic_int_total;
  rep.tolerance = std::max(1e-7, 10.0 * traj.config.inner_tol) * (1.0 + std::abs(rep.F0));
  return rep;
}

YoungReport young_gap(const Trajectory& traj, std::size_t grid_n) {
  if (traj.steps.size() < 2) throw IncompleteTrajectory("trajectory has no steps");
  const double p = traj.config.p;
  const double q = conjugate_exponent(p);
  DerivedEnergy energy(traj.effective_spec());
  YoungReport rep;
  for (std::size_t k = 0; k < traj.step_count(); ++k) {
    const YoungStep ys = young_step(traj, energy, k, grid_n, p, q);
    rep.per_step.push_back(ys.gap);
    rep.gap_total += ys.gap;
    rep.law_residual_total += ys.law_residual;
  }
  return rep;
}

FlowInterchangeReport flow_interchange_check(const Trajectory& traj, double beta, int d,
                                             std::size_t grid_n) {
  if (beta < 0.0) throw RangeError("flow interchange needs beta >= 0");
  const double p = traj.config.p;
  const double tau = traj.config.tau;
  const double q = conjugate_exponent(p);
  DerivedEnergy energy(traj.effective_spec());

  FlowInterchangeReport rep;
  rep.beta = beta;

  // Convex functional values in quantile form: G_beta(v) = v^{1-beta}/(beta-1),
  // -log v at beta = 1.
  auto phi_beta = [&](const QuantileRep& Xr) {
    const std::size_t m = Xr.m();
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double v = double(m) * Xr.gap(i);
      acc += (beta == 1.0) ? -std::log(v) : std::pow(v, 1.0 - beta) / (beta - 1.0);
    }
    return acc / double(m);
  };
  for (const auto& st : traj.steps) rep.values.push_back(phi_beta(st));

  rep.monotone = true;
  const double tol = 1e-7 * (1.0 + std::abs(rep.values.front()));
  for (std::size_t k = 0; k + 1 < rep.values.size(); ++k) {
    const double viol = rep.values[k + 1] - rep.values[k];
    rep.max_violation = std::max(rep.max_violation, viol);
    if (viol > tol) rep.monotone = false;
  }

  const RegularityFunction hb = reg_h_general(traj.spec, p, beta);
  for (std::size_t k = 1; k < traj.steps.size(); ++k) {
    const GridDensity g = quantile_to_density(traj.steps[k], grid_n);
    auto gh = masked_gradient(g, [&](double z) { return hb.h(z); });
    double acc = 0.0;
    for (std::size_t j = 0; j < g.n(); ++j)
      if (gh.mask[j]) acc += std::pow(std::abs(gh.grad[j]), q) * g.dx();
    rep.dissipation += tau * acc;
  }

  const ExponentSet ex = exponents(traj.spec, p, d);
  rep.alpha = ex.alpha;
  rep.budget_applicable = std::isfinite(ex.alpha) && ex.alpha > 1.0;
  if (rep.budget_applicable) {
    const RegularityFunction ha = reg_h_general(traj.spec, p, ex.alpha);
    double rhs = 0.0;
    for (std::size_t k = 1; k < traj.steps.size(); ++k) {
      const GridDensity g = quantile_to_density(traj.steps[k], grid_n);
      auto gh = masked_gradient(g, [&](double z) { return ha.h(z); });
      double acc = 0.0;
      for (std::size_t j = 0; j < g.n(); ++j)
        if (gh.mask[j]) acc += std::pow(std::abs(gh.grad[j]), q) * g.dx();
      rhs += tau * acc;
    }
    const GridDensity g0 = quantile_to_density(traj.steps.front(), grid_n);
    const GridDensity gT = quantile_to_density(traj.steps.back(), grid_n);
    rep.budget_lhs =
        (renyi_integral(g0, ex.alpha) - renyi_integral(gT, ex.alpha)) / (ex.alpha - 1.0);
    rep.budget_rhs = rhs;
    rep.budget_slack = rep.budget_lhs - rep.budget_rhs;
  }
  return rep;
}

BVReport bv_checks(const Trajectory& traj, std::size_t grid_n) {
  BVReport rep;
  const double tau = traj.config.tau;
  const double q = conjugate_exponent(traj.config.p);
  for (const auto& st : traj.steps) rep.tv.push_back(tv_norm(quantile_to_density(st, grid_n)));

  rep.monotone = true;
  for (std::size_t k = 0; k + 1 < rep.tv.size(); ++k) {
    const double viol = rep.tv[k + 1] - rep.tv[k];
    rep.max_violation = std::max(rep.max_violation, viol);
    if (viol > 1e-7) rep.monotone = false;
  }
  for (std::size_t k = 1; k < rep.tv.size(); ++k)
    rep.sup_scaled = std::max(rep.sup_scaled, rep.tv[k] * std::pow(double(k) * tau, 1.0 / q));

  // Least-squares slope of log TV against log t over the first decade.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t cnt = 0;
  for (std::size_t k = 1; k < rep.tv.size(); ++k) {
    const double t = double(k) * tau;
    if (t > 10.0 * tau + 1e-15) break;
    if (!(rep.tv[k] > 0.0)) continue;
    const double lx = std::log(t), ly = std::log(rep.tv[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++cnt;
  }
  rep.fitted_slope =
      cnt >= 2 ? (double(cnt) * sxy - sx * sy) / (double(cnt) * sxx - sx * sx) : 0.0;
  return rep;
}

Step2Report step2_bound_check(const GridDensity& rho, const EnergySpec& spec, double p, int d,
                              double z0, double z1) {
  rho.validate();
  const double q = conjugate_exponent(p);
  const Decomposition dec = decompose_truncated(spec, z0, z1, d);
  const RegularityFunction h = reg_h_prime(spec, p, d);

  auto Lf2 = [&](double z) { return z * dec.f2p(z) - dec.f2(z); };
  auto gl = masked_gradient(rho, Lf2);
  auto gh = masked_gradient(rho, [&](double z) { return h.h(z); });

  Step2Report rep;
  rep.holds = true;
  const double dx = rho.dx();
  for (std::size_t j = 0; j < rho.n(); ++j) {
    if (!gl.mask[j]) continue;
    const double lhs = std::abs(gl.grad[j]);
    const double rhs = std::pow(rho.values[j], (q - 1.0) / q) * std::abs(gh.grad[j]);
    if (lhs > rhs * (1.0 + 1e-6) + 1e-12) rep.holds = false;
    if (rhs > 1e-14) rep.max_ratio = std::max(rep.max_ratio, lhs / rhs);
    rep.integral_lhs += std::pow(lhs, q) / std::pow(rho.values[j], q - 1.0) * dx;
    rep.integral_rhs += std::pow(std::abs(gh.grad[j]), q) * dx;
  }
  return rep;
}

}  // namespace wgf
