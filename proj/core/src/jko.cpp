#include "wgf/jko.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace wgf {

void SchemeConfig::validate() const {
  if (!(p > 1.0)) throw ConfigError("scheme needs p > 1");
  if (!(tau > 0.0) || !(T > 0.0)) throw ConfigError("tau and T must be positive");
  if (tau > T * (1.0 + 1e-12)) throw ConfigError("tau <= T required");
  if (m < 2) throw ConfigError("m >= 2 required");
  for (std::size_t i = 0; i + 1 < eps_schedule.size(); ++i)
    if (!(eps_schedule[i + 1] < eps_schedule[i]))
      throw ConfigError("eps schedule must be strictly decreasing");
  for (double e : eps_schedule)
    if (!(e > 0.0)) throw ConfigError("eps schedule entries must be positive");
  if (!(inner_tol > 0.0)) throw ConfigError("inner_tol must be positive");
}

std::size_t SchemeConfig::step_count() const {
  return std::size_t(std::ceil(T / tau - 1e-12));
}

namespace {

// Signed power x^{e} := |x|^{e-1} x.
double spow(double x, double e) {
  if (x == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(x), e), x);
}

bool has_barrier(const EnergySpec& spec, double eps) {
  return eps > 0.0 || spec.growth_slope == kInf || spec.lf_unbounded;
}

// Strictly convex objective of one step in node coordinates:
// J(X) = (1/m) sum G_eps(m dX_i) + kappa (1/m) sum |Xbar_i - Pbar_i|^p
//        + f(0) * |Omega \ supp|.
// The vacuum term matters when f(0) != 0; f(0) = +inf pins the support to
// the whole interval instead.
struct StepProblem {
  const DerivedEnergy* energy;
  std::vector<double> pmid;  // previous cell midpoints
  double p, kappa, a, b;
  double f_zero = 0.0;       // finite f(0+) vacuum rate (0 when pinned)
  std::size_t m;

  double eval(const std::vector<double>& X) const {
    double acc = 0.0;
    const double dm = double(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double gap = X[i + 1] - X[i];
      if (!(gap > 0.0)) return kInf;
      acc += energy->G(dm * gap);
      acc += kappa * std::pow(std::abs(0.5 * (X[i] + X[i + 1]) - pmid[i]), p);
    }
    acc /= dm;
    if (f_zero != 0.0) acc += f_zero * ((X[0] - a) + (b - X[m]));
    return acc;
  }

  void gradient(const std::vector<double>& X, std::vector<double>& g) const {
    const double dm = double(m);
    g.assign(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double gp = energy->Gp(dm * (X[i + 1] - X[i]));
      const double delta = 0.5 * (X[i] + X[i + 1]) - pmid[i];
      const double phi = kappa * p * spow(delta, p - 1.0) / dm;
      g[i] += -gp + 0.5 * phi;
      g[i + 1] += gp + 0.5 * phi;
    }
    if (f_zero != 0.0) {
      g[0] += f_zero;
      g[m] -= f_zero;
    }
  }

  // Tridiagonal Hessian: diag D[0..m], off-diagonal E[0..m-1].
  void hessian(const std::vector<double>& X, std::vector<double>& D, std::vector<double>& E) const {
    const double dm = double(m);
    D.assign(m + 1, 0.0);
    E.assign(m, 0.0);
    const double delta_reg = 1e-10 * (b - a);
    for (std::size_t i = 0; i < m; ++i) {
      const double gpp = dm * energy->Gpp(dm * (X[i + 1] - X[i]));
      double ad = std::abs(0.5 * (X[i] + X[i + 1]) - pmid[i]);
      if (p < 2.0) ad = std::max(ad, delta_reg);  // |.|^{p-2} blows up at coincidence
      const double psi = kappa * p * (p - 1.0) * std::pow(ad, p - 2.0) / dm;
      D[i] += gpp + 0.25 * psi;
      D[i + 1] += gpp + 0.25 * psi;
      E[i] += -gpp + 0.25 * psi;
    }
  }
};

// LDL^T solve of a tridiagonal system with the rows/cols in `fixed` pinned.
bool tridiag_solve(std::vector<double> D, std::vector<double> E, std::vector<double> rhs,
                   const std::array<bool, 2>& fixed_ends, std::vector<double>& x, double shift) {
  const std::size_t n = D.size();
  if (fixed_ends[0]) {
    D[0] = 1.0;
    E[0] = 0.0;
    rhs[0] = 0.0;
  }
  if (fixed_ends[1]) {
    D[n - 1] = 1.0;
    E[n - 2] = 0.0;
    rhs[n - 1] = 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) D[i] += shift;
  std::vector<double> l(n - 1), dd(n);
  dd[0] = D[0];
  if (!(dd[0] > 0.0)) return false;
  for (std::size_t i = 1; i < n; ++i) {
    l[i - 1] = E[i - 1] / dd[i - 1];
    dd[i] = D[i] - l[i - 1] * E[i - 1];
    if (!(dd[i] > 0.0)) return false;
  }
  x = rhs;
  for (std::size_t i = 1; i < n; ++i) x[i] -= l[i - 1] * x[i - 1];
  for (std::size_t i = 0; i < n; ++i) x[i] /= dd[i];
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= l[i] * x[i + 1];
  return true;
}

// Discrete optimality constant: mass-weighted mean of
// f_eps'(rho_i) + phi_i / (p tau^{p-1}) with phi the cumulative potential.
double recover_multiplier(const StepProblem& prob, const std::vector<double>& X) {
  const double dm = double(prob.m);
  std::vector<double> u(prob.m);
  for (std::size_t i = 0; i < prob.m; ++i)
    u[i] = spow(0.5 * (X[i] + X[i + 1]) - prob.pmid[i], prob.p - 1.0);
  double pot = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < prob.m; ++i) {
    if (i > 0) {
      const double dxm = 0.5 * (X[i + 1] - X[i - 1]);
      pot += 0.5 * (u[i - 1] + u[i]) * dxm;
    }
    const double rho = 1.0 / (dm * (X[i + 1] - X[i]));
    acc += prob.energy->fp(rho) + prob.kappa * prob.p * pot;
  }
  return acc / dm;
}

StepResult solve_step(const QuantileRep& prev, const DerivedEnergy& energy, double p,
                      double tau_eff, double inner_tol, int max_iter) {
  const std::size_t m = prev.m();
  StepProblem prob;
  prob.energy = &energy;
  prob.p = p;
  prob.kappa = 1.0 / (p * std::pow(tau_eff, p - 1.0));
  prob.a = prev.a;
  prob.b = prev.b;
  prob.m = m;
  prob.pmid.resize(m);
  for (std::size_t i = 0; i < m; ++i) prob.pmid[i] = prev.mid(i);

  std::vector<double> X = prev.X;
  X[0] = std::max(X[0], prev.a);
  X[m] = std::min(X[m], prev.b);
  const double J_prev = prob.eval(X);

  std::array<bool, 2> active = {false, false};
  std::vector<double> g, D, E, d;
  double J_cur = J_prev;
  int it = 0;
  double kkt = kInf;

  auto kkt_residual = [&](const std::vector<double>& grad) {
    double r = 0.0;
    for (std::size_t j = 0; j <= m; ++j) {
      if (j == 0 && active[0]) {
        r = std::max(r, std::max(0.0, -grad[0]));  // multiplier sign
      } else if (j == m && active[1]) {
        r = std::max(r, std::max(0.0, grad[m]));
      } else {
        r = std::max(r, std::abs(grad[j]));
      }
    }
    return r;
  };

  for (it = 0; it < max_iter; ++it) {
    prob.gradient(X, g);
    // Release bound constraints whose multiplier has the wrong sign.
    if (active[0] && g[0] < -0.1 * inner_tol) active[0] = false;
    if (active[1] && g[m] > 0.1 * inner_tol) active[1] = false;
    kkt = kkt_residual(g);
    if (kkt <= inner_tol) break;

    prob.hessian(X, D, E);
    std::vector<double> rhs(m + 1);
    for (std::size_t j = 0; j <= m; ++j) rhs[j] = -g[j];

    // Activate a bound when sitting on it and the gradient pushes outward.
    if (!active[0] && X[0] <= prob.a && g[0] > 0.0) active[0] = true;
    if (!active[1] && X[m] >= prob.b && g[m] < 0.0) active[1] = true;

    const double diag_scale = *std::max_element(D.begin(), D.end());
    double shift = 1e-12 * std::max(1.0, diag_scale);
    bool ok = tridiag_solve(D, E, rhs, active, d, shift);
    for (int k = 0; !ok && k < 8; ++k) {
      shift *= 100.0;
      ok = tridiag_solve(D, E, rhs, active, d, shift);
    }
    if (!ok) {  // projected gradient fallback
      d = rhs;
      if (active[0]) d[0] = 0.0;
      if (active[1]) d[m] = 0.0;
      const double gn = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
      if (gn > 0.0)
        for (double& v : d) v /= gn * std::max(1.0, diag_scale);
    }

    // Feasibility cap: gaps stay strictly positive, endpoints may reach the box.
    double sigma = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dgap = d[i + 1] - d[i];
      if (dgap < 0.0) sigma = std::min(sigma, -0.995 * (X[i + 1] - X[i]) / dgap);
    }
    if (!active[0] && d[0] < 0.0) sigma = std::min(sigma, (prob.a - X[0]) / d[0]);
    if (!active[1] && d[m] > 0.0) sigma = std::min(sigma, (prob.b - X[m]) / d[m]);

    const double slope = std::inner_product(g.begin(), g.end(), d.begin(), 0.0);
    std::vector<double> Xt(m + 1);
    double step = sigma;
    bool accepted = false;
    for (int ls = 0; ls < 64; ++ls) {
      for (std::size_t j = 0; j <= m; ++j) Xt[j] = X[j] + step * d[j];
      Xt[0] = std::max(Xt[0], prob.a);
      Xt[m] = std::min(Xt[m], prob.b);
      const double Jt = prob.eval(Xt);
      if (Jt <= J_cur + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
      if (step < 1e-18) break;
    }
    if (!accepted) {
      if (kkt <= 1e3 * inner_tol) break;  // stagnation at solver precision
      throw LineSearchStall("inner solver cannot find a feasible descent step (kkt=" +
                            std::to_string(kkt) + ")");
    }
    X.swap(Xt);
    J_cur = prob.eval(X);
    const double snap = 1e-14 * (prob.b - prob.a);
    if (!active[0] && X[0] <= prob.a + snap && X[1] > prob.a + snap) {
      X[0] = prob.a;
      active[0] = true;
      J_cur = prob.eval(X);
    }
    if (!active[1] && X[m] >= prob.b - snap && X[m - 1] < prob.b - snap) {
      X[m] = prob.b;
      active[1] = true;
      J_cur = prob.eval(X);
    }
  }

  prob.gradient(X, g);
  if (active[0] && g[0] < -0.1 * inner_tol) active[0] = false;
  if (active[1] && g[m] > 0.1 * inner_tol) active[1] = false;
  kkt = kkt_residual(g);

  StepResult res;
  res.next.a = prev.a;
  res.next.b = prev.b;
  res.next.X = std::move(X);
  res.objective = J_cur;
  res.kkt_residual = kkt;
  res.iterations = it;
  res.converged = kkt <= inner_tol;
  res.lo_active = active[0];
  res.hi_active = active[1];
  double tp = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    tp += std::pow(std::abs(res.next.mid(i) - prob.pmid[i]), p);
  res.transport_term = tp / double(m) * prob.kappa;
  res.multiplier = recover_multiplier(prob, res.next.X);
  // Descent certificate of the minimizing movement.
  if (!(res.objective <= J_prev + 1e-12 * (1.0 + std::abs(J_prev))))
    throw Error("jko step failed the descent certificate");
  return res;
}

}  // namespace

StepResult jko_step(const QuantileRep& prev, const EnergySpec& spec, double p, double tau_eff,
                    double eps, double inner_tol, int max_iter) {
  prev.validate();
  if (!(p > 1.0) || !(tau_eff > 0.0)) throw PreconditionError("jko_step needs p > 1, tau > 0");
  if (eps < 0.0) throw PreconditionError("eps >= 0 required");
  if (!has_barrier(spec, eps))
    throw PreconditionError("eps = 0 solve needs a superlinear energy or an unbounded L_f " +
                            std::string("(energy ") + spec.name + ")");
  const EnergySpec eff = eps > 0.0 ? regularize_entropy(spec, eps) : spec;
  DerivedEnergy energy(eff);
  return solve_step(prev, energy, p, tau_eff, inner_tol, max_iter);
}

StepResult epsilon_continuation(const QuantileRep& prev, const EnergySpec& spec, double p,
                                double tau_eff, std::span<const double> eps_schedule,
                                double inner_tol, int max_iter) {
  if (eps_schedule.empty()) throw PreconditionError("eps schedule must be nonempty");
  std::vector<std::pair<double, double>> record;
  StepResult cur;
  bool first = true;
  for (double eps : eps_schedule) {
    const QuantileRep& start = first ? prev : cur.next;
    StepResult nxt = jko_step(start, spec, p, tau_eff, eps, inner_tol, max_iter);
    if (!first) record.emplace_back(eps, wasserstein_p(cur.next, nxt.next, p));
    cur = std::move(nxt);
    first = false;
  }
  if (has_barrier(spec, 0.0)) {  // final unregularized polish
    StepResult nxt = jko_step(cur.next, spec, p, tau_eff, 0.0, inner_tol, max_iter);
    record.emplace_back(0.0, wasserstein_p(cur.next, nxt.next, p));
    cur = std::move(nxt);
  }
  cur.continuation = std::move(record);
  return cur;
}

StepResult degiorgi_step(const QuantileRep& prev, const EnergySpec& spec, double p, double tau,
                         double s, double eps, double inner_tol, int max_iter) {
  if (!(s > 0.0) || s > 1.0 + 1e-12) throw PreconditionError("degiorgi_step needs s in (0, 1]");
  return jko_step(prev, spec, p, tau * s, eps, inner_tol, max_iter);
}

EnergySpec Trajectory::effective_spec() const {
  return effective_eps > 0.0 ? regularize_entropy(spec, effective_eps) : spec;
}

Trajectory run_scheme(const GridDensity& rho0, const SchemeConfig& config,
                      const EnergySpec& spec) {
  config.validate();
  rho0.validate();
  {
    // F(rho0) finite is the scheme's entry condition; the density form also
    // catches f(0+) = +inf paired with zero-density cells.
    DerivedEnergy e = derive(spec);
    double F0;
    try {
      F0 = energy_functional(rho0, e);
    } catch (const DomainError& err) {
      throw PreconditionError(std::string("initial energy is not finite: ") + err.what());
    }
    if (!std::isfinite(F0)) throw PreconditionError("initial energy is not finite");
  }

  Trajectory traj;
  traj.config = config;
  traj.spec = spec;
  const bool barrier = has_barrier(spec, 0.0);
  if (config.eps_schedule.empty()) {
    if (!barrier)
      throw PreconditionError("energy " + spec.name +
                              " has no barrier; an eps schedule is mandatory");
    traj.effective_eps = 0.0;
  } else {
    traj.effective_eps = barrier ? 0.0 : config.eps_schedule.back();
  }

  traj.steps.push_back(density_to_quantile(rho0, config.m));
  const std::size_t K = config.step_count();
  int consecutive_failures = 0;
  for (std::size_t k = 0; k < K; ++k) {
    StepResult r;
    if (config.eps_schedule.empty()) {
      r = jko_step(traj.steps.back(), spec, config.p, config.tau, 0.0, config.inner_tol,
                   config.inner_max_iter);
    } else {
      r = epsilon_continuation(traj.steps.back(), spec, config.p, config.tau,
                               config.eps_schedule, config.inner_tol, config.inner_max_iter);
    }
    consecutive_failures = r.converged ? 0 : consecutive_failures + 1;
    traj.steps.push_back(r.next);
    traj.results.push_back(std::move(r));
    if (consecutive_failures >= 2) {
      traj.aborted = true;
      traj.abort_reason = "inner solver failed to converge on two consecutive steps";
      break;
    }
  }
  return traj;
}

QuantileRep interpolate(const Trajectory& traj, double t, Interp kind) {
  const double tau = traj.config.tau;
  const double t_max = double(traj.step_count()) * tau;
  if (t < -1e-12 || t > std::max(traj.config.T, t_max) + 1e-12)
    throw RangeError("interpolation time outside [0, T]");
  t = std::clamp(t, 0.0, t_max);
  if (t <= tau * 1e-12) return traj.steps.front();
  const std::size_t k =
      std::min(std::size_t(std::max(0.0, (t - tau * 1e-12) / tau)), traj.step_count() - 1);
  const double s = (t - double(k) * tau) / tau;

  switch (kind) {
    case Interp::Constant:
      return traj.steps[k + 1];
    case Interp::Geodesic: {
      QuantileRep out = traj.steps[k];
      for (std::size_t j = 0; j < out.X.size(); ++j)
        out.X[j] = (1.0 - s) * traj.steps[k].X[j] + s * traj.steps[k + 1].X[j];
      return out;
    }
    case Interp::DeGiorgi: {
      if (s >= 1.0 - 1e-12) return traj.steps[k + 1];
      if (s <= 1e-12) return traj.steps[k];
      StepResult r = degiorgi_step(traj.steps[k], traj.spec, traj.config.p, tau, s,
                                   traj.effective_eps, traj.config.inner_tol,
                                   traj.config.inner_max_iter);
      return r.next;
    }
  }
  throw RangeError("unknown interpolation kind");
}

std::vector<double> velocity(const Trajectory& traj, std::size_t k) {
  if (k >= traj.step_count()) throw RangeError("velocity index outside the trajectory");
  const QuantileRep& A = traj.steps[k];
  const QuantileRep& B = traj.steps[k + 1];
  std::vector<double> v(A.m());
  for (std::size_t i = 0; i < A.m(); ++i) v[i] = (B.mid(i) - A.mid(i)) / traj.config.tau;
  return v;
}

}  // namespace wgf
