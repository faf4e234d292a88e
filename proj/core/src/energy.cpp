#include "wgf/energy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wgf {

namespace {

double pow_safe(double z, double e) { return std::pow(z, e); }

double simpson_rule(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson_rec(const std::function<double(double)>& g, double a, double b, double fa,
                            double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = g(lm), frm = g(rm);
  const double left = simpson_rule(a, m, fa, flm, fm);
  const double right = simpson_rule(m, b, fm, frm, fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson_rec(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& g, double a, double b,
                        double tol = 1e-12, int depth = 48) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = g(a), fm = g(m), fb = g(b);
  return adaptive_simpson_rec(g, a, b, fa, fm, fb, simpson_rule(a, b, fa, fm, fb), tol, depth);
}

// Fritsch-Carlson monotone cubic slopes.
std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), del(n - 1), m(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    del[i] = (y[i + 1] - y[i]) / h[i];
  }
  if (n == 2) {
    m[0] = m[1] = del[0];
    return m;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (del[i - 1] * del[i] <= 0.0) {
      m[i] = 0.0;
    } else {
      const double w1 = 2.0 * h[i] + h[i - 1];
      const double w2 = h[i] + 2.0 * h[i - 1];
      m[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
    }
  }
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0.0)
      s = 0.0;
    else if (d0 * d1 < 0.0 && std::abs(s) > 3.0 * std::abs(d0))
      s = 3.0 * d0;
    return s;
  };
  m[0] = end_slope(h[0], h[1], del[0], del[1]);
  m[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
  return m;
}

}  // namespace

std::vector<double> probe_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  const double r = std::log(hi / lo) / double(n - 1);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo * std::exp(r * double(i));
  g.front() = lo;
  g.back() = hi;
  return g;
}

// ---------------------------------------------------------------------------
// Tabulated energies: interpolate f'' (monotone cubic), integrate upward.
// ---------------------------------------------------------------------------

namespace {

struct TabEval {
  std::vector<double> z;
  std::vector<std::array<double, 4>> cub;  // fpp(z_i + u) = c0 + c1 u + c2 u^2 + c3 u^3
  std::vector<double> fp_at;
  std::vector<double> f_at;

  static std::shared_ptr<TabEval> build(const TabulatedData& t) {
    auto e = std::make_shared<TabEval>();
    const std::size_t n = t.z.size();
    e->z = t.z;
    auto slopes = pchip_slopes(t.z, t.fpp);
    e->cub.resize(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double h = t.z[i + 1] - t.z[i];
      const double d = (t.fpp[i + 1] - t.fpp[i]) / h;
      e->cub[i] = {t.fpp[i], slopes[i], (3.0 * d - 2.0 * slopes[i] - slopes[i + 1]) / h,
                   (slopes[i] + slopes[i + 1] - 2.0 * d) / (h * h)};
    }
    e->fp_at.resize(n);
    e->f_at.resize(n);
    e->fp_at[0] = t.fp.front();
    e->f_at[0] = t.f.front();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double h = t.z[i + 1] - t.z[i];
      const auto& c = e->cub[i];
      const double int_fpp = h * (c[0] + h * (c[1] / 2 + h * (c[2] / 3 + h * c[3] / 4)));
      const double int_fp =
          e->fp_at[i] * h + h * h * (c[0] / 2 + h * (c[1] / 6 + h * (c[2] / 12 + h * c[3] / 20)));
      e->fp_at[i + 1] = e->fp_at[i] + int_fpp;
      e->f_at[i + 1] = e->f_at[i] + int_fp;
    }
    return e;
  }

  std::size_t seg(double zq) const {
    auto it = std::upper_bound(z.begin(), z.end(), zq);
    if (it == z.begin()) return 0;
    std::size_t i = std::size_t(it - z.begin()) - 1;
    return std::min(i, z.size() - 2);
  }

  double fpp(double zq) const {
    if (zq <= z.front()) return cub.front()[0];
    if (zq >= z.back()) {
      const auto& c = cub.back();
      const double h = z[z.size() - 1] - z[z.size() - 2];
      return c[0] + h * (c[1] + h * (c[2] + h * c[3]));
    }
    const std::size_t i = seg(zq);
    const double u = zq - z[i];
    const auto& c = cub[i];
    return c[0] + u * (c[1] + u * (c[2] + u * c[3]));
  }

  double fp(double zq) const {
    if (zq <= z.front()) return fp_at.front() - fpp(z.front()) * (z.front() - zq);
    if (zq >= z.back()) return fp_at.back() + fpp(z.back()) * (zq - z.back());
    const std::size_t i = seg(zq);
    const double u = zq - z[i];
    const auto& c = cub[i];
    return fp_at[i] + u * (c[0] + u * (c[1] / 2 + u * (c[2] / 3 + u * c[3] / 4)));
  }

  double f(double zq) const {
    if (zq <= z.front()) {
      const double u = z.front() - zq;
      return f_at.front() - fp_at.front() * u + 0.5 * fpp(z.front()) * u * u;
    }
    if (zq >= z.back()) {
      const double u = zq - z.back();
      return f_at.back() + fp_at.back() * u + 0.5 * fpp(z.back()) * u * u;
    }
    const std::size_t i = seg(zq);
    const double u = zq - z[i];
    const auto& c = cub[i];
    return f_at[i] +
           u * (fp_at[i] + u * (c[0] / 2 + u * (c[1] / 6 + u * (c[2] / 12 + u * c[3] / 20))));
  }
};

std::shared_ptr<TabEval> tab_eval(const EnergySpec& spec) {
  static thread_local std::shared_ptr<const TabulatedData> cached_data;
  static thread_local std::shared_ptr<TabEval> cached_eval;
  if (cached_data != spec.table) {
    cached_data = spec.table;
    cached_eval = TabEval::build(*spec.table);
  }
  return cached_eval;
}

}  // namespace

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

EnergySpec make_entropy() {
  EnergySpec s;
  s.kind = EnergyKind::Entropy;
  s.theta = 1.0;
  s.theta_constant = 1.0;
  s.theta_threshold = 1.0;
  s.growth_slope = kInf;
  s.f_at_zero = 0.0;
  s.lf_unbounded = true;
  s.name = "entropy";
  return s;
}

EnergySpec make_power(double m) {
  if (!(m > 0.0) || m == 1.0) throw ConfigError("power energy needs m > 0, m != 1");
  EnergySpec s;
  s.kind = EnergyKind::Power;
  s.power_m = m;
  s.theta = 2.0 - m;
  s.theta_constant = m;
  s.theta_threshold = 1.0;
  s.growth_slope = m > 1.0 ? kInf : 0.0;
  s.f_at_zero = 0.0;
  s.lf_unbounded = true;  // L_f(z) = z^m
  char buf[64];
  std::snprintf(buf, sizeof buf, "power:m=%g", m);
  s.name = buf;
  return s;
}

EnergySpec make_qlaplacian(double p) {
  if (!(p > 1.0)) throw ConfigError("qlaplacian energy needs p > 1");
  if (p == 2.0) {
    EnergySpec s = make_entropy();
    s.name = "qlaplacian:p=2";
    return s;
  }
  EnergySpec s;
  s.kind = EnergyKind::QLaplacian;
  s.qlap_p = p;
  s.theta = p - 1.0;
  s.theta_constant = 1.0;
  s.theta_threshold = 1.0;
  s.growth_slope = p < 2.0 ? kInf : 0.0;
  s.f_at_zero = p >= 3.0 ? kInf : 0.0;
  s.lf_unbounded = p <= 3.0;  // L_f' = z^{2-p}
  char buf[64];
  std::snprintf(buf, sizeof buf, "qlaplacian:p=%g", p);
  s.name = buf;
  return s;
}

EnergySpec make_tabulated(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IOFailure("cannot open tabulated energy file " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw IOFailure("empty tabulated energy file " + csv_path);
  auto data = std::make_shared<TabulatedData>();
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double z, f, fp, fpp;
    if (!(row >> z >> f >> fp >> fpp)) throw IOFailure("bad row in " + csv_path + ": " + line);
    data->z.push_back(z);
    data->f.push_back(f);
    data->fp.push_back(fp);
    data->fpp.push_back(fpp);
  }
  if (data->z.size() < 4) throw ConfigError("tabulated energy needs >= 4 nodes");
  for (std::size_t i = 0; i + 1 < data->z.size(); ++i) {
    if (!(data->z[i] > 0.0) || !(data->z[i + 1] > data->z[i]))
      throw ConfigError("tabulated nodes must be increasing and positive");
  }
  for (double v : data->fpp)
    if (!(v > 0.0)) throw NonConvexEnergy("tabulated f'' must be positive");

  EnergySpec s;
  s.kind = EnergyKind::Tabulated;
  s.table = data;
  s.theta = kInf;
  s.theta_constant = 0.0;
  s.theta_threshold = data->z.back();
  s.growth_slope = kInf;  // f'' extended constant above the table
  auto ev = TabEval::build(*data);
  s.f_at_zero = ev->f(1e-300);
  if (std::abs(s.f_at_zero) < 1e-12) s.f_at_zero = 0.0;
  s.lf_unbounded = true;
  s.name = "tabulated:" + csv_path;
  return s;
}

EnergySpec parse_energy(const std::string& key) {
  if (key == "entropy") return make_entropy();
  auto starts = [&](const char* pre) { return key.rfind(pre, 0) == 0; };
  if (starts("power:m=")) return make_power(std::stod(key.substr(8)));
  if (starts("qlaplacian:p=")) return make_qlaplacian(std::stod(key.substr(13)));
  if (starts("tabulated:")) return make_tabulated(key.substr(10));
  throw ConfigError("unknown energy key '" + key +
                    "' (catalog: entropy, power:m=<m>, qlaplacian:p=<p>, tabulated:<path>)");
}

EnergySpec regularize_entropy(const EnergySpec& spec, double eps) {
  if (!(eps > 0.0)) throw PreconditionError("regularize_entropy needs eps > 0");
  EnergySpec s = spec;
  s.entropy_eps += eps;
  s.growth_slope = kInf;
  s.lf_unbounded = true;
  s.name = spec.name + "+eps";
  return s;
}

// ---------------------------------------------------------------------------
// DerivedEnergy
// ---------------------------------------------------------------------------

DerivedEnergy::DerivedEnergy(EnergySpec spec) : spec_(std::move(spec)) {}

void DerivedEnergy::check_domain(double z) const {
  if (!(z > 0.0)) throw DomainError("energy evaluation needs z > 0");
}

double DerivedEnergy::f(double z) const {
  check_domain(z);
  double v;
  switch (spec_.kind) {
    case EnergyKind::Entropy:
      v = z * std::log(z);
      break;
    case EnergyKind::Power:
      v = pow_safe(z, spec_.power_m) / (spec_.power_m - 1.0);
      break;
    case EnergyKind::QLaplacian: {
      const double p = spec_.qlap_p;
      v = (p == 3.0) ? -std::log(z) : pow_safe(z, 3.0 - p) / ((2.0 - p) * (3.0 - p));
      break;
    }
    case EnergyKind::Tabulated:
      v = tab_eval(spec_)->f(z);
      break;
  }
  if (spec_.entropy_eps != 0.0) v += spec_.entropy_eps * z * std::log(z);
  return v;
}

double DerivedEnergy::fp(double z) const {
  check_domain(z);
  double v;
  switch (spec_.kind) {
    case EnergyKind::Entropy:
      v = std::log(z) + 1.0;
      break;
    case EnergyKind::Power: {
      const double m = spec_.power_m;
      v = m * pow_safe(z, m - 1.0) / (m - 1.0);
      break;
    }
    case EnergyKind::QLaplacian: {
      const double p = spec_.qlap_p;
      v = (p == 3.0) ? -1.0 / z : pow_safe(z, 2.0 - p) / (2.0 - p);
      break;
    }
    case EnergyKind::Tabulated:
      v = tab_eval(spec_)->fp(z);
      break;
  }
  if (spec_.entropy_eps != 0.0) v += spec_.entropy_eps * (std::log(z) + 1.0);
  return v;
}

double DerivedEnergy::fpp(double z) const {
  check_domain(z);
  double v;
  switch (spec_.kind) {
    case EnergyKind::Entropy:
      v = 1.0 / z;
      break;
    case EnergyKind::Power:
      v = spec_.power_m * pow_safe(z, spec_.power_m - 2.0);
      break;
    case EnergyKind::QLaplacian:
      v = pow_safe(z, 1.0 - spec_.qlap_p);
      break;
    case EnergyKind::Tabulated:
      v = tab_eval(spec_)->fpp(z);
      break;
  }
  if (spec_.entropy_eps != 0.0) v += spec_.entropy_eps / z;
  return v;
}

double DerivedEnergy::G(double v) const {
  if (!(v > 0.0)) throw DomainError("G needs v > 0");
  return v * f(1.0 / v);
}

double DerivedEnergy::Gp(double v) const {
  if (!(v > 0.0)) throw DomainError("G' needs v > 0");
  return -Lf(1.0 / v);
}

double DerivedEnergy::Gpp(double v) const {
  if (!(v > 0.0)) throw DomainError("G'' needs v > 0");
  return fpp(1.0 / v) / (v * v * v);
}

DerivedEnergy derive(const EnergySpec& spec) {
  DerivedEnergy e(spec);
  const auto grid = probe_grid();
  double prev_slope = -kInf;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double z0 = grid[i], z1 = grid[i + 1];
    const double slope = (e.f(z1) - e.f(z0)) / (z1 - z0);
    const double scale = 1.0 + std::max(std::abs(slope), std::abs(prev_slope));
    if (slope < prev_slope - 1e-10 * scale)
      throw NonConvexEnergy(spec.name + " fails sampled convexity near z=" + std::to_string(z0));
    prev_slope = slope;
    if (!(e.fpp(z0) > 0.0))
      throw NonConvexEnergy(spec.name + " has f'' <= 0 at z=" + std::to_string(z0));
  }
  if (std::isfinite(spec.theta)) {
    for (double z : grid) {
      if (z < spec.theta_threshold) continue;
      const double bound = spec.theta_constant * pow_safe(z, -spec.theta);
      if (e.fpp(z) < bound * (1.0 - 1e-9))
        throw PreconditionError(spec.name + " violates the declared f'' tail bound at z=" +
                                std::to_string(z));
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Exponent calculus
// ---------------------------------------------------------------------------

double conjugate_exponent(double p) {
  if (!(p > 1.0)) throw PreconditionError("conjugate exponent needs p > 1");
  return 1.0 + 1.0 / (p - 1.0);
}

ExponentSet exponents(const EnergySpec& spec, double p, int d) {
  if (d < 1) throw PreconditionError("dimension d >= 1 required");
  ExponentSet ex;
  ex.p = p;
  ex.q = conjugate_exponent(p);
  ex.d = d;
  ex.theta = spec.theta;
  if (std::isfinite(spec.theta)) {
    ex.alpha = 2.0 - ex.q * (1.0 + 1.0 / double(d)) + spec.theta * (ex.q - 1.0);
  } else {
    ex.alpha = kInf;
  }
  const double b1 = 1.0 - 1.0 / double(d);
  const double b2 = std::isfinite(spec.theta) ? spec.theta / p + 1.0 / ex.q : kInf;
  ex.beta = std::max(b1, b2);
  ex.entropy_branch = std::isfinite(ex.alpha) && std::abs(ex.alpha - 1.0) < 1e-12;
  ex.void_branch = std::isfinite(ex.alpha) && ex.alpha < 1.0 && !ex.entropy_branch;
  ex.bounded_branch = !std::isfinite(ex.alpha);
  return ex;
}

// ---------------------------------------------------------------------------
// McCann transform and condition
// ---------------------------------------------------------------------------

std::function<double(double)> mccann_transform(const EnergySpec& spec, int d) {
  if (d < 1) throw PreconditionError("dimension d >= 1 required");
  DerivedEnergy e(spec);
  return [e, d](double s) {
    if (!(s > 0.0)) throw DomainError("McCann transform needs s > 0");
    return pow_safe(s, double(d)) * e.f(pow_safe(s, -double(d)));
  };
}

std::function<double(double)> mccann_transform_inverse(const std::function<double(double)>& g,
                                                       int d) {
  return [g, d](double z) {
    if (!(z > 0.0)) throw DomainError("inverse McCann transform needs z > 0");
    return g(pow_safe(z, -1.0 / double(d))) * z;
  };
}

namespace {

McCannReport mccann_grid_check(const std::function<double(double)>& M,
                               std::span<const double> probe) {
  std::vector<double> grid_store;
  if (probe.empty()) {
    grid_store = probe_grid(1e-2, 1e2, 256);
    probe = grid_store;
  }
  if (probe.size() < 64) throw PreconditionError("McCann probe grid needs >= 64 points");
  if (!(probe.back() / probe.front() >= 0.999e4))
    throw PreconditionError("McCann probe grid must span >= 4 decades");

  constexpr double tol = 1e-10;
  McCannReport rep;
  std::vector<double> vals(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) vals[i] = M(probe[i]);

  double prev_slope = -kInf;
  for (std::size_t i = 0; i + 1 < probe.size(); ++i) {
    const double scale = 1.0 + std::max(std::abs(vals[i]), std::abs(vals[i + 1]));
    if (vals[i + 1] - vals[i] > tol * scale) {
      rep.pass = false;
      rep.witness = probe[i];
      rep.reason = "not non-increasing";
      return rep;
    }
    const double slope = (vals[i + 1] - vals[i]) / (probe[i + 1] - probe[i]);
    const double sscale = 1.0 + std::max(std::abs(slope), std::abs(prev_slope));
    if (slope < prev_slope - tol * sscale) {
      rep.pass = false;
      rep.witness = probe[i];
      rep.reason = "not convex";
      return rep;
    }
    prev_slope = slope;
  }
  rep.pass = true;
  return rep;
}

}  // namespace

McCannReport check_mccann(const EnergySpec& spec, int d, std::span<const double> probe) {
  if (spec.f_at_zero != 0.0)
    throw DomainError("McCann condition requires f(0) = 0 (f(0+) = " +
                      std::to_string(spec.f_at_zero) + " for " + spec.name + ")");
  return mccann_grid_check(mccann_transform(spec, d), probe);
}

McCannReport check_mccann_map(const std::function<double(double)>& f, double f_at_zero, int d,
                              std::span<const double> probe) {
  if (f_at_zero != 0.0) throw DomainError("McCann condition requires f(0) = 0");
  auto M = [f, d](double s) { return pow_safe(s, double(d)) * f(pow_safe(s, -double(d))); };
  return mccann_grid_check(M, probe);
}

// ---------------------------------------------------------------------------
// Regularity function h and flux nonlinearity H
// ---------------------------------------------------------------------------

namespace {

// f'' = c z^-t exactly for the closed-form catalog entries.
bool exact_power_fpp(const EnergySpec& spec, double& c, double& t) {
  if (spec.entropy_eps != 0.0) return false;
  switch (spec.kind) {
    case EnergyKind::Entropy:
      c = 1.0;
      t = 1.0;
      return true;
    case EnergyKind::Power:
      c = spec.power_m;
      t = 2.0 - spec.power_m;
      return true;
    case EnergyKind::QLaplacian:
      c = 1.0;
      t = spec.qlap_p - 1.0;
      return true;
    default:
      return false;
  }
}

RegularityFunction make_reg(const EnergySpec& spec, double p, double gamma) {
  const double q = conjugate_exponent(p);
  RegularityFunction r;
  r.alpha = gamma;
  double c, t;
  if (exact_power_fpp(spec, c, t)) {
    const double A = pow_safe(c, 1.0 / p);
    const double B = (gamma - 1.0) / q - t / p;
    r.hp = [A, B](double z) {
      if (!(z > 0.0)) throw DomainError("h' needs z > 0");
      return A * pow_safe(z, B);
    };
    r.h = [A, B](double z) {
      if (!(z > 0.0)) throw DivergenceError("h requested at z <= 0");
      if (std::abs(B + 1.0) < 1e-14) return A * std::log(z);
      return A * (pow_safe(z, B + 1.0) - 1.0) / (B + 1.0);
    };
    return r;
  }
  DerivedEnergy e(spec);
  auto hp = [e, gamma, q, p](double z) {
    if (!(z > 0.0)) throw DomainError("h' needs z > 0");
    return pow_safe(z, (gamma - 1.0) / q) * pow_safe(e.fpp(z), 1.0 / p);
  };
  r.hp = hp;
  r.h = [hp](double z) {
    if (!(z > 0.0)) throw DivergenceError("h requested at z <= 0");
    if (z == 1.0) return 0.0;
    const double lo = std::min(1.0, z), hi = std::max(1.0, z);
    const double v = adaptive_simpson(hp, lo, hi, 1e-12);
    return z > 1.0 ? v : -v;
  };
  return r;
}

}  // namespace

RegularityFunction reg_h_prime(const EnergySpec& spec, double p, int d) {
  const ExponentSet ex = exponents(spec, p, d);
  if (!std::isfinite(ex.alpha))
    throw PreconditionError("reg_h_prime needs a finite alpha (theta < inf)");
  return make_reg(spec, p, ex.alpha);
}

RegularityFunction reg_h_general(const EnergySpec& spec, double p, double gamma) {
  return make_reg(spec, p, gamma);
}

FluxFunction flux_h_prime(const EnergySpec& spec, double p) {
  if (!(p > 1.0)) throw PreconditionError("flux needs p > 1");
  FluxFunction F;
  double c, t;
  if (exact_power_fpp(spec, c, t)) {
    const double B = p - 1.0 - t;  // H'(s) = c s^B
    if (B <= -1.0)
      throw DivergenceError("flux H not integrable at 0 for " + spec.name +
                            " at p=" + std::to_string(p));
    F.Hp = [c, B](double s) {
      if (s < 0.0) throw DomainError("flux needs s >= 0");
      if (s == 0.0) return B > 0.0 ? 0.0 : (B == 0.0 ? c : kInf);
      return c * pow_safe(s, B);
    };
    F.H = [c, B](double s) {
      if (s < 0.0) throw DomainError("flux needs s >= 0");
      if (s == 0.0) return 0.0;
      return c * pow_safe(s, B + 1.0) / (B + 1.0);
    };
    return F;
  }
  DerivedEnergy e(spec);
  auto hp = [e, p](double s) {
    if (s <= 0.0) return 0.0;  // s^{p-1} f'' with f'' bounded near 0
    return pow_safe(s, p - 1.0) * e.fpp(s);
  };
  auto table = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>();
  auto& xs = table->first;
  auto& Hs = table->second;
  const std::size_t N = 4097;
  const double s_cap = 1e4;
  xs.resize(N);
  Hs.resize(N);
  for (std::size_t i = 0; i < N; ++i) xs[i] = s_cap * double(i) / double(N - 1);
  Hs[0] = 0.0;
  std::function<double(double)> hp_fn = hp;
  for (std::size_t i = 1; i < N; ++i)
    Hs[i] = Hs[i - 1] + adaptive_simpson(hp_fn, xs[i - 1], xs[i], 1e-13);
  F.Hp = hp;
  F.H = [table, hp_fn](double s) {
    if (s < 0.0) throw DomainError("flux needs s >= 0");
    const auto& xs = table->first;
    const auto& Hs = table->second;
    if (s >= xs.back()) return Hs.back() + adaptive_simpson(hp_fn, xs.back(), s, 1e-13);
    const double pos = s / xs.back() * double(xs.size() - 1);
    const std::size_t i = std::min(std::size_t(pos), xs.size() - 2);
    return Hs[i] + adaptive_simpson(hp_fn, xs[i], s, 1e-13);
  };
  return F;
}

// ---------------------------------------------------------------------------
// Superlinear construction: hull of M phi, corner rounding, strictifier.
// ---------------------------------------------------------------------------

namespace {

struct PiecewiseConvex {
  std::vector<double> sx, sy;   // hull vertices, slopes nondecreasing
  std::vector<double> blend_w;  // parabolic corner half-widths (0 = sharp)

  double eval(double s) const {
    if (s <= sx.front()) {
      const double m = (sy[1] - sy[0]) / (sx[1] - sx[0]);
      return sy[0] + m * (s - sx[0]);
    }
    if (s >= sx.back()) return sy.back();
    auto it = std::upper_bound(sx.begin(), sx.end(), s);
    const std::size_t k = std::size_t(it - sx.begin());  // s in (sx[k-1], sx[k]]
    auto corner = [&](std::size_t v) -> double {
      const double w = blend_w[v];
      if (w <= 0.0 || std::abs(s - sx[v]) > w) return std::numeric_limits<double>::quiet_NaN();
      const double mL = (sy[v] - sy[v - 1]) / (sx[v] - sx[v - 1]);
      const double mR = (sy[v + 1] - sy[v]) / (sx[v + 1] - sx[v]);
      const double u = s - (sx[v] - w);
      return (sy[v] - mL * w) + mL * u + (mR - mL) / (4.0 * w) * u * u;
    };
    if (k < sx.size() - 1) {
      const double c = corner(k);
      if (!std::isnan(c)) return c;
    }
    if (k - 1 > 0) {
      const double c = corner(k - 1);
      if (!std::isnan(c)) return c;
    }
    const double m = (sy[k] - sy[k - 1]) / (sx[k] - sx[k - 1]);
    return sy[k - 1] + m * (s - sx[k - 1]);
  }
};

}  // namespace

SuperlinearResult construct_superlinear(const std::function<double(double)>& phi, int d,
                                        double z_lo, double z_hi) {
  if (d < 1) throw PreconditionError("dimension d >= 1 required");
  const auto zprobe = probe_grid(z_lo, z_hi, 512);

  double prev_slope = -kInf;
  for (std::size_t i = 0; i + 1 < zprobe.size(); ++i) {
    const double v0 = phi(zprobe[i]), v1 = phi(zprobe[i + 1]);
    if (v0 < 0.0) throw PreconditionError("phi must be nonnegative");
    if (zprobe[i] <= z_lo * 10.0 && v0 != 0.0)
      throw PreconditionError("phi must vanish in a neighborhood of 0");
    const double slope = (v1 - v0) / (zprobe[i + 1] - zprobe[i]);
    if (slope < prev_slope - 1e-10 * (1.0 + std::abs(slope) + std::abs(prev_slope)))
      throw PreconditionError("phi must be convex");
    prev_slope = slope;
  }
  const double tail_hi = phi(z_hi) / z_hi;
  const double tail_mid = phi(z_hi * 1e-2) / (z_hi * 1e-2);
  if (!(tail_hi > 0.0) || !(tail_hi > 2.0 * tail_mid))
    throw PreconditionError("phi is not eventually superlinear on the probe range");

  const double s_lo = pow_safe(z_hi, -1.0 / double(d));
  const double s_hi = pow_safe(z_lo, -1.0 / double(d));
  const auto sgrid = probe_grid(s_lo, s_hi, 2049);

  PiecewiseConvex hull;
  for (double x : sgrid) {
    const double y = pow_safe(x, double(d)) * phi(pow_safe(x, -double(d)));
    while (hull.sx.size() >= 2) {
      const std::size_t n = hull.sx.size();
      const double cross = (hull.sx[n - 1] - hull.sx[n - 2]) * (y - hull.sy[n - 2]) -
                           (x - hull.sx[n - 2]) * (hull.sy[n - 1] - hull.sy[n - 2]);
      if (cross <= 0.0) {
        hull.sx.pop_back();
        hull.sy.pop_back();
      } else {
        break;
      }
    }
    hull.sx.push_back(x);
    hull.sy.push_back(y);
  }
  hull.blend_w.assign(hull.sx.size(), 0.0);
  for (std::size_t v = 1; v + 1 < hull.sx.size(); ++v)
    hull.blend_w[v] = 0.25 * std::min(hull.sx[v] - hull.sx[v - 1], hull.sx[v + 1] - hull.sx[v]);

  // Strictly convex decreasing-to-constant correction, affine near 0.
  const double s_mid = std::sqrt(s_lo * s_hi);
  const double w_eta = 0.5 * s_mid;
  const double c_eta =
      1e-6 * (1.0 + std::abs(hull.sy.front() - hull.sy.back()) / (s_hi - s_lo));
  auto eta = [s_mid, w_eta, c_eta](double s) {
    const double x = (s_mid - s) / w_eta;
    const double soft = x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
    return c_eta * w_eta * soft;
  };

  SuperlinearResult out;
  out.s_grid = hull.sx;
  out.hull = hull.sy;
  auto hull_ptr = std::make_shared<PiecewiseConvex>(std::move(hull));
  const double inv_d = 1.0 / double(d);
  out.Phi = [hull_ptr, eta, inv_d](double z) {
    if (!(z > 0.0)) throw DomainError("Phi needs z > 0");
    const double s = pow_safe(z, -inv_d);
    return (hull_ptr->eval(s) + eta(s)) * z;
  };
  double C = 0.0;
  for (double z : zprobe) C = std::max(C, out.Phi(z) / (phi(z) + 1.0));
  out.C = C;
  return out;
}

// ---------------------------------------------------------------------------
// Truncation and McCann-side decomposition
// ---------------------------------------------------------------------------

namespace {

// (M f)''(s) = d(d-1) s^{d-2} f(z) - d(d-1) f'(z) s^{-2} + d^2 f''(z) s^{-d-2},  z = s^-d.
double mccann_second_derivative(const DerivedEnergy& e, double dd, double s) {
  const double z = pow_safe(s, -dd);
  return dd * (dd - 1.0) * pow_safe(s, dd - 2.0) * e.f(z) -
         dd * (dd - 1.0) * e.fp(z) / (s * s) + dd * dd * e.fpp(z) * pow_safe(s, -dd - 2.0);
}

// Exact double integral of a piecewise-linear nonnegative g'' sampled on a grid,
// anchored g(s_last) = g'(s_last) = 0 and integrated leftward. Evaluation is the
// closed-form piecewise cubic, so the table is convex to machine precision.
struct CubicFromSecond {
  std::vector<double> s;    // nodes, increasing
  std::vector<double> npp;  // g'' >= 0 at nodes
  std::vector<double> dv;   // g' at nodes
  std::vector<double> vv;   // g at nodes

  void build_rightward_zero() {
    const std::size_t N = s.size();
    dv.assign(N, 0.0);
    vv.assign(N, 0.0);
    for (std::size_t i = N - 1; i-- > 0;) {
      const double h = s[i + 1] - s[i];
      dv[i] = dv[i + 1] - 0.5 * h * (npp[i] + npp[i + 1]);
      vv[i] = vv[i + 1] - (h * dv[i + 1] - h * h * (npp[i] / 6.0 + npp[i + 1] / 3.0));
    }
  }

  std::size_t cell(double x) const {
    auto it = std::upper_bound(s.begin(), s.end(), x);
    std::size_t i = (it == s.begin()) ? 0 : std::size_t(it - s.begin()) - 1;
    return std::min(i, s.size() - 2);
  }

  double g(double x) const {
    const std::size_t i = cell(x);
    const double h = s[i + 1] - s[i], t = x - s[i];
    return vv[i] + t * (dv[i] + t * (npp[i] / 2.0 + t * (npp[i + 1] - npp[i]) / (6.0 * h)));
  }
  double gp(double x) const {
    const std::size_t i = cell(x);
    const double h = s[i + 1] - s[i], t = x - s[i];
    return dv[i] + t * (npp[i] + t * (npp[i + 1] - npp[i]) / (2.0 * h));
  }
  double gpp(double x) const {
    const std::size_t i = cell(x);
    const double h = s[i + 1] - s[i], t = x - s[i];
    return npp[i] + t * (npp[i + 1] - npp[i]) / h;
  }
};

}  // namespace

Decomposition decompose_truncated(const EnergySpec& spec, double z0, double z1, int d) {
  if (!(0.0 < z0 && z0 < z1)) throw PreconditionError("need 0 < z0 < z1");
  if (d < 1) throw PreconditionError("dimension d >= 1 required");
  DerivedEnergy e(spec);
  for (double z : {z0, 0.5 * (z0 + z1), z1})
    if (!std::isfinite(e.fpp(z))) throw PreconditionError("f'' not evaluable on [z0, z1]");

  const double a0 = e.fp(z0), a1 = e.fp(z1);
  const double b0 = e.Lf(z0);
  const double b1 = e.Lf(z0) - e.Lf(z1);  // <= 0 since L_f is nondecreasing
  const double dd = double(d);
  const double s1 = pow_safe(z1, -1.0 / dd);
  const double s0 = pow_safe(z0, -1.0 / dd);

  auto f_tilde = [e, a0, a1, b0, b1, z0, z1](double z) {
    if (!(z > 0.0)) throw DomainError("f_tilde needs z > 0");
    if (z <= z0) return a0 * z;
    if (z >= z1) return a1 * z + b1;
    return e.f(z) + b0;
  };

  // ((M f_tilde)'')_- on [s1, s0]; branch forms outside are closed form.
  auto neg_part_mid = [e, dd, b0](double s) {
    const double v =
        mccann_second_derivative(e, dd, s) + b0 * dd * (dd - 1.0) * pow_safe(s, dd - 2.0);
    return v < 0.0 ? -v : 0.0;
  };

  auto model = std::make_shared<CubicFromSecond>();
  {
    const std::size_t N = 4097;
    model->s = probe_grid(s1, s0, N);
    model->npp.resize(N);
    for (std::size_t i = 0; i < N; ++i) model->npp[i] = neg_part_mid(model->s[i]);
    model->build_rightward_zero();
  }

  // Left branch s <= s1: g2'' = (-b1)_+ d(d-1) s^{d-2}, matched C^1 at s1.
  const double neg_b1 = std::max(-b1, 0.0);
  const double mid_val = model->vv.front(), mid_slope = model->dv.front();
  const double c1 = mid_slope - neg_b1 * dd * pow_safe(s1, dd - 1.0);
  const double c2 = mid_val - neg_b1 * pow_safe(s1, dd) - c1 * s1;

  auto g2 = [model, neg_b1, c1, c2, dd, s0, s1](double s) -> double {
    if (s >= s0) return 0.0;
    if (s <= s1) return neg_b1 * pow_safe(s, dd) + c1 * s + c2;
    return model->g(s);
  };
  auto g2p = [model, neg_b1, c1, dd, s0, s1](double s) -> double {
    if (s >= s0) return 0.0;
    if (s <= s1) return neg_b1 * dd * pow_safe(s, dd - 1.0) + c1;
    return model->gp(s);
  };
  auto g2pp = [model, neg_b1, dd, s0, s1](double s) -> double {
    if (s >= s0) return 0.0;
    if (s <= s1) return neg_b1 * dd * (dd - 1.0) * pow_safe(s, dd - 2.0);
    return model->gpp(s);
  };

  const double inv_d = 1.0 / dd;
  auto f2 = [g2, inv_d](double z) {
    if (!(z > 0.0)) throw DomainError("f2 needs z > 0");
    return g2(pow_safe(z, -inv_d)) * z;
  };
  auto f2p = [g2, g2p, inv_d, dd](double z) {
    const double w = pow_safe(z, -inv_d);
    return g2(w) - g2p(w) * w / dd;
  };
  auto f2pp = [g2p, g2pp, inv_d, dd](double z) {
    const double w = pow_safe(z, -inv_d);
    return (w / (dd * z)) * ((w / dd) * g2pp(w) - (1.0 - inv_d) * g2p(w));
  };

  // f1 through the transform-side sum M f1 = M f_tilde + g2.
  auto Mft = [e, a0, a1, b0, b1, dd, s0, s1](double s) {
    if (s >= s0) return a0;
    if (s <= s1) return a1 + b1 * pow_safe(s, dd);
    return pow_safe(s, dd) * e.f(pow_safe(s, -dd)) + b0 * pow_safe(s, dd);
  };
  auto f1 = [Mft, g2, inv_d](double z) {
    if (!(z > 0.0)) throw DomainError("f1 needs z > 0");
    const double w = pow_safe(z, -inv_d);
    return (Mft(w) + g2(w)) * z;
  };

  Decomposition out;
  out.f_tilde = f_tilde;
  out.f1 = f1;
  out.f2 = f2;
  out.f2p = f2p;
  out.f2pp = f2pp;
  out.z0 = z0;
  out.z1 = z1;
  out.d = d;

  double C = 0.0;
  for (double z : probe_grid(z0, std::max(1e4, z1 * 1e3), 256))
    C = std::max(C, f2pp(z) * pow_safe(z, 1.0 + inv_d));
  out.decay_constant = C;

  const auto sprobe = probe_grid(s1 * 1e-2, s0 * 1e2, 256);
  out.f1_mccann = check_mccann_map(f1, 0.0, d, sprobe);
  out.f2_mccann = check_mccann_map(f2, 0.0, d, sprobe);
  return out;
}

}  // namespace wgf
