#include "wgf/measure.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wgf {

double GridDensity::mass() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s * dx();
}

void GridDensity::validate() const {
  if (values.empty() || !(b > a)) throw ShapeMismatch("empty density or bad interval");
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("density values must be finite and >= 0");
  if (std::abs(mass() - 1.0) > 1e-10)
    throw DomainError("density mass " + std::to_string(mass()) + " != 1");
}

void QuantileRep::validate() const {
  if (X.size() < 3 || !(b > a)) throw ShapeMismatch("quantile rep needs m >= 2");
  if (X.front() < a - 1e-12 * (b - a) || X.back() > b + 1e-12 * (b - a))
    throw DomainError("quantiles leave the interval");
  for (std::size_t i = 0; i + 1 < X.size(); ++i)
    if (!(X[i + 1] > X[i])) throw DegenerateError("quantile gaps must be strictly positive");
}

void DiscreteMeasure::validate() const {
  double s = 0.0;
  for (auto& [x, w] : atoms) {
    if (!(w > 0.0)) throw DomainError("atom masses must be positive");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12) throw DomainError("atom masses must sum to 1");
}

QuantileRep density_to_quantile(const GridDensity& rho, std::size_t m) {
  rho.validate();
  if (m < 2) throw PreconditionError("density_to_quantile needs m >= 2");
  const std::size_t n = rho.n();
  const double dx = rho.dx();

  // CDF at cell edges.
  std::vector<double> C(n + 1, 0.0);
  for (std::size_t j = 0; j < n; ++j) C[j + 1] = C[j] + rho.values[j] * dx;
  const double total = C[n];

  // Support edges.
  std::size_t first = 0, last = n - 1;
  while (first < n && rho.values[first] == 0.0) ++first;
  while (last > 0 && rho.values[last] == 0.0) --last;
  const double left_edge = rho.a + double(first) * dx;
  const double right_edge = rho.a + double(last + 1) * dx;

  QuantileRep Xr;
  Xr.a = rho.a;
  Xr.b = rho.b;
  Xr.X.assign(m + 1, 0.0);
  Xr.X[0] = left_edge;
  Xr.X[m] = right_edge;
  std::size_t j = 0;
  for (std::size_t i = 1; i < m; ++i) {
    const double level = total * double(i) / double(m);
    while (j + 1 <= n && C[j + 1] < level) ++j;
    // level in (C[j], C[j+1]]; left-continuous inverse within cell j
    const double denom = rho.values[j];
    double x;
    if (denom > 0.0)
      x = rho.a + double(j) * dx + (level - C[j]) / denom;
    else
      x = rho.a + double(j) * dx;  // flat stretch: leftmost preimage
    Xr.X[i] = std::min(std::max(x, left_edge), right_edge);
  }
  for (std::size_t i = 0; i < m; ++i)
    if (!(Xr.X[i + 1] > Xr.X[i]))
      throw DegenerateError("CDF inversion produced a zero quantile gap");
  return Xr;
}

GridDensity quantile_to_density(const QuantileRep& Xr, std::size_t n) {
  Xr.validate();
  if (n < 2) throw PreconditionError("quantile_to_density needs n >= 2");
  GridDensity rho;
  rho.a = Xr.a;
  rho.b = Xr.b;
  rho.values.assign(n, 0.0);
  const double dx = rho.dx();
  const double w = 1.0 / double(Xr.m());

  for (std::size_t i = 0; i < Xr.m(); ++i) {
    const double lo = Xr.X[i], hi = Xr.X[i + 1];
    const double gap = hi - lo;
    std::size_t j0 = std::size_t(std::clamp((lo - Xr.a) / dx, 0.0, double(n - 1)));
    std::size_t j1 = std::size_t(std::clamp((hi - Xr.a) / dx, 0.0, double(n - 1)));
    for (std::size_t j = j0; j <= j1; ++j) {
      const double cl = Xr.a + double(j) * dx, cr = cl + dx;
      const double ov = std::min(hi, cr) - std::max(lo, cl);
      if (ov > 0.0) rho.values[j] += w * ov / (gap * dx);
    }
  }
  double total = 0.0;
  for (double& v : rho.values) total += v;
  total *= dx;
  if (std::abs(total - 1.0) > 1e-10)
    throw DomainError("overlap allocation lost mass: " + std::to_string(total));
  for (double& v : rho.values) v /= total;  // renormalization guard
  return rho;
}

double wasserstein_p(const QuantileRep& X, const QuantileRep& Y, double p) {
  if (X.m() != Y.m()) throw ShapeMismatch("quantile cell counts differ");
  const double span = X.b - X.a;
  if (std::abs(X.a - Y.a) > 1e-12 * span || std::abs(X.b - Y.b) > 1e-12 * span)
    throw ShapeMismatch("quantile intervals differ");
  if (!(p >= 1.0)) throw PreconditionError("wasserstein_p needs p >= 1");
  const std::size_t m = X.m();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) acc += std::pow(std::abs(X.mid(i) - Y.mid(i)), p);
  return std::pow(acc / double(m), 1.0 / p);
}

double monotone_coupling_cost(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p) {
  mu.validate();
  nu.validate();
  auto xs = mu.atoms;
  auto ys = nu.atoms;
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double cost = 0.0;
  std::size_t i = 0, j = 0;
  double ri = xs[0].second, rj = ys[0].second;
  while (i < xs.size() && j < ys.size()) {
    const double w = std::min(ri, rj);
    cost += w * std::pow(std::abs(xs[i].first - ys[j].first), p);
    ri -= w;
    rj -= w;
    if (ri <= 1e-15) {
      ++i;
      if (i < xs.size()) ri = xs[i].second;
    }
    if (rj <= 1e-15) {
      ++j;
      if (j < ys.size()) rj = ys[j].second;
    }
  }
  return std::pow(cost, 1.0 / p);
}

namespace {

// Exhaustive vertex enumeration: every basic solution of the transport problem
// is reachable by greedy max-allocations in some active-cell order (peel the
// forest support at a leaf and reverse).
void enumerate_vertices(std::vector<double>& r, std::vector<double>& c,
                        const std::vector<std::vector<double>>& cost, double acc, double& best) {
  if (acc >= best) return;
  int ia = -1, ja = -1;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r[i] > 1e-15) {
      ia = int(i);
      break;
    }
  for (std::size_t j = 0; j < c.size(); ++j)
    if (c[j] > 1e-15) {
      ja = int(j);
      break;
    }
  if (ia < 0 || ja < 0) {
    best = std::min(best, acc);
    return;
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] <= 1e-15) continue;
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c[j] <= 1e-15) continue;
      const double w = std::min(r[i], c[j]);
      r[i] -= w;
      c[j] -= w;
      enumerate_vertices(r, c, cost, acc + w * cost[i][j], best);
      r[i] += w;
      c[j] += w;
    }
  }
}

}  // namespace

double wasserstein_lp_oracle(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p) {
  mu.validate();
  nu.validate();
  if (mu.atoms.size() > 8 || nu.atoms.size() > 8)
    throw SizeError("lp oracle is limited to 8 atoms per measure");
  std::vector<double> r, c;
  for (auto& [x, w] : mu.atoms) r.push_back(w);
  for (auto& [y, w] : nu.atoms) c.push_back(w);
  std::vector<std::vector<double>> cost(r.size(), std::vector<double>(c.size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j)
      cost[i][j] = std::pow(std::abs(mu.atoms[i].first - nu.atoms[j].first), p);
  double best = kInf;
  enumerate_vertices(r, c, cost, 0.0, best);
  return std::pow(best, 1.0 / p);
}

double tv_norm(const GridDensity& rho) {
  double tv = 0.0;
  for (std::size_t i = 0; i + 1 < rho.n(); ++i) tv += std::abs(rho.values[i + 1] - rho.values[i]);
  return tv;
}

double energy_functional(const GridDensity& rho, const DerivedEnergy& energy) {
  const double dx = rho.dx();
  const double f0 = energy.spec().f_at_zero;
  double acc = 0.0;
  for (double v : rho.values) {
    if (v > 0.0) {
      acc += energy.f(v);
    } else if (f0 != 0.0) {
      if (!std::isfinite(f0))
        throw DomainError("f(0+) = +inf with a zero-density cell");
      acc += f0;
    }
  }
  return acc * dx;
}

double energy_functional(const QuantileRep& Xr, const DerivedEnergy& energy) {
  const std::size_t m = Xr.m();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double v = double(m) * Xr.gap(i);
    if (!(v > 0.0)) throw DegenerateError("zero quantile gap in energy evaluation");
    acc += energy.G(v);
  }
  return acc / double(m);
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_density_csv(const std::string& path, const GridDensity& rho) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write " + path);
  out << "x,rho\n";
  for (std::size_t i = 0; i < rho.n(); ++i)
    out << format_g17(rho.midpoint(i)) << ',' << format_g17(rho.values[i]) << '\n';
  if (!out) throw IOFailure("write failed for " + path);
}

GridDensity read_density_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,rho", 0) != 0)
    throw IOFailure("bad density csv header in " + path);
  std::vector<double> xs, vs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IOFailure("bad density csv row: " + line);
    xs.push_back(std::stod(line.substr(0, comma)));
    vs.push_back(std::stod(line.substr(comma + 1)));
  }
  if (xs.size() < 2) throw IOFailure("density csv needs >= 2 rows");
  GridDensity rho;
  const double dx = (xs.back() - xs.front()) / double(xs.size() - 1);
  rho.a = xs.front() - 0.5 * dx;
  rho.b = xs.back() + 0.5 * dx;
  rho.values = std::move(vs);
  rho.validate();
  return rho;
}

}  // namespace wgf
