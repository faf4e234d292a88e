#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "wgf/energy.hpp"
#include "wgf/errors.hpp"

namespace wgf {

// Density samples at midpoints x_i = a + (i - 1/2)(b-a)/n of a uniform grid on
// (a, b), nonnegative, midpoint-rule mass 1.
struct GridDensity {
  double a = 0.0, b = 1.0;
  std::vector<double> values;

  std::size_t n() const { return values.size(); }
  double dx() const { return (b - a) / double(values.size()); }
  double midpoint(std::size_t i) const { return a + (double(i) + 0.5) * dx(); }
  double mass() const;
  void validate() const;  // nonnegative, |mass - 1| <= 1e-10
};

// Monotone quantile values on the uniform mass grid: X[i] approximates the
// quantile at s = i/m; each cell (X[i-1], X[i]) carries mass 1/m. The solver's
// state variable.
struct QuantileRep {
  double a = 0.0, b = 1.0;
  std::vector<double> X;  // m+1 nondecreasing values in [a, b]

  std::size_t m() const { return X.size() - 1; }
  double gap(std::size_t i) const { return X[i + 1] - X[i]; }       // 0-based cell i
  double mid(std::size_t i) const { return 0.5 * (X[i] + X[i + 1]); }
  void validate() const;  // a <= X0 <= ... <= Xm <= b, gaps > 0
};

// Test-scale atomic measure for the exhaustive transport oracle.
struct DiscreteMeasure {
  std::vector<std::pair<double, double>> atoms;  // (location, mass), masses sum to 1
  void validate() const;
};

// CDF inversion: X[i] solves CDF(X[i]) = i/m with the left-continuous
// piecewise-linear midpoint CDF; X0/Xm are the support edges.
QuantileRep density_to_quantile(const GridDensity& rho, std::size_t m);

// Histogram of the 1/m mass cells onto an n-cell grid with proportional
// overlap allocation.
GridDensity quantile_to_density(const QuantileRep& Xr, std::size_t n);

// W_p as the L^p distance of cell-midpoint quantiles:
// W_p^p = (1/m) sum |Xbar_i - Ybar_i|^p.
double wasserstein_p(const QuantileRep& X, const QuantileRep& Y, double p);

// Exact discrete transport optimum by exhaustive vertex enumeration of the
// transportation polytope; <= 8 atoms per side.
double wasserstein_lp_oracle(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p);

// Sorted monotone coupling cost, the 1D closed-form optimum.
double monotone_coupling_cost(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p);

// Discrete total variation sum |rho_{i+1} - rho_i| on the density grid.
double tv_norm(const GridDensity& rho);

// F(rho) = int f(rho) dx, midpoint rule / quantile form (1/m) sum G(m dX).
double energy_functional(const GridDensity& rho, const DerivedEnergy& energy);
double energy_functional(const QuantileRep& Xr, const DerivedEnergy& energy);

// Snapshot CSV (header "x,rho", 17 significant digits, LF endings).
void write_density_csv(const std::string& path, const GridDensity& rho);
GridDensity read_density_csv(const std::string& path);

std::string format_g17(double v);

}  // namespace wgf
