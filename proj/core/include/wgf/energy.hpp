#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wgf/errors.hpp"

namespace wgf {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Geometric probe grid, the default finite stand-in for "all z > 0".
std::vector<double> probe_grid(double lo = 1e-4, double hi = 1e4, std::size_t n = 256);

enum class EnergyKind { Entropy, Power, QLaplacian, Tabulated };

// Monotone-convex table for user-supplied energies: f'' interpolated with a
// monotone cubic, f' and f recovered by exact segment integration upward.
struct TabulatedData {
  std::vector<double> z;    // increasing, positive
  std::vector<double> f;    // node values (anchors)
  std::vector<double> fp;
  std::vector<double> fpp;  // > 0
};

// Scalar internal energy f with the metadata the estimates need:
// theta with f''(z) >= theta_constant * z^-theta for z >= theta_threshold,
// growth slope L = lim f(t)/t, and f(0+).
struct EnergySpec {
  EnergyKind kind = EnergyKind::Entropy;
  double power_m = 2.0;    // Power: f(z) = z^m/(m-1), m > 0, m != 1
  double qlap_p = 2.0;     // QLaplacian: f''(z) = z^{1-p}
  std::shared_ptr<const TabulatedData> table;
  double entropy_eps = 0.0;  // additive eps * z log z regularization

  double theta = 1.0;
  double theta_constant = 1.0;
  double theta_threshold = 1.0;
  double growth_slope = kInf;  // L
  double f_at_zero = 0.0;      // f(0+), may be +inf
  bool lf_unbounded = true;    // sup_z L_f(z) = +inf (slope barrier in quantile form)
  std::string name = "entropy";
};

// Catalog keys: "entropy" | "power:m=<real>" | "qlaplacian:p=<real>" | "tabulated:<csv path>"
EnergySpec parse_energy(const std::string& key);
EnergySpec make_entropy();
EnergySpec make_power(double m);
EnergySpec make_qlaplacian(double p);
EnergySpec make_tabulated(const std::string& csv_path);

// f_eps(z) = f(z) + eps z log z, derivative bundle shifted accordingly.
EnergySpec regularize_entropy(const EnergySpec& spec, double eps);

// Immutable evaluation bundle: f, f', f'', L_f(z) = z f'(z) - f(z) and the
// quantile-coordinate integrand G(v) = v f(1/v).
class DerivedEnergy {
 public:
  explicit DerivedEnergy(EnergySpec spec);

  double f(double z) const;
  double fp(double z) const;
  double fpp(double z) const;
  double Lf(double z) const { return z * fp(z) - f(z); }

  double G(double v) const;
  double Gp(double v) const;   // = -L_f(1/v)
  double Gpp(double v) const;  // = f''(1/v) / v^3

  const EnergySpec& spec() const { return spec_; }

 private:
  void check_domain(double z) const;
  EnergySpec spec_;
};

// Validates the spec's hypotheses on a probe grid before packaging.
DerivedEnergy derive(const EnergySpec& spec);

struct ExponentSet {
  double p = 2.0;
  double q = 2.0;
  int d = 1;
  double theta = 1.0;
  double alpha = 1.0;  // 2 - q(1 + 1/d) + theta (q-1), +inf when theta = +inf
  double beta = 1.0;   // max(1 - 1/d, theta/p + 1/q)
  bool entropy_branch = false;  // alpha == 1
  bool void_branch = false;     // alpha < 1
  bool bounded_branch = false;  // alpha = +inf
};
ExponentSet exponents(const EnergySpec& spec, double p, int d);
double conjugate_exponent(double p);

// s -> s^d f(s^-d) and the inverse z -> g(z^{-1/d}) z.
std::function<double(double)> mccann_transform(const EnergySpec& spec, int d);
std::function<double(double)> mccann_transform_inverse(const std::function<double(double)>& g, int d);

struct McCannReport {
  bool pass = false;
  double witness = 0.0;   // probe point where convexity/monotonicity failed
  std::string reason;
};

// (H5): f(0)=0 and Mf convex non-increasing, sampled on the probe grid.
McCannReport check_mccann(const EnergySpec& spec, int d, std::span<const double> probe = {});
McCannReport check_mccann_map(const std::function<double(double)>& f, double f_at_zero, int d,
                              std::span<const double> probe = {});

// h'(z) = z^{(alpha-1)/q} f''(z)^{1/p}; h anchored by h(1) = 0.
struct RegularityFunction {
  std::function<double(double)> hp;
  std::function<double(double)> h;
  double alpha = 0.0;
};
RegularityFunction reg_h_prime(const EnergySpec& spec, double p, int d);
// Same kernel at an arbitrary exponent gamma in place of alpha; used by the
// flow-interchange diagnostics.
RegularityFunction reg_h_general(const EnergySpec& spec, double p, double gamma);

// Flux nonlinearity: H'(s) = s^{p-1} f''(s), H(0+) = 0. The PDE reads
// d_t rho = Delta_q(H(rho)).
struct FluxFunction {
  std::function<double(double)> Hp;
  std::function<double(double)> H;
};
FluxFunction flux_h_prime(const EnergySpec& spec, double p);

struct SuperlinearResult {
  std::function<double(double)> Phi;
  double C = 0.0;  // Phi <= C (phi + 1) on the probe range
  std::vector<double> s_grid;   // table of the hull in transform coordinates
  std::vector<double> hull;
};
// Lower convex hull of M phi on a grid, strict-convexity correction, C^2
// smoothing by local averaging, inverse transform.
SuperlinearResult construct_superlinear(const std::function<double(double)>& phi, int d,
                                        double z_lo = 1e-3, double z_hi = 1e6);

struct Decomposition {
  std::function<double(double)> f_tilde;
  std::function<double(double)> f1;
  std::function<double(double)> f2;
  std::function<double(double)> f2p;
  std::function<double(double)> f2pp;
  double decay_constant = 0.0;  // f2''(z) <= decay_constant z^-(1+1/d) for z >= z0
  McCannReport f1_mccann;
  McCannReport f2_mccann;
  double z0 = 0.0, z1 = 0.0;
  int d = 1;
};
// Linear truncation of f outside [z0, z1] plus the McCann-side split
// f_tilde = f1 - f2 with both parts satisfying (H5).
Decomposition decompose_truncated(const EnergySpec& spec, double z0, double z1, int d);

}  // namespace wgf
