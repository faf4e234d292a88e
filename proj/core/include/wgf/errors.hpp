#pragma once

#include <stdexcept>
#include <string>

namespace wgf {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define WGF_DEFINE_ERROR(Name)                                    \
  struct Name : Error {                                           \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

WGF_DEFINE_ERROR(DomainError);        // argument outside the mathematical domain
WGF_DEFINE_ERROR(NonConvexEnergy);    // sampled convexity violated
WGF_DEFINE_ERROR(PreconditionError);
WGF_DEFINE_ERROR(DivergenceError);    // antiderivative does not exist on the range
WGF_DEFINE_ERROR(ShapeMismatch);      // incompatible grids/intervals
WGF_DEFINE_ERROR(SizeError);
WGF_DEFINE_ERROR(DegenerateError);
WGF_DEFINE_ERROR(RangeError);
WGF_DEFINE_ERROR(LineSearchStall);    // inner solver cannot keep the iterate feasible
WGF_DEFINE_ERROR(StiffnessError);     // explicit time step underflow
WGF_DEFINE_ERROR(IncompleteTrajectory);
WGF_DEFINE_ERROR(MismatchError);      // snapshot/domain grids do not line up
WGF_DEFINE_ERROR(ConfigError);
WGF_DEFINE_ERROR(IOFailure);

#undef WGF_DEFINE_ERROR

}  // namespace wgf
