#ifndef PEER_ERRORS_HPP
#define PEER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace peer {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error { using Error::Error; };
struct SingularMatrix : Error { using Error::Error; };
struct UnknownMethod : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct InvariantViolation : Error { using Error::Error; };
struct UnsupportedQ : Error { using Error::Error; };
struct MissingMatrix : Error { using Error::Error; };
struct NotOnCurve : Error { using Error::Error; };
struct DegenerateNodes : Error { using Error::Error; };
struct NotZeroStable : Error { using Error::Error; };
struct SingularK : Error { using Error::Error; };
struct MissingAtilde : Error { using Error::Error; };
struct NewtonDivergence : Error { using Error::Error; };
struct SingularStageJacobian : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct ReferenceNotConverged : Error { using Error::Error; };
struct NonpositiveEpsilon : Error { using Error::Error; };

}  // namespace peer

#endif
