#pragma once

#include <stdexcept>
#include <string>

namespace magtable {

/// Base class for all domain errors thrown by this library. API misuse
/// (wrong vector lengths, etc.) throws std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluation point inside the guard radius of a source (the point-source
/// model is invalid there; no silent infinities).
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A matrix required to have full (or minimum) rank is numerically
/// rank-deficient; the message names the deficient direction.
class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

/// A coil top reached or crossed the plane where the height barrier is
/// undefined (h >= 0).
class BarrierViolationError : public Error {
 public:
  using Error::Error;
};

/// Two coil surfaces touch or overlap (separation <= diameter).
class CollisionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries file/line/field context.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace magtable
