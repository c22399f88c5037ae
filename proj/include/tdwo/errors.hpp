#pragma once

#include <stdexcept>
#include <string>

namespace tdwo {

// Base of every library error. Callers that only care about "numerical
// failure vs bad input" can catch NumericalError / ConfigError.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public Error {
public:
  using Error::Error;
};

class PreconditionViolation : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  ConfigError(const std::string& msg, int line = 0, std::string field = {})
      : Error(msg), line_(line), field_(std::move(field)) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

private:
  int line_;
  std::string field_;
};

#define TDWO_NUMERICAL_ERROR(Name)                                             \
  class Name : public NumericalError {                                         \
  public:                                                                      \
    using NumericalError::NumericalError;                                      \
  }

TDWO_NUMERICAL_ERROR(NonConvergence);
TDWO_NUMERICAL_ERROR(DefectiveMatrix);
TDWO_NUMERICAL_ERROR(NotAProjector);
TDWO_NUMERICAL_ERROR(RankMismatch);
TDWO_NUMERICAL_ERROR(GridTooCoarse);
TDWO_NUMERICAL_ERROR(ZeroVector);
TDWO_NUMERICAL_ERROR(DenominatorDegenerate);
TDWO_NUMERICAL_ERROR(DegenerateGap);
TDWO_NUMERICAL_ERROR(AmbiguousTracking);
TDWO_NUMERICAL_ERROR(BlockViolation);
TDWO_NUMERICAL_ERROR(SingularOverlap);

#undef TDWO_NUMERICAL_ERROR

// Errors that are tied to a point of the time axis carry it along so the
// runner can report where the run broke down.
class TimedError : public NumericalError {
public:
  TimedError(const std::string& msg, double t, long step = -1)
      : NumericalError(msg), t_(t), step_(step) {}
  double time() const { return t_; }
  long step() const { return step_; }

private:
  double t_;
  long step_;
};

class ExceptionalPointProximity : public TimedError {
public:
  using TimedError::TimedError;
};

class SchemeDivergence : public TimedError {
public:
  using TimedError::TimedError;
};

class StageOverflow : public TimedError {
public:
  using TimedError::TimedError;
};

} // namespace tdwo
