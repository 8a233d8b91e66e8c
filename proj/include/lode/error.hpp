#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lode {

enum class ErrorCode {
  ContractViolation,
  NumericDomain,
  Divergence,
  Stiffness,
  EmptyWindow,
  TrainingInstability,
  EnsembleDegenerate,
  QueryInfeasible,
  Parse,
  Validation,
  VersionMismatch,
  NotFound,
  Io,
};

/// Stable machine-readable identifier, used in service error bodies and CLI diagnostics.
std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& message)
      : Error(ErrorCode::ContractViolation, message) {}
};

class NumericDomainError : public Error {
 public:
  explicit NumericDomainError(const std::string& message)
      : Error(ErrorCode::NumericDomain, message) {}
};

/// Non-finite state produced by an integrator; carries the time at which it was detected.
class DivergenceError : public Error {
 public:
  DivergenceError(double time, const std::string& message)
      : Error(ErrorCode::Divergence, message), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class StiffnessError : public Error {
 public:
  StiffnessError(double time, const std::string& message)
      : Error(ErrorCode::Stiffness, message), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class EmptyWindowError : public Error {
 public:
  explicit EmptyWindowError(const std::string& message)
      : Error(ErrorCode::EmptyWindow, message) {}
};

class TrainingInstabilityError : public Error {
 public:
  explicit TrainingInstabilityError(const std::string& message)
      : Error(ErrorCode::TrainingInstability, message) {}
};

class EnsembleDegenerateError : public Error {
 public:
  EnsembleDegenerateError(std::size_t dropped, const std::string& message)
      : Error(ErrorCode::EnsembleDegenerate, message), dropped_(dropped) {}
  std::size_t dropped() const noexcept { return dropped_; }

 private:
  std::size_t dropped_;
};

/// Raised when a hypothetical point is too far from everything the model proposes.
class QueryInfeasibleError : public Error {
 public:
  QueryInfeasibleError(double best_distance, double ess, const std::string& message)
      : Error(ErrorCode::QueryInfeasible, message),
        best_distance_(best_distance),
        ess_(ess) {}
  double best_distance() const noexcept { return best_distance_; }
  double effective_sample_size() const noexcept { return ess_; }

 private:
  double best_distance_;
  double ess_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorCode::Parse, "line " + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input document failed validation; `field` names the offending member.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(ErrorCode::Validation, message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class VersionMismatchError : public Error {
 public:
  explicit VersionMismatchError(const std::string& message)
      : Error(ErrorCode::VersionMismatch, message) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& message) : Error(ErrorCode::NotFound, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorCode::Io, message) {}
};

}  // namespace lode
