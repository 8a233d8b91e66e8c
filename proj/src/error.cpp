#include "lode/error.hpp"

namespace lode {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ContractViolation: return "contract_violation";
    case ErrorCode::NumericDomain: return "numeric_domain";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::Stiffness: return "stiffness";
    case ErrorCode::EmptyWindow: return "empty_window";
    case ErrorCode::TrainingInstability: return "training_instability";
    case ErrorCode::EnsembleDegenerate: return "ensemble_degenerate";
    case ErrorCode::QueryInfeasible: return "query_infeasible";
    case ErrorCode::Parse: return "parse_error";
    case ErrorCode::Validation: return "validation_error";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Io: return "io_error";
  }
  return "unknown";
}

}  // namespace lode
