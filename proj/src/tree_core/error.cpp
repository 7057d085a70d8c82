#include "treegress/error.hpp"

namespace treegress {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPrefixClosed: return "NotPrefixClosed";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::UnknownSymbol: return "UnknownSymbol";
    case ErrorCode::UnknownOperator: return "UnknownOperator";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::WeightSumError: return "WeightSumError";
    case ErrorCode::UnboundVariable: return "UnboundVariable";
    case ErrorCode::NonTerminatingIter: return "NonTerminatingIter";
    case ErrorCode::DepthBudgetExhausted: return "DepthBudgetExhausted";
    case ErrorCode::StateBudgetExceeded: return "StateBudgetExceeded";
    case ErrorCode::AlphabetMismatch: return "AlphabetMismatch";
    case ErrorCode::ImpossibleContext: return "ImpossibleContext";
    case ErrorCode::NotGenerative: return "NotGenerative";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::AllDrawsNonFinite: return "AllDrawsNonFinite";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

SyntaxError::SyntaxError(ErrorCode code, std::size_t line, std::size_t column,
                         const std::string& message)
    : Error(code, std::to_string(line) + ":" + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

}  // namespace treegress
