#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace treegress {

enum class ErrorCode {
  NotPrefixClosed,
  ArityMismatch,
  UnknownSymbol,
  UnknownOperator,
  MissingInput,
  SyntaxError,
  WeightSumError,
  UnboundVariable,
  NonTerminatingIter,
  DepthBudgetExhausted,
  StateBudgetExceeded,
  AlphabetMismatch,
  ImpossibleContext,
  NotGenerative,
  SizeMismatch,
  LengthMismatch,
  AllDrawsNonFinite,
  ConfigInvalid,
  IoError,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Location is 1-based; line 0 means "no location".
class SyntaxError : public Error {
 public:
  SyntaxError(ErrorCode code, std::size_t line, std::size_t column, const std::string& message);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace treegress
