#pragma once

#include <stdexcept>
#include <string>

namespace amoe {

// Exit codes used by the command-line front end.
enum class ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or insufficient input data (missing values, bad columns, empty folds).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace amoe
