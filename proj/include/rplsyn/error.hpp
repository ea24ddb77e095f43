#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rplsyn {

enum class Errc {
  UnknownColumn,
  LevelNotInSchema,
  NonIntegerCount,
  MissingValue,
  InvalidSchema,
  EmptyColumn,
  NoCategoricalColumns,
  InvalidArgument,
  NumericalOverflow,
  OrthantProbabilityUnderflow,
  SingularBlock,
  DegenerateResponse,
  SchemaMismatch,
  RankDeficient,
  NonNumericResponse,
  MismatchedCoefficientSets,
  ZeroWidthInterval,
  ZeroPosteriorSD,
  InsufficientPool,
  ArchiveFormat,
  Io,
};

std::string_view to_string(Errc code) noexcept;

// Every library failure is reported through this type; the code identifies
// the failure class and the message names the offending column/row/value.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Non-fatal diagnostics (ordinal-with-few-levels, separation, degenerate
// bandwidth, ...). The default handler writes to stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace rplsyn
