#include "rplsyn/error.hpp"

#include <iostream>
#include <mutex>

namespace rplsyn {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownColumn: return "UnknownColumn";
    case Errc::LevelNotInSchema: return "LevelNotInSchema";
    case Errc::NonIntegerCount: return "NonIntegerCount";
    case Errc::MissingValue: return "MissingValue";
    case Errc::InvalidSchema: return "InvalidSchema";
    case Errc::EmptyColumn: return "EmptyColumn";
    case Errc::NoCategoricalColumns: return "NoCategoricalColumns";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::NumericalOverflow: return "NumericalOverflow";
    case Errc::OrthantProbabilityUnderflow: return "OrthantProbabilityUnderflow";
    case Errc::SingularBlock: return "SingularBlock";
    case Errc::DegenerateResponse: return "DegenerateResponse";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::NonNumericResponse: return "NonNumericResponse";
    case Errc::MismatchedCoefficientSets: return "MismatchedCoefficientSets";
    case Errc::ZeroWidthInterval: return "ZeroWidthInterval";
    case Errc::ZeroPosteriorSD: return "ZeroPosteriorSD";
    case Errc::InsufficientPool: return "InsufficientPool";
    case Errc::ArchiveFormat: return "ArchiveFormat";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

namespace {

std::mutex& handler_mutex() {
  static std::mutex m;
  return m;
}

WarningHandler& handler() {
  static WarningHandler h = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return h;
}

}  // namespace

void set_warning_handler(WarningHandler h) {
  std::lock_guard lock(handler_mutex());
  handler() = std::move(h);
}

void warn(std::string_view message) {
  std::lock_guard lock(handler_mutex());
  if (handler()) handler()(message);
}

}  // namespace rplsyn
