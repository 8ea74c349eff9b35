#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace isostruct {

enum class Errc {
  InvalidArgument,
  ComNotZero,
  NotSymmetric,
  DegenerateTop,
  NonPhysicalMoments,
  IndexOutOfRange,
  NonPositiveMass,
  DegenerateParent,
  UnknownKind,
  TOutOfRange,
  ShapeMismatch,
  NonFiniteActivation,
  EmptyCorpus,
  DimensionMismatch,
  TooLarge,
  HasFreeAtoms,
  NegativeHydrogenCount,
  Infeasible,
  ElementMismatch,
  ParseError,
  UnknownElement,
  SchemaError,
  IoError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ComNotZero: return "ComNotZero";
    case Errc::NotSymmetric: return "NotSymmetric";
    case Errc::DegenerateTop: return "DegenerateTop";
    case Errc::NonPhysicalMoments: return "NonPhysicalMoments";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::NonPositiveMass: return "NonPositiveMass";
    case Errc::DegenerateParent: return "DegenerateParent";
    case Errc::UnknownKind: return "UnknownKind";
    case Errc::TOutOfRange: return "TOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TooLarge: return "TooLarge";
    case Errc::HasFreeAtoms: return "HasFreeAtoms";
    case Errc::NegativeHydrogenCount: return "NegativeHydrogenCount";
    case Errc::Infeasible: return "Infeasible";
    case Errc::ElementMismatch: return "ElementMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownElement: return "UnknownElement";
    case Errc::SchemaError: return "SchemaError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. `code()` identifies the failure class; the
/// message carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Parse failure with the 1-based line number of the offending input line.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error(Errc::ParseError, "line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace isostruct
