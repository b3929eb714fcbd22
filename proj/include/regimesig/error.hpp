#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regimesig {

enum class Errc {
  // frame
  MissingColumn,
  UnsortableDates,
  EmptyFile,
  NoGridFrame,
  DisjointRanges,
  UnknownColumn,
  LagTooLarge,
  TooFewRows,
  // analytics
  NonPositivePrice,
  TooShort,
  WindowTooLarge,
  ZeroVariance,
  LengthMismatch,
  SeriesTooShort,
  // neural / reduce / embed
  ShapeMismatch,
  EmptySplit,
  DivergedLoss,
  KTooLarge,
  FitDiverged,
  NonFiniteCoords,
  // cluster
  MinSamplesTooLarge,
  TooFewPoints,
  TooFewClusters,
  WrongClusterCount,
  // regime
  SingleClass,
  NonFiniteFeature,
  // metrics
  Empty,
  ZeroTarget,
  // fusion
  OutOfRange,
  EmptyIntersection,
  // cli / io
  MissingUpstream,
  ConfigInvalid,
  Io,
  InvalidArgument,
};

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::UnsortableDates: return "UnsortableDates";
    case Errc::EmptyFile: return "EmptyFile";
    case Errc::NoGridFrame: return "NoGridFrame";
    case Errc::DisjointRanges: return "DisjointRanges";
    case Errc::UnknownColumn: return "UnknownColumn";
    case Errc::LagTooLarge: return "LagTooLarge";
    case Errc::TooFewRows: return "TooFewRows";
    case Errc::NonPositivePrice: return "NonPositivePrice";
    case Errc::TooShort: return "TooShort";
    case Errc::WindowTooLarge: return "WindowTooLarge";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::SeriesTooShort: return "SeriesTooShort";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::FitDiverged: return "FitDiverged";
    case Errc::NonFiniteCoords: return "NonFiniteCoords";
    case Errc::MinSamplesTooLarge: return "MinSamplesTooLarge";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::TooFewClusters: return "TooFewClusters";
    case Errc::WrongClusterCount: return "WrongClusterCount";
    case Errc::SingleClass: return "SingleClass";
    case Errc::NonFiniteFeature: return "NonFiniteFeature";
    case Errc::Empty: return "Empty";
    case Errc::ZeroTarget: return "ZeroTarget";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::EmptyIntersection: return "EmptyIntersection";
    case Errc::MissingUpstream: return "MissingUpstream";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::Io: return "Io";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc kinds above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace regimesig
