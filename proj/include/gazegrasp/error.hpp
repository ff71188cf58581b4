#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazegrasp {

enum class Errc {
  InvalidArgument,
  InsufficientSamples,
  DegenerateDesign,
  NotAGrid,
  NonMonotonicTime,
  StaleFrame,
  UnexpectedCompletion,
  InsufficientPairs,
  DegenerateConfiguration,
  PointAtInfinity,
  RayParallelToPlane,
  RobotBusy,
  TargetOutOfBounds,
  ObjectMissing,
  NothingHeld,
  NotCalibrated,
  AbortedByClient,
  IncompleteMatrix,
  ParseError,
  IoError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::DegenerateDesign: return "DegenerateDesign";
    case Errc::NotAGrid: return "NotAGrid";
    case Errc::NonMonotonicTime: return "NonMonotonicTime";
    case Errc::StaleFrame: return "StaleFrame";
    case Errc::UnexpectedCompletion: return "UnexpectedCompletion";
    case Errc::InsufficientPairs: return "InsufficientPairs";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::PointAtInfinity: return "PointAtInfinity";
    case Errc::RayParallelToPlane: return "RayParallelToPlane";
    case Errc::RobotBusy: return "RobotBusy";
    case Errc::TargetOutOfBounds: return "TargetOutOfBounds";
    case Errc::ObjectMissing: return "ObjectMissing";
    case Errc::NothingHeld: return "NothingHeld";
    case Errc::NotCalibrated: return "NotCalibrated";
    case Errc::AbortedByClient: return "AbortedByClient";
    case Errc::IncompleteMatrix: return "IncompleteMatrix";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace gazegrasp
