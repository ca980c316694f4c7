// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace milr {

/// Domain error codes. Every exception thrown by the core carries one, and
/// the C API maps them onto status codes.
enum class ErrorCode {
  InvalidArgument,
  DegenerateHistogram,
  MalformedJson,
  MissingSlide,
  DuplicatePatient,
  Io,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  NonFiniteValue,
  WrongPatchSize,
  SingularStainMatrix,
  DimensionMismatch,
  NonFiniteGradient,
  SingleClassTraining,
  SingleClassCohort,
  EmptyPatient,
  UnlabeledTile,
  NoTumorTiles,
  SingleClassLabels,
  NoPositives,
  TooFewPatients,
  NoTumorRegion,
  NoCellsFound,
  EmptySelection,
  MismatchedGrid,
  NothingToUndo,
  UnknownTile,
  PortInUse,
  UnwritableLabels,
  ConfigInconsistent,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &message) {
  throw Error(code, message);
}

#define MILR_REQUIRE(cond, code, msg)                                          \
  do {                                                                         \
    if (!(cond))                                                               \
      ::milr::fail(code, msg);                                                 \
  } while (0)

} // namespace milr
