// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "error.hpp"

namespace milr {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
  case ErrorCode::MalformedJson: return "MalformedJson";
  case ErrorCode::MissingSlide: return "MissingSlide";
  case ErrorCode::DuplicatePatient: return "DuplicatePatient";
  case ErrorCode::Io: return "Io";
  case ErrorCode::BadMagic: return "BadMagic";
  case ErrorCode::VersionMismatch: return "VersionMismatch";
  case ErrorCode::TruncatedFile: return "TruncatedFile";
  case ErrorCode::NonFiniteValue: return "NonFiniteValue";
  case ErrorCode::WrongPatchSize: return "WrongPatchSize";
  case ErrorCode::SingularStainMatrix: return "SingularStainMatrix";
  case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
  case ErrorCode::SingleClassTraining: return "SingleClassTraining";
  case ErrorCode::SingleClassCohort: return "SingleClassCohort";
  case ErrorCode::EmptyPatient: return "EmptyPatient";
  case ErrorCode::UnlabeledTile: return "UnlabeledTile";
  case ErrorCode::NoTumorTiles: return "NoTumorTiles";
  case ErrorCode::SingleClassLabels: return "SingleClassLabels";
  case ErrorCode::NoPositives: return "NoPositives";
  case ErrorCode::TooFewPatients: return "TooFewPatients";
  case ErrorCode::NoTumorRegion: return "NoTumorRegion";
  case ErrorCode::NoCellsFound: return "NoCellsFound";
  case ErrorCode::EmptySelection: return "EmptySelection";
  case ErrorCode::MismatchedGrid: return "MismatchedGrid";
  case ErrorCode::NothingToUndo: return "NothingToUndo";
  case ErrorCode::UnknownTile: return "UnknownTile";
  case ErrorCode::PortInUse: return "PortInUse";
  case ErrorCode::UnwritableLabels: return "UnwritableLabels";
  case ErrorCode::ConfigInconsistent: return "ConfigInconsistent";
  }
  return "Unknown";
}

} // namespace milr
