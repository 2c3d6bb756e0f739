// Copyright 2026 The damer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace damer {

/// Every failure raised by the library carries one of these kinds so callers
/// (and the CLI exit-code table) can dispatch without string matching.
enum class ErrorKind {
  kShapeMismatch,
  kHeadDivisibility,
  kBadTemperature,
  kNonFinite,
  kNonFiniteLoss,
  kBadEpoch,
  kNotADistribution,
  kBatchTooLarge,
  kEmptyQueue,
  kEmptySplit,
  kClassTooSmall,
  kNoPairs,
  kTrackTooShort,
  kBadSampleRate,
  kConfigError,
  kDataError,
  kCheckpointMismatch,
  kIoError,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kHeadDivisibility: return "HeadDivisibility";
    case ErrorKind::kBadTemperature: return "BadTemperature";
    case ErrorKind::kNonFinite: return "NonFinite";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kBadEpoch: return "BadEpoch";
    case ErrorKind::kNotADistribution: return "NotADistribution";
    case ErrorKind::kBatchTooLarge: return "BatchTooLarge";
    case ErrorKind::kEmptyQueue: return "EmptyQueue";
    case ErrorKind::kEmptySplit: return "EmptySplit";
    case ErrorKind::kClassTooSmall: return "ClassTooSmall";
    case ErrorKind::kNoPairs: return "NoPairs";
    case ErrorKind::kTrackTooShort: return "TrackTooShort";
    case ErrorKind::kBadSampleRate: return "BadSampleRate";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kDataError: return "DataError";
    case ErrorKind::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace damer
