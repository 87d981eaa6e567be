// Copyright 2026 The IFA Toolkit Authors
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

#include "ifa/error.hpp"

namespace ifa {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kUnsupportedVersion: return "unsupported version";
    case ErrorKind::kMalformed: return "malformed";
    case ErrorKind::kInvariant: return "invariant violation";
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kDuplicateId: return "duplicate sample id";
    case ErrorKind::kCorruptRecord: return "corrupt record";
    case ErrorKind::kMissingGrads: return "missing gradients";
    case ErrorKind::kEmptyStats: return "empty statistics";
    case ErrorKind::kDegenerate: return "degenerate input";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kIncompatible: return "incompatible";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kDivergence: return "divergence";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return 2;
    case ErrorKind::kIo: return 4;
    default: return 3;
  }
}

}  // namespace ifa
