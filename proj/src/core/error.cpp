// Copyright 2026 The vialscan Authors
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

#include "vialscan/error.hpp"

namespace vialscan {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRange: return "range";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kGeometry: return "geometry";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kModel: return "model";
    case ErrorCode::kData: return "data";
    case ErrorCode::kCalibration: return "calibration";
    case ErrorCode::kTrainingFault: return "training-fault";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void raise(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(error_code_name(code)) + " error: " + what);
}

}  // namespace vialscan
