/*
 * Copyright 2026 The smatd Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "smatd/error.hpp"

namespace smatd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kDuplication: return "duplication error";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kCapability: return "capability error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kSampler: return "sampler error";
    case ErrorKind::kUsage: return "usage error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

namespace {

std::string decorate(ErrorKind kind, const std::string& message,
                     std::optional<std::size_t> line) {
  std::string out{to_string(kind)};
  if (line) out += " at line " + std::to_string(*line);
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message,
             std::optional<std::size_t> line)
    : std::runtime_error(decorate(kind, message, line)), kind_(kind), line_(line) {}

}  // namespace smatd
