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
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace smatd {

enum class ErrorKind {
  kParse,
  kValidation,
  kCoverage,
  kDuplication,
  kPrecondition,
  kDomain,
  kRange,
  kCapability,
  kInput,
  kDimension,
  kConfiguration,
  kNumeric,
  kTraining,
  kSampler,
  kUsage,
  kIo,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the toolkit. `kind()` is the stable part callers
/// should branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> line = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  /// 1-based line number for errors raised while reading line-oriented files.
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> line_;
};

}  // namespace smatd
