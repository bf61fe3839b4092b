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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace smatd::io {

enum class DType { kFloat32, kFloat64 };

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

/// Binary tensor container.
///
///   bytes 0..3   magic "SMTD"
///   bytes 4..7   u32 format version (1)
///   bytes 8..15  u64 header length H
///   H bytes      UTF-8 JSON object header
///   payload      tensors back to back, row-major, little-endian
///
/// The header is the caller's JSON object extended with a "tensors" array of
/// {name, rows, cols, dtype, offset} entries (offset relative to payload).
struct Container {
  std::string header_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
};

void write_container(const std::filesystem::path& path, const std::string& header_json,
                     std::span<const NamedTensor> tensors, DType dtype);

Container read_container(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace smatd::io
