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
#include "smatd/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"

namespace smatd::io {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

std::size_t width(DType dtype) { return dtype == DType::kFloat32 ? 4 : 8; }

}  // namespace

const NamedTensor* Container::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_container(const std::filesystem::path& path, const std::string& header_json,
                     std::span<const NamedTensor> tensors, DType dtype) {
  nlohmann::ordered_json header = nlohmann::ordered_json::parse(header_json);
  if (!header.is_object()) throw Error(ErrorKind::kIo, "container header must be an object");
  auto table = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    table.push_back({{"name", t.name},
                     {"rows", t.value.rows()},
                     {"cols", t.value.cols()},
                     {"dtype", dtype == DType::kFloat32 ? "float32" : "float64"},
                     {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size()) * width(dtype);
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::string bytes(kMagic, kMagic + 4);
  put_le<std::uint32_t>(bytes, kVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + offset);
  for (const auto& t : tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (dtype == DType::kFloat32) {
          put_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(t.value(r, c))));
        } else {
          put_le(bytes, std::bit_cast<std::uint64_t>(t.value(r, c)));
        }
      }
    }
  }
  write_text_atomic(path, bytes);
}

Container read_container(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::kIo, path.string() + " is not a tensor container");
  }
  if (get_le<std::uint32_t>(p + 4) != kVersion) {
    throw Error(ErrorKind::kIo, path.string() + ": unsupported container version");
  }
  const auto header_len = get_le<std::uint64_t>(p + 8);
  if (16 + header_len > bytes.size()) throw Error(ErrorKind::kIo, path.string() + ": truncated header");
  Container out;
  out.header_json = bytes.substr(16, header_len);
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(out.header_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, path.string() + ": bad header: " + e.what());
  }
  const std::size_t payload = 16 + header_len;
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const DType dtype = entry.at("dtype").get<std::string>() == "float32" ? DType::kFloat32
                                                                          : DType::kFloat64;
    std::size_t at = payload + entry.at("offset").get<std::size_t>();
    if (at + static_cast<std::size_t>(rows * cols) * width(dtype) > bytes.size()) {
      throw Error(ErrorKind::kIo, path.string() + ": truncated tensor " + t.name);
    }
    t.value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (dtype == DType::kFloat32) {
          t.value(r, c) = std::bit_cast<float>(get_le<std::uint32_t>(p + at));
          at += 4;
        } else {
          t.value(r, c) = std::bit_cast<double>(get_le<std::uint64_t>(p + at));
          at += 8;
        }
      }
    }
    out.tensors.push_back(std::move(t));
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace smatd::io
