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

#include <cstdint>
#include <random>
#include <string_view>

namespace smatd::rng {

using Engine = std::mt19937_64;

/// 64-bit FNV-1a. Used for stable ids, digests and stream keys; it is not a
/// cryptographic hash.
std::uint64_t fnv1a(std::string_view bytes,
                    std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Independent stream keyed by (seed, purpose, index). Two calls with the
/// same key return engines producing the same sequence, so callers never
/// share an engine across logically distinct draws.
Engine stream(std::uint64_t seed, std::string_view purpose,
              std::uint64_t index = 0);

}  // namespace smatd::rng
