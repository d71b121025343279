// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kvslim/attention.hpp"

namespace kvslim {

// Binary cache file, little-endian throughout:
//
//   offset  size  field
//   0       4     magic "KVC1"
//   4       2     version (u16) = 1
//   6       8     n (u64)
//   14      4     d_k (u32)
//   18      4     d_v (u32)
//   22      1     dtype (u8), 0 = f64
//   23      1     flags (u8), bit 0 = preprocessed
//   24      ...   n*d_k key scalars, then n*d_v value scalars
//   ...           if preprocessed: d_k shift scalars, key_scale, value_scale
inline constexpr std::uint16_t kCacheFileVersion = 1;
inline constexpr std::size_t kCacheHeaderBytes = 24;

std::vector<std::uint8_t> encode_cache(const KvCache& cache);
KvCache decode_cache(std::span<const std::uint8_t> bytes);

void save_cache(const KvCache& cache, const std::filesystem::path& path);
KvCache load_cache(const std::filesystem::path& path);

/// One row per line, comma-separated; blank lines and lines starting with '#' are skipped.
KvCache import_csv(const std::filesystem::path& keys_path, const std::filesystem::path& values_path);

}  // namespace kvslim
