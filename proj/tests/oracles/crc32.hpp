#pragma once

#include <cstdint>
#include <string_view>

namespace oracle {

// Bit-at-a-time reflected CRC-32 (polynomial 0xEDB88320), no tables.
inline std::uint32_t crc32(std::string_view bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char b : bytes) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

}  // namespace oracle
