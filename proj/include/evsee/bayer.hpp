#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "evsee/error.hpp"

namespace evsee {

enum class BayerOrder : std::uint8_t { RGGB, BGGR, GRBG, GBRG };

// Filter codes: 0 = R, 1 = G on the red row, 2 = G on the blue row, 3 = B.
// For RGGB these coincide with the raw mosaic position 2*(y%2) + (x%2).
inline int bayer_index(std::uint32_t x, std::uint32_t y, BayerOrder order = BayerOrder::RGGB) {
  static constexpr std::array<std::array<int, 4>, 4> kRemap = {{
      {0, 1, 2, 3},  // RGGB
      {3, 2, 1, 0},  // BGGR
      {1, 0, 3, 2},  // GRBG
      {2, 3, 0, 1},  // GBRG
  }};
  const int pos = 2 * static_cast<int>(y % 2) + static_cast<int>(x % 2);
  return kRemap[static_cast<std::size_t>(order)][static_cast<std::size_t>(pos)];
}

inline std::string_view to_string(BayerOrder order) {
  switch (order) {
    case BayerOrder::RGGB: return "RGGB";
    case BayerOrder::BGGR: return "BGGR";
    case BayerOrder::GRBG: return "GRBG";
    case BayerOrder::GBRG: return "GBRG";
  }
  return "RGGB";
}

inline BayerOrder parse_bayer_order(std::string_view s) {
  if (s == "RGGB") return BayerOrder::RGGB;
  if (s == "BGGR") return BayerOrder::BGGR;
  if (s == "GRBG") return BayerOrder::GRBG;
  if (s == "GBRG") return BayerOrder::GBRG;
  throw DomainError("unknown bayer order: " + std::string(s));
}

}  // namespace evsee
