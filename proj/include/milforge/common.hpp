#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace milforge {

// Patch magnification. The underlying value is the byte stored in embedding
// files; 0 means "not recorded".
enum class Magnification : std::uint8_t {
  kUnknown = 0,
  k10x = 10,
  k20x = 20,
  k40x = 40,
};

std::string_view magnification_name(Magnification m);
Magnification parse_magnification(std::string_view s);
Magnification magnification_from_byte(std::uint8_t b);
// Objective power as a number (10, 20, 40).
inline double objective_power(Magnification m) { return static_cast<double>(m); }

// Lower-case hex FNV-1a 64 digest; used for config hashes in file headers.
std::string fnv1a_hex(std::string_view data);

}  // namespace milforge
