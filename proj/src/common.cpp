#include "milforge/common.hpp"

#include <cstdio>

#include "milforge/error.hpp"

namespace milforge {

std::string_view magnification_name(Magnification m) {
  switch (m) {
    case Magnification::k10x:
      return "10x";
    case Magnification::k20x:
      return "20x";
    case Magnification::k40x:
      return "40x";
    case Magnification::kUnknown:
      break;
  }
  return "unknown";
}

Magnification parse_magnification(std::string_view s) {
  if (s == "10x") return Magnification::k10x;
  if (s == "20x") return Magnification::k20x;
  if (s == "40x") return Magnification::k40x;
  throw ConfigError("unknown magnification '" + std::string(s) + "' (expected 10x|20x|40x)");
}

Magnification magnification_from_byte(std::uint8_t b) {
  switch (b) {
    case 0:
      return Magnification::kUnknown;
    case 10:
      return Magnification::k10x;
    case 20:
      return Magnification::k20x;
    case 40:
      return Magnification::k40x;
    default:
      break;
  }
  throw FormatError("invalid magnification tag " + std::to_string(b));
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace milforge
