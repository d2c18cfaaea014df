#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "pilotrep/errors.hpp"

namespace pilotrep {

// Shortest decimal form that round-trips back to the same double.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view text, const std::string& what) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("bad " + what + ": '" + std::string(text) + "'");
  }
  return value;
}

inline std::int64_t parse_int64(std::string_view text, const std::string& what) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("bad " + what + ": '" + std::string(text) + "'");
  }
  return value;
}

inline std::uint64_t parse_uint64(std::string_view text, const std::string& what) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("bad " + what + ": '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace pilotrep
