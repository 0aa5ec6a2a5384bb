#pragma once

#include <charconv>
#include <string>

namespace drf {

/// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace drf
