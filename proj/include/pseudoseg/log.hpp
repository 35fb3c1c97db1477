#pragma once

#include <iostream>
#include <string_view>

namespace pseudoseg {

// Progress messages go to stderr so stdout stays machine-readable.
inline bool& log_enabled() {
  static bool enabled = true;
  return enabled;
}

inline void log_line(std::string_view message) {
  if (log_enabled()) std::clog << "[pseudoseg] " << message << '\n';
}

}  // namespace pseudoseg
