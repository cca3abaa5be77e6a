#pragma once

#include <charconv>
#include <ostream>
#include <string>

namespace lcnet {

/// Shortest text that reads back to the same double; streams as `out << num(x)`.
struct num {
    double v;
};

inline std::string to_text(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::ostream& operator<<(std::ostream& out, num n) { return out << to_text(n.v); }

} // namespace lcnet
