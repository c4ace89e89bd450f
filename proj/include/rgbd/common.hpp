#ifndef RGBD_COMMON_HPP
#define RGBD_COMMON_HPP

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace rgbd {

// All library errors derive from these two. ShapeError for tensor/shape
// contract violations, ConfigError for bad user-facing configuration.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

template <typename... Args>
std::string strf(const char* fmt, Args... args) {
    int n = std::snprintf(nullptr, 0, fmt, args...);
    std::string s(n > 0 ? (size_t)n : 0, '\0');
    std::snprintf(s.data(), s.size() + 1, fmt, args...);
    return s;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

inline void require_cfg(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace rgbd

#endif
