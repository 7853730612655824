#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace priorlens {

inline constexpr std::string_view kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Error hierarchy. Every throw site goes through one of these so callers can
// distinguish bad shapes from bad usage from bad files.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void cat_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  cat_into(os, rest...);
}
}  // namespace detail

// Builds an error message from heterogeneous pieces: cat("dim ", 3, " of ", s).
template <typename... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  detail::cat_into(os, parts...);
  return os.str();
}

// ---------------------------------------------------------------------------
// Hashing: FNV-1a 64, used for instance ids, run ids and artifact staleness
// checks. Stable across runs and platforms.
// ---------------------------------------------------------------------------

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64_bytes(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64_bytes(s.data(), s.size(), h);
}

std::string hash_hex(uint64_t h);
uint64_t hash_file(const std::string& path);

// Levenshtein distance, used for "unknown key, did you mean ..." diagnostics.
size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace priorlens
