#ifndef FG_COMMON_HPP
#define FG_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fg {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: mixed-class training sets, mode mismatches, backward on
// non-scalars, and similar contract violations.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerical failures inside the engine (non-finite values, degenerate
// batches).
class EngineError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifacts: WAV files, checkpoints, caches, score files,
// manifests.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void str_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  str_append(os, rest...);
}
}  // namespace detail

// Builds an error/message string from heterogeneous parts.
template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::str_append(os, args...);
  return os.str();
}

// FNV-1a 64-bit digest, used for config hashes.
inline uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace fg

#endif  // FG_COMMON_HPP
