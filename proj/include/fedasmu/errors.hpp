#pragma once

#include <stdexcept>
#include <string>

namespace fedasmu {

/// Caller passed arguments that violate an operation's preconditions.
class UsageError : public std::invalid_argument {
public:
  explicit UsageError(const std::string &what) : std::invalid_argument(what) {}
};

/// A protocol step happened out of order (stale origin, double merge, ...).
class ProtocolError : public std::logic_error {
public:
  explicit ProtocolError(const std::string &what) : std::logic_error(what) {}
};

/// Configuration file could not be parsed or failed validation.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
};

/// Internal invariant broken; always a bug.
class InternalError : public std::logic_error {
public:
  explicit InternalError(const std::string &what) : std::logic_error(what) {}
};

namespace detail {

inline void require(bool cond, const char *msg) {
  if (!cond)
    throw UsageError(msg);
}

inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw UsageError(msg);
}

} // namespace detail
} // namespace fedasmu
