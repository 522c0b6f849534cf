#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace orefeed {

// Minutes since 1970-01-01T00:00 UTC. All logs are handled at minute resolution.
using Minutes = std::int64_t;

// Index into a ClassVocab. Setpoint classes come first, cluster-minted classes after.
using ClassId = int;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class OrderingError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingAbort : public Error {
 public:
  using Error::Error;
};

// Parses "YYYY-MM-DDTHH:MM" with optional ":SS" (seconds are floored away).
// Throws Error on malformed input.
Minutes parse_timestamp(std::string_view text);
std::string format_timestamp(Minutes t);

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

}  // namespace orefeed
