#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace masseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed Netpbm input. offset is the byte position where decoding failed.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), reason_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
  std::size_t offset_;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

// Agent seeding failed (no keypoints, too few distinct positions).
class InitError : public Error {
 public:
  using Error::Error;
};

// Every contour was discarded while tracking.
class TrackingLost : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace masseg
