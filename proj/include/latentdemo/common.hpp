#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace latentdemo {

/// Failure classes surfaced by the library. The C API maps these onto its
/// status codes, and the CLI onto process exit codes.
enum class ErrorKind : std::uint8_t {
  config,          // invalid configuration or arguments
  runtime,         // generic runtime failure
  overflow,        // context budget exceeded
  parse,           // malformed file content
  sandbox_infra,   // could not spawn or supervise a child process
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class OverflowError : public Error {
 public:
  explicit OverflowError(const std::string& what) : Error(ErrorKind::overflow, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::parse, what) {}
};

class SandboxInfraError : public Error {
 public:
  explicit SandboxInfraError(const std::string& what) : Error(ErrorKind::sandbox_infra, what) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& what) : Error(ErrorKind::runtime, what) {}
};

// SHA-256 helpers (lower-case hex output).
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::byte> data);

/// Incremental SHA-256 for digests over many fields.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update(std::string_view data);
  Hasher& update(std::span<const std::byte> data);
  // Length-prefixed so adjacent fields cannot alias.
  Hasher& field(std::string_view data);
  Hasher& field(std::uint64_t value);
  std::string hex();

 private:
  void* ctx_;
};

/// Derives a stage seed from the master seed and a label, e.g.
/// derive_seed(7, "train", "reverse").
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::string_view label = {});

}  // namespace latentdemo
