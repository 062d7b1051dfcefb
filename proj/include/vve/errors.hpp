#pragma once

#include <stdexcept>
#include <string>

namespace vve {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller passed a value that violates a documented precondition
/// (non-finite numbers, negative loads, out-of-range friction, ...).
class InvalidInputError : public Error {
public:
  explicit InvalidInputError(const std::string& what) : Error(what) {}
};

/// An operation that divides by the vehicle speed was invoked below the
/// model's validity threshold.
class SingularSpeedError : public Error {
public:
  explicit SingularSpeedError(const std::string& what) : Error(what) {}
};

/// Configuration file or override could not be parsed or applied.
/// Carries the offending section/key when known.
class ConfigError : public Error {
public:
  ConfigError(const std::string& what, std::string key = {})
      : Error(key.empty() ? what : what + " (key: " + key + ")"),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

private:
  std::string key_;
};

/// Numerical fault inside a running simulation (non-finite state).
/// Carries a printable snapshot of the last valid state for diagnosis.
class SimulationFaultError : public Error {
public:
  SimulationFaultError(const std::string& what, std::string last_state)
      : Error(what + "; last valid state: " + last_state),
        last_state_(std::move(last_state)) {}
  const std::string& last_state() const { return last_state_; }

private:
  std::string last_state_;
};

/// A saved model file does not match the expected network architecture
/// or serialization format.
class ModelIncompatibleError : public Error {
public:
  explicit ModelIncompatibleError(const std::string& what) : Error(what) {}
};

/// Link-level failure: handshake timeout, incompatible peer version,
/// or loss of the peer while running.
class LinkError : public Error {
public:
  explicit LinkError(const std::string& what) : Error(what) {}
};

/// A data file (trace, CSV) failed validation.  Carries the 1-based
/// line number when known (0 = unknown).
class IngestError : public Error {
public:
  IngestError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// Filesystem / OS level failure (open, bind, send, ...).
class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(what) {}
};

/// Process exit codes used by the command line tool.  Distinct causes
/// map to distinct codes so scripted callers can react.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitHandshake = 4,
  kExitSimulationFault = 5,
  kExitModelIncompatible = 6,
  kExitIo = 7,
  kExitIngest = 8,
};

} // namespace vve
