#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtmfg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent scenario configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The time step is too large for the semi-Lagrangian stencil: dt > h / k_max.
class CflViolation : public Error {
 public:
  using Error::Error;
};

/// An optimal trajectory could not be traced to the target within the horizon.
class TraceFailure : public Error {
 public:
  TraceFailure(const std::string& what, std::size_t atom = npos)
      : Error(what), atom_(atom) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t atom() const noexcept { return atom_; }

 private:
  std::size_t atom_;
};

class ConvergenceFailure : public Error {
 public:
  using Error::Error;
};

/// Stored artifacts do not match the scenario or were modified after writing.
class ArtifactMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace mtmfg
