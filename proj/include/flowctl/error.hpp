#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowctl {

/// Broad failure categories. The CLI maps each to its own exit status.
enum class ErrorKind {
  InvalidArgument,
  InvalidRegime,
  ControlBound,
  Configuration,
  InsufficientHistory,
  Segment,
  Parse,
  Dimension,
  Divergence,
  Io,
  MissingArtifact,
  UnknownCommand,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string & what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string & what)
{
  if (!condition) { throw Error(kind, what); }
}

inline std::string_view to_string(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::InvalidRegime: return "invalid-regime";
    case ErrorKind::ControlBound: return "control-bound";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::InsufficientHistory: return "insufficient-history";
    case ErrorKind::Segment: return "segment";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io";
    case ErrorKind::MissingArtifact: return "missing-artifact";
    case ErrorKind::UnknownCommand: return "unknown-command";
  }
  return "unknown";
}

}  // namespace flowctl
