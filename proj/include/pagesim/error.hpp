#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pagesim {

enum class Errc {
  NoContiguity,
  UnknownBlock,
  OutOfMemory,
  Overlap,
  NotReserved,
  Alignment,
  NotMapped,
  PartialWindow,
  GuestUnmapped,
  HostUnmapped,
  NoTargetRange,
  InvalidBatch,
  SpecInfeasible,
  Parse,
  Config,
  IncompatibleConfigs,
  InvariantViolation,
  InvalidArgument,
};

std::string_view to_string(Errc code);

class SimError : public std::runtime_error {
 public:
  SimError(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

class ParseError : public SimError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : SimError(Errc::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw SimError(code, what); }

}  // namespace pagesim
