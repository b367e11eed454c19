#include "pagesim/error.hpp"

namespace pagesim {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::NoContiguity: return "NoContiguity";
    case Errc::UnknownBlock: return "UnknownBlock";
    case Errc::OutOfMemory: return "OutOfMemory";
    case Errc::Overlap: return "OverlapError";
    case Errc::NotReserved: return "NotReserved";
    case Errc::Alignment: return "AlignmentError";
    case Errc::NotMapped: return "NotMapped";
    case Errc::PartialWindow: return "PartialWindow";
    case Errc::GuestUnmapped: return "GuestUnmapped";
    case Errc::HostUnmapped: return "HostUnmapped";
    case Errc::NoTargetRange: return "NoTargetRange";
    case Errc::InvalidBatch: return "InvalidBatch";
    case Errc::SpecInfeasible: return "SpecInfeasible";
    case Errc::Parse: return "ParseError";
    case Errc::Config: return "ConfigError";
    case Errc::IncompatibleConfigs: return "IncompatibleConfigs";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace pagesim
