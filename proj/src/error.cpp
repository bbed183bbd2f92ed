#include "stam/error.hpp"

namespace stam {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ParseError: return "ParseError";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyData: return "EmptyData";
    case Errc::InvalidModel: return "InvalidModel";
    case Errc::BadIndex: return "BadIndex";
    case Errc::SingularInputBlock: return "SingularInputBlock";
    case Errc::DuplicateTask: return "DuplicateTask";
    case Errc::UnknownTask: return "UnknownTask";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::EmptyTaskSet: return "EmptyTaskSet";
    case Errc::GeometryMismatch: return "GeometryMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::RangeViolation: return "RangeViolation";
    case Errc::NoAffordantRegion: return "NoAffordantRegion";
    case Errc::Unreachable: return "Unreachable";
    case Errc::BadBand: return "BadBand";
    case Errc::DuplicateDemo: return "DuplicateDemo";
    case Errc::EmptyStore: return "EmptyStore";
    case Errc::EmptyEval: return "EmptyEval";
    case Errc::UnknownDemo: return "UnknownDemo";
    case Errc::FitFailure: return "FitFailure";
    case Errc::NoModel: return "NoModel";
    case Errc::MalformedMessage: return "MalformedMessage";
    case Errc::BindFailure: return "BindFailure";
  }
  return "Unknown";
}

}  // namespace stam
