#include "marvin/error.hpp"

namespace marvin {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidRegister: return "InvalidRegister";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownInstruction: return "UnknownInstruction";
    case ErrorCode::LaneOverflow: return "LaneOverflow";
    case ErrorCode::TooManyValues: return "TooManyValues";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::MemoryOutOfBounds: return "MemoryOutOfBounds";
    case ErrorCode::WorkloadMismatch: return "WorkloadMismatch";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::InvalidReference: return "InvalidReference";
    case ErrorCode::VoltageOutOfRange: return "VoltageOutOfRange";
    case ErrorCode::NoSignChange: return "NoSignChange";
    case ErrorCode::InvalidVoltage: return "InvalidVoltage";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Error";
}

}  // namespace marvin
