#include "fedmode/error.hpp"

namespace fedmode {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidCoordinate: return "InvalidCoordinate";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::EmptyFit: return "EmptyFit";
        case ErrorCode::ChannelMismatch: return "ChannelMismatch";
        case ErrorCode::UnknownMode: return "UnknownMode";
        case ErrorCode::TooFewSegments: return "TooFewSegments";
        case ErrorCode::InfeasiblePartition: return "InfeasiblePartition";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NumericalError: return "NumericalError";
        case ErrorCode::InvalidStride: return "InvalidStride";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::LayoutMismatch: return "LayoutMismatch";
        case ErrorCode::EmptyUpdateList: return "EmptyUpdateList";
        case ErrorCode::MissingMeta: return "MissingMeta";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::Empty: return "Empty";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::UnknownKey: return "UnknownKey";
        case ErrorCode::InvalidValue: return "InvalidValue";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace fedmode
