#include "gravfarm/error.hpp"

namespace gravfarm {

const char* err_name(Err code) {
    switch (code) {
        case Err::EmptyInput: return "EmptyInput";
        case Err::InvalidInput: return "InvalidInput";
        case Err::SingularInteraction: return "SingularInteraction";
        case Err::InvalidRankCount: return "InvalidRankCount";
        case Err::OutOfDomain: return "OutOfDomain";
        case Err::ForeignNodeOutsideRoot: return "ForeignNodeOutsideRoot";
        case Err::BadMagic: return "BadMagic";
        case Err::UnsupportedVersion: return "UnsupportedVersion";
        case Err::UnknownType: return "UnknownType";
        case Err::TruncatedFrame: return "TruncatedFrame";
        case Err::PayloadTooLarge: return "PayloadTooLarge";
        case Err::DuplicateAddress: return "DuplicateAddress";
        case Err::NoIdleServer: return "NoIdleServer";
        case Err::TaskPermanentlyFailed: return "TaskPermanentlyFailed";
        case Err::NoServersAvailable: return "NoServersAvailable";
        case Err::LifecycleViolation: return "LifecycleViolation";
        case Err::MalformedTask: return "MalformedTask";
        case Err::UnknownFunction: return "UnknownFunction";
        case Err::ConnectionFailed: return "ConnectionFailed";
        case Err::MalformedCsv: return "MalformedCsv";
    }
    return "Unknown";
}

}  // namespace gravfarm
