#pragma once

#include <stdexcept>
#include <string>

namespace gravfarm {

enum class Err {
    // treecode / orb
    EmptyInput,
    InvalidInput,
    SingularInteraction,
    InvalidRankCount,
    OutOfDomain,
    ForeignNodeOutsideRoot,
    // wire protocol
    BadMagic,
    UnsupportedVersion,
    UnknownType,
    TruncatedFrame,
    PayloadTooLarge,
    // fabric
    DuplicateAddress,
    NoIdleServer,
    TaskPermanentlyFailed,
    NoServersAvailable,
    LifecycleViolation,
    MalformedTask,
    UnknownFunction,
    ConnectionFailed,
    // bench
    MalformedCsv,
};

const char* err_name(Err code);

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& what)
        : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}

    Err code() const noexcept { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

}  // namespace gravfarm
