#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gravfarm {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyOptions {
    bool skip_fabric = false;  // skip the socket-backed criteria
};

// The full oracle/property suite; one result per criterion.
std::vector<CheckResult> run_verification(const VerifyOptions& opts, std::ostream& log);

// Prints one PASS/FAIL line per criterion; returns true when all pass.
bool report_verification(const std::vector<CheckResult>& results, std::ostream& out);

}  // namespace gravfarm
