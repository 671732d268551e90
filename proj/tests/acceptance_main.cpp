// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line each. Exit code 0 only when everything passes.

#include <iostream>

#include "gravfarm/verify.hpp"

int main() {
    gravfarm::VerifyOptions opts;
    auto results = gravfarm::run_verification(opts, std::cerr);
    bool ok = gravfarm::report_verification(results, std::cout);
    return ok ? 0 : 1;
}
