#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stma {

struct CheckResult {
    std::string name;
    bool pass = false;
    double max_error = 0.0;
    std::string detail;
};

// Negative-control hooks: BreakMask corrupts the asymmetric visibility mask
// so the decomposition check must fail.
enum class Fault { None, BreakMask };

struct VerifyOptions {
    std::uint64_t seed = 20240817;
    Fault fault = Fault::None;
};

// Runs every oracle/property suite and returns the report sorted by check
// name. Failures are report entries, not exceptions.
std::vector<CheckResult> verify_all(const VerifyOptions& opts = {});

// Prints one line per check plus a summary; returns 0 iff all checks pass.
int run_verify(const VerifyOptions& opts, std::ostream& os);

}  // namespace stma
