#pragma once

#include <string>
#include <vector>

namespace mmk::checks {

// One structural or numerical invariant, evaluated on deterministic inputs.
// `measured` is the quantity the invariant constrains and `tolerance` the
// bound it was compared against; `detail` spells out the relation.
struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

// Runs every registered invariant whose name contains `filter` (all of them
// when the filter is empty). Throws std::invalid_argument when the filter
// matches nothing.
std::vector<CheckResult> run_invariant_suite(const std::string& filter = "");

}  // namespace mmk::checks
