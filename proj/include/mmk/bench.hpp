#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmk::bench {

// Median wall-clock time of one operator evaluation at a given sequence
// length; ratio is the growth factor relative to the previous row of the
// same operator (0 for the first row).
struct BenchRow {
    std::string op;
    std::int64_t length = 0;
    double median_ms = 0.0;
    double ratio = 0.0;
};

// op is "ss1d", "attn" or "both". Lengths must be positive and strictly
// increasing. channels is the feature width D of both operators; repeats is
// the number of timed evaluations the median is taken over.
std::vector<BenchRow> run(const std::string& op, const std::vector<std::int64_t>& lengths,
                          std::int64_t channels, int repeats);

std::string format_row(const BenchRow& row);

}  // namespace mmk::bench
