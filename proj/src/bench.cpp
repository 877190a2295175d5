#include "mmk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>

#include "mmk/rng.hpp"
#include "mmk/scan.hpp"

namespace mmk::bench {

namespace {

// Single-head self-attention with Q = K = V = x, evaluated row by row with a
// streamed softmax: O(L^2 D) time, O(L + D) extra memory. This is the
// quadratic reference the linear scan is measured against.
Tensor naive_attention(const Tensor& x) {
    const std::int64_t L = x.extent(0);
    const std::int64_t D = x.extent(1);
    const double inv = 1.0 / std::sqrt(static_cast<double>(D));
    Tensor y({L, D});
    std::vector<double> logits(static_cast<std::size_t>(L));
    std::vector<double> acc(static_cast<std::size_t>(D));
    for (std::int64_t i = 0; i < L; ++i) {
        double m = -1e300;
        for (std::int64_t j = 0; j < L; ++j) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < D; ++c) dot += x.at(i, c) * x.at(j, c);
            logits[static_cast<std::size_t>(j)] = dot * inv;
            m = std::max(m, logits[static_cast<std::size_t>(j)]);
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        double z = 0.0;
        for (std::int64_t j = 0; j < L; ++j) {
            const double w = std::exp(logits[static_cast<std::size_t>(j)] - m);
            z += w;
            for (std::int64_t c = 0; c < D; ++c) acc[static_cast<std::size_t>(c)] += w * x.at(j, c);
        }
        for (std::int64_t c = 0; c < D; ++c) y.at(i, c) = acc[static_cast<std::size_t>(c)] / z;
    }
    return y;
}

double median_ms(const std::function<double()>& once, int repeats) {
    volatile double sink = once();  // warm up
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        sink = sink + once();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    (void)sink;
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
}

double time_ss1d(std::int64_t L, std::int64_t D, int repeats) {
    SplitMix64 rng(91);
    ScanInputs in;
    in.u = Tensor({1, L, D});
    in.delta = Tensor({1, L, D});
    in.A = Tensor({D, 16});
    in.B_seq = Tensor({1, L, 16});
    in.C_seq = Tensor({1, L, 16});
    for (auto& v : in.u.data()) v = rng.sym(1.0);
    for (auto& v : in.delta.data()) v = rng.uniform(0.05, 0.5);
    for (auto& v : in.A.data()) v = rng.uniform(-1.5, -0.2);
    for (auto& v : in.B_seq.data()) v = rng.sym(1.0);
    for (auto& v : in.C_seq.data()) v = rng.sym(1.0);
    return median_ms([&] { return ss1d_scan(in).at(0); }, repeats);
}

double time_attn(std::int64_t L, std::int64_t D, int repeats) {
    SplitMix64 rng(92);
    Tensor x({L, D});
    for (auto& v : x.data()) v = rng.sym(1.0);
    return median_ms([&] { return naive_attention(x).at(0); }, repeats);
}

void append_rows(std::vector<BenchRow>& rows, const std::string& op,
                 const std::vector<std::int64_t>& lengths, std::int64_t channels, int repeats) {
    double prev = 0.0;
    for (std::int64_t L : lengths) {
        BenchRow row;
        row.op = op;
        row.length = L;
        row.median_ms = op == "ss1d" ? time_ss1d(L, channels, repeats) : time_attn(L, channels, repeats);
        row.ratio = prev > 0.0 ? row.median_ms / prev : 0.0;
        prev = row.median_ms;
        rows.push_back(std::move(row));
    }
}

}  // namespace

std::vector<BenchRow> run(const std::string& op, const std::vector<std::int64_t>& lengths,
                          std::int64_t channels, int repeats) {
    if (op != "ss1d" && op != "attn" && op != "both") {
        throw std::invalid_argument("bench: unknown op '" + op + "' (expected ss1d, attn or both)");
    }
    if (lengths.empty()) throw std::invalid_argument("bench: at least one length is required");
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] <= 0 || (i > 0 && lengths[i] <= lengths[i - 1])) {
            throw std::invalid_argument("bench: lengths must be positive and strictly increasing");
        }
    }
    if (channels <= 0) throw std::invalid_argument("bench: channels must be positive");
    if (repeats <= 0) throw std::invalid_argument("bench: repeats must be positive");

    std::vector<BenchRow> rows;
    if (op == "ss1d" || op == "both") append_rows(rows, "ss1d", lengths, channels, repeats);
    if (op == "attn" || op == "both") append_rows(rows, "attn", lengths, channels, repeats);
    return rows;
}

std::string format_row(const BenchRow& row) {
    char buf[160];
    if (row.ratio > 0.0) {
        std::snprintf(buf, sizeof(buf), "%-5s L=%-7lld median %10.4f ms   x%.2f vs previous", row.op.c_str(),
                      static_cast<long long>(row.length), row.median_ms, row.ratio);
    } else {
        std::snprintf(buf, sizeof(buf), "%-5s L=%-7lld median %10.4f ms", row.op.c_str(),
                      static_cast<long long>(row.length), row.median_ms);
    }
    return std::string(buf);
}

}  // namespace mmk::bench
