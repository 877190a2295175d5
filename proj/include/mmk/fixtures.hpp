#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmk/tensor.hpp"

namespace mmk::fixtures {

// A fixture case is a named bundle of tensors produced by one deterministic
// model evaluation. Cases are written as textual files (one value per line,
// full double precision) carrying a content digest so that both numerical
// drift and file-format drift are detected independently.

struct FixtureTensor {
    std::string name;
    Tensor value;
};

struct FixtureCase {
    std::string name;
    std::vector<FixtureTensor> tensors;
};

struct VerifyReport {
    std::string case_name;
    bool present = false;
    bool pass = false;
    std::string detail;
};

// FNV-1a over the canonical byte encoding (rank, extents, little-endian
// doubles); stable across platforms of equal endianness conventions because
// the bytes are serialized explicitly.
std::uint64_t tensor_digest(const Tensor& t);

// Recomputes every golden case from scratch with fixed seeds.
std::vector<FixtureCase> compute_cases();

void write_case(const std::filesystem::path& dir, const FixtureCase& c);
FixtureCase read_case(const std::filesystem::path& file);

void generate_cases(const std::filesystem::path& dir);

// tol == 0 demands bitwise equality between recomputed and stored values;
// otherwise an absolute/relative band of width tol is applied per element.
std::vector<VerifyReport> verify_cases(const std::filesystem::path& dir, double tol = 0.0);

}  // namespace mmk::fixtures
