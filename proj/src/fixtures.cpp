#include "mmk/fixtures.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mmk/encoder.hpp"
#include "mmk/harness.hpp"
#include "mmk/rng.hpp"

namespace mmk::fixtures {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= kFnvPrime;
    }
}

void fnv_u32(std::uint64_t& h, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    fnv_bytes(h, b, 4);
}

void fnv_f64(std::uint64_t& h, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    fnv_bytes(h, b, 8);
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
    Tensor t(shape);
    SplitMix64 rng(seed);
    for (auto& v : t.data()) v = rng.sym(1.0);
    return t;
}

}  // namespace

std::uint64_t tensor_digest(const Tensor& t) {
    std::uint64_t h = kFnvOffset;
    fnv_u32(h, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) fnv_u32(h, static_cast<std::uint32_t>(t.extent(i)));
    for (double v : t.data()) fnv_f64(h, v);
    return h;
}

std::vector<FixtureCase> compute_cases() {
    std::vector<FixtureCase> cases;

    {  // cross-modality gating on a constant pair: exercises the pooled scan path
        SplitMix64 rng(101);
        CEIWeights w = make_cei_weights(8, 16, rng);
        ModalityPair in;
        in.rgb = Tensor::full({1, 8, 16, 16}, 1.0);
        in.ir = Tensor::full({1, 8, 16, 16}, 1.0);
        ModalityPair out = cei_forward(in, w);
        cases.push_back({"cei_small", {{"rgb", out.rgb}, {"ir", out.ir}}});
    }
    {  // adapter with live output projections (no zero init) on a random map
        SplitMix64 rng(202);
        AdapterWeights w = make_adapter_weights(16, 128, rng, /*zero_init_outputs=*/false);
        Tensor x = random_tensor({1, 16, 16, 16}, 203);
        cases.push_back({"adapter_small", {{"out", adapter_forward(x, w)}}});
    }
    {  // three-level pyramid fusion with IR completion branches
        SplitMix64 rng(303);
        std::array<std::int64_t, 3> chans{8, 16, 32};
        MPFWeights w = make_mpf_weights(chans, 32, 8, rng, CompletionSide::ir);
        std::array<ModalityPair, 3> levels;
        std::int64_t hw[3] = {8, 4, 2};
        std::uint64_t seed = 304;
        for (std::size_t l = 0; l < 3; ++l) {
            levels[l].rgb = random_tensor({1, chans[l], hw[l], hw[l]}, seed++);
            levels[l].ir = random_tensor({1, chans[l], hw[l], hw[l]}, seed++);
        }
        PyramidFeatures p = mpf_forward(levels, w);
        cases.push_back({"mpf_small", {{"p3", p.p3}, {"n4", p.n4}, {"n5", p.n5}}});
    }
    {  // full encoder stack on synthetic aligned inputs
        HarnessConfig cfg;
        cfg.zero_init_adapter_outputs = false;
        EncoderModel m = make_default_model(cfg);
        ModalityPair in = synth_pair(7, 64);
        PyramidFeatures p = encoder_forward(in.rgb, in.ir, m);
        cases.push_back({"encoder_synth", {{"p3", p.p3}, {"n4", p.n4}, {"n5", p.n5}}});
    }
    return cases;
}

void write_case(const std::filesystem::path& dir, const FixtureCase& c) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path file = dir / (c.name + ".fixture");
    std::ofstream out(file);
    if (!out) throw std::runtime_error("fixture: cannot open for writing: " + file.string());
    out << "mmk-fixture v1\n";
    out << "case " << c.name << "\n";
    out << "tensors " << c.tensors.size() << "\n";
    char buf[64];
    for (const auto& ft : c.tensors) {
        out << "tensor " << ft.name << "\n";
        out << "digest " << hex16(tensor_digest(ft.value)) << "\n";
        out << "rank " << ft.value.rank() << "\n";
        out << "extents";
        for (int i = 0; i < ft.value.rank(); ++i) out << " " << ft.value.extent(i);
        out << "\n";
        out << "values " << ft.value.numel() << "\n";
        for (double v : ft.value.data()) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << buf << "\n";
        }
    }
    if (!out) throw std::runtime_error("fixture: write failed: " + file.string());
}

namespace {

std::string expect_line(std::istream& in, const std::filesystem::path& file) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("fixture: truncated file: " + file.string());
    return line;
}

std::string expect_keyword(std::istream& in, const std::filesystem::path& file, const std::string& kw) {
    std::string line = expect_line(in, file);
    if (line.rfind(kw + " ", 0) != 0) {
        throw std::runtime_error("fixture: expected '" + kw + " ...' in " + file.string() + ", got '" +
                                 line + "'");
    }
    return line.substr(kw.size() + 1);
}

}  // namespace

FixtureCase read_case(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("fixture: cannot open: " + file.string());
    if (expect_line(in, file) != "mmk-fixture v1") {
        throw std::runtime_error("fixture: bad header in " + file.string());
    }
    FixtureCase c;
    c.name = expect_keyword(in, file, "case");
    const std::size_t count = std::stoull(expect_keyword(in, file, "tensors"));
    for (std::size_t t = 0; t < count; ++t) {
        FixtureTensor ft;
        ft.name = expect_keyword(in, file, "tensor");
        const std::string digest_hex = expect_keyword(in, file, "digest");
        const int rank = std::stoi(expect_keyword(in, file, "rank"));
        if (rank < 1 || rank > 4) throw std::runtime_error("fixture: bad rank in " + file.string());
        std::istringstream ext(expect_keyword(in, file, "extents"));
        Shape shape;
        for (int i = 0; i < rank; ++i) {
            std::int64_t e = 0;
            if (!(ext >> e) || e <= 0) throw std::runtime_error("fixture: bad extents in " + file.string());
            shape.push_back(e);
        }
        const std::size_t n = std::stoull(expect_keyword(in, file, "values"));
        std::vector<double> values;
        values.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::string line = expect_line(in, file);
            std::size_t used = 0;
            values.push_back(std::stod(line, &used));
            if (used == 0) throw std::runtime_error("fixture: unparseable value in " + file.string());
        }
        ft.value = Tensor(shape, std::move(values));
        const std::uint64_t parsed = tensor_digest(ft.value);
        if (hex16(parsed) != digest_hex) {
            throw std::runtime_error("fixture: digest mismatch for tensor '" + ft.name + "' in " +
                                     file.string() + " (stored " + digest_hex + ", parsed " +
                                     hex16(parsed) + ")");
        }
        c.tensors.push_back(std::move(ft));
    }
    return c;
}

void generate_cases(const std::filesystem::path& dir) {
    for (const auto& c : compute_cases()) write_case(dir, c);
}

std::vector<VerifyReport> verify_cases(const std::filesystem::path& dir, double tol) {
    std::vector<VerifyReport> reports;
    for (const auto& fresh : compute_cases()) {
        VerifyReport r;
        r.case_name = fresh.name;
        const std::filesystem::path file = dir / (fresh.name + ".fixture");
        if (!std::filesystem::exists(file)) {
            r.detail = "missing file " + file.string();
            reports.push_back(std::move(r));
            continue;
        }
        r.present = true;
        try {
            const FixtureCase stored = read_case(file);
            if (stored.tensors.size() != fresh.tensors.size()) {
                r.detail = "tensor count mismatch";
                reports.push_back(std::move(r));
                continue;
            }
            bool ok = true;
            std::string detail;
            for (std::size_t i = 0; i < fresh.tensors.size() && ok; ++i) {
                const auto& a = stored.tensors[i];
                const auto& b = fresh.tensors[i];
                if (a.name != b.name || a.value.shape() != b.value.shape()) {
                    ok = false;
                    detail = "tensor '" + b.name + "' layout mismatch";
                    break;
                }
                double worst = 0.0;
                std::size_t worst_at = 0;
                const auto av = a.value.data();
                const auto bv = b.value.data();
                for (std::size_t k = 0; k < av.size(); ++k) {
                    const double err =
                        tol == 0.0 ? (std::bit_cast<std::uint64_t>(av[k]) == std::bit_cast<std::uint64_t>(bv[k])
                                          ? 0.0
                                          : 1.0)
                                   : std::fabs(av[k] - bv[k]) / std::max({std::fabs(av[k]), std::fabs(bv[k]), 1.0});
                    if (err > worst) {
                        worst = err;
                        worst_at = k;
                    }
                }
                const double limit = tol == 0.0 ? 0.0 : tol;
                if (worst > limit) {
                    ok = false;
                    char buf[160];
                    std::snprintf(buf, sizeof(buf), "tensor '%s' value %zu: stored %.17g, recomputed %.17g",
                                  b.name.c_str(), worst_at, av[worst_at], bv[worst_at]);
                    detail = buf;
                }
            }
            r.pass = ok;
            r.detail = ok ? "match" : detail;
        } catch (const std::exception& e) {
            r.detail = e.what();
        }
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace mmk::fixtures
