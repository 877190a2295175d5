#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mmk/rng.hpp"
#include "mmk/scan.hpp"
#include "mmk/tensor.hpp"

using namespace mmk;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
    Tensor t(shape);
    SplitMix64 rng(seed);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

ScanInputs random_inputs(std::int64_t B, std::int64_t L, std::int64_t D, std::int64_t N,
                         std::uint64_t seed) {
    ScanInputs in;
    in.u = random_tensor({B, L, D}, seed, -1.0, 1.0);
    in.delta = random_tensor({B, L, D}, seed + 1, 0.05, 0.5);
    in.A = random_tensor({D, N}, seed + 2, -1.0, -0.05);
    in.B_seq = random_tensor({B, L, N}, seed + 3, -1.0, 1.0);
    in.C_seq = random_tensor({B, L, N}, seed + 4, -1.0, 1.0);
    return in;
}

// Reference recurrence, written element by element against the definition
//   h_t = exp(delta_t * A) ⊙ h_{t-1} + delta_t * B_t * u_t, y_t = <C_t, h_t>.
Tensor naive_scan(const ScanInputs& in) {
    const std::int64_t B = in.batches(), L = in.length(), D = in.channels(), N = in.state_dim();
    Tensor y({B, L, D});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d) {
            std::vector<double> h(static_cast<std::size_t>(N), 0.0);
            for (std::int64_t t = 0; t < L; ++t) {
                double acc = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    h[static_cast<std::size_t>(n)] =
                        std::exp(in.delta.at(b, t, d) * in.A.at(d, n)) * h[static_cast<std::size_t>(n)] +
                        in.delta.at(b, t, d) * in.B_seq.at(b, t, n) * in.u.at(b, t, d);
                    acc += in.C_seq.at(b, t, n) * h[static_cast<std::size_t>(n)];
                }
                y.at(b, t, d) = acc;
            }
        }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a.at(i) - b.at(i)));
    return worst;
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-4}); }

double loss(const ScanInputs& in, const Tensor& dy) {
    const Tensor y = ss1d_scan(in);
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) s += dy.at(i) * y.at(i);
    return s;
}

// Central finite difference of the loss with respect to one element of one
// input tensor.
double fd_grad(ScanInputs in, const Tensor& dy, Tensor ScanInputs::* field, std::int64_t idx,
               double step = 1e-5) {
    (in.*field).at(idx) += step;
    const double up = loss(in, dy);
    (in.*field).at(idx) -= 2.0 * step;
    const double down = loss(in, dy);
    return (up - down) / (2.0 * step);
}

double check_field(const ScanInputs& in, const Tensor& dy, Tensor ScanInputs::* field,
                   const Tensor& analytic) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.numel(); ++i)
        worst = std::max(worst, rel_err(analytic.at(i), fd_grad(in, dy, field, i)));
    return worst;
}

}  // namespace

TEST_CASE("scan matches the elementwise reference recurrence") {
    const ScanInputs in = random_inputs(2, 7, 3, 4, 901);
    const Tensor y = ss1d_scan(in);
    CHECK_EQ(max_abs_diff(y, naive_scan(in)), 0.0);
}

TEST_CASE("decayless scalar scan is a prefix sum") {
    ScanInputs in;
    in.u = Tensor({1, 3, 1}, {1.0, 2.0, 3.0});
    in.delta = Tensor::full({1, 3, 1}, 1.0);
    in.A = Tensor({1, 1});  // exp(0) = 1: the state accumulates
    in.B_seq = Tensor::full({1, 3, 1}, 1.0);
    in.C_seq = Tensor::full({1, 3, 1}, 1.0);
    const Tensor y = ss1d_scan(in);
    CHECK_EQ(y.at(0), 1.0);
    CHECK_EQ(y.at(1), 3.0);
    CHECK_EQ(y.at(2), 6.0);
}

TEST_CASE("single-step scan has the closed form delta*B*u*C") {
    ScanInputs in;
    in.u = Tensor({1, 1, 1}, {2.0});
    in.delta = Tensor({1, 1, 1}, {2.0});
    in.A = Tensor({1, 1}, {-0.7});  // decay never matters from a zero state
    in.B_seq = Tensor({1, 1, 1}, {1.5});
    in.C_seq = Tensor({1, 1, 1}, {2.0});
    const Tensor y = ss1d_scan(in);
    CHECK_EQ(y.at(0), 12.0);
}

TEST_CASE("state trace matches a hand-unrolled two-step recurrence") {
    ScanInputs in;
    in.u = Tensor({1, 2, 1}, {1.0, 3.0});
    in.delta = Tensor({1, 2, 1}, {0.5, 0.25});
    in.A = Tensor({1, 1}, {-2.0});
    in.B_seq = Tensor({1, 2, 1}, {1.0, 2.0});
    in.C_seq = Tensor({1, 2, 1}, {1.0, 1.0});
    const ScanTrace tr = ss1d_scan_trace(in);

    const double h1 = 0.5 * 1.0 * 1.0;                       // exp term hits the zero state
    const double h2 = std::exp(0.25 * -2.0) * h1 + 0.25 * 2.0 * 3.0;
    CHECK_LT(std::fabs(tr.h.at(0) - h1), 1e-16);
    CHECK_LT(std::fabs(tr.h.at(1) - h2), 1e-15);
    CHECK_EQ(tr.y.at(0, 0, 0), tr.h.at(0));
    CHECK_EQ(tr.y.at(0, 1, 0), tr.h.at(1));
}

TEST_CASE("scan is causal") {
    ScanInputs in = random_inputs(1, 8, 2, 3, 911);
    const Tensor y0 = ss1d_scan(in);
    in.u.at(0, 5, 0) += 10.0;  // a change at t=5 ...
    const Tensor y1 = ss1d_scan(in);
    for (std::int64_t t = 0; t < 5; ++t)
        for (std::int64_t d = 0; d < 2; ++d) CHECK_EQ(y0.at(0, t, d), y1.at(0, t, d));
    CHECK_GT(std::fabs(y1.at(0, 5, 0) - y0.at(0, 5, 0)), 0.0);
}

TEST_CASE("backward gradients match central finite differences") {
    const ScanInputs in = random_inputs(2, 5, 3, 4, 921);
    Tensor dy({2, 5, 3});
    SplitMix64 rng(925);
    for (auto& v : dy.data()) v = rng.sym(1.0);

    const ScanGradients g = ss1d_backward(in, dy);
    CHECK_LT(check_field(in, dy, &ScanInputs::u, g.u), 1e-6);
    CHECK_LT(check_field(in, dy, &ScanInputs::delta, g.delta), 1e-6);
    CHECK_LT(check_field(in, dy, &ScanInputs::A, g.A), 1e-6);
    CHECK_LT(check_field(in, dy, &ScanInputs::B_seq, g.B_seq), 1e-6);
    CHECK_LT(check_field(in, dy, &ScanInputs::C_seq, g.C_seq), 1e-6);
}

TEST_CASE("gradient comparison detects an injected fault") {
    // Guard against a vacuous checker: corrupt one analytic entry and make
    // sure the finite-difference comparison actually flags it.
    const ScanInputs in = random_inputs(1, 6, 2, 3, 931);
    Tensor dy({1, 6, 2});
    SplitMix64 rng(935);
    for (auto& v : dy.data()) v = rng.sym(1.0);

    ScanGradients g = ss1d_backward(in, dy);
    CHECK_LT(check_field(in, dy, &ScanInputs::u, g.u), 1e-6);
    g.u.at(3) += 0.05;
    CHECK_GT(check_field(in, dy, &ScanInputs::u, g.u), 1e-3);
}

TEST_CASE("zero cotangent yields exactly zero gradients") {
    const ScanInputs in = random_inputs(2, 5, 3, 4, 941);
    const Tensor dy({2, 5, 3});
    const ScanGradients g = ss1d_backward(in, dy);
    for (const Tensor* t : {&g.u, &g.delta, &g.A, &g.B_seq, &g.C_seq})
        for (std::int64_t i = 0; i < t->numel(); ++i) CHECK_EQ(t->at(i), 0.0);
}

TEST_CASE("prefix-sum regime has the closed-form input Jacobian") {
    // With no decay and unit parameters, y_t = sum_{s<=t} u_s, so the
    // gradient of sum(y) with respect to u_s counts the positions at or
    // after s.
    const std::int64_t L = 5;
    ScanInputs in;
    in.u = Tensor({1, L, 1}, {0.3, -1.2, 2.0, 0.7, -0.4});
    in.delta = Tensor::full({1, L, 1}, 1.0);
    in.A = Tensor({1, 1});
    in.B_seq = Tensor::full({1, L, 1}, 1.0);
    in.C_seq = Tensor::full({1, L, 1}, 1.0);
    const Tensor dy = Tensor::full({1, L, 1}, 1.0);
    const ScanGradients g = ss1d_backward(in, dy);
    for (std::int64_t s = 0; s < L; ++s) CHECK_EQ(g.u.at(0, s, 0), static_cast<double>(L - s));
}

TEST_CASE("scan input validation") {
    ScanInputs in = random_inputs(1, 4, 2, 3, 931);
    SUBCASE("zero step size") {
        in.delta.at(0, 2, 1) = 0.0;
        CHECK_THROWS_AS(ss1d_scan(in), std::invalid_argument);
    }
    SUBCASE("negative step size") {
        in.delta.at(0, 0, 0) = -0.1;
        CHECK_THROWS_AS(ss1d_scan(in), std::invalid_argument);
    }
    SUBCASE("mismatched delta shape") {
        in.delta = Tensor({1, 4, 3});
        CHECK_THROWS_AS(ss1d_scan(in), std::invalid_argument);
    }
    SUBCASE("mismatched state matrix") {
        in.A = Tensor({3, 3});
        CHECK_THROWS_AS(ss1d_scan(in), std::invalid_argument);
    }
    SUBCASE("mismatched adjoint seed shape") {
        CHECK_THROWS_AS(ss1d_backward(in, Tensor({1, 4, 3})), std::invalid_argument);
    }
}

TEST_CASE("scan stays finite under extreme inputs") {
    ScanInputs in = random_inputs(1, 16, 2, 3, 941);
    for (auto& v : in.A.data()) v = -50.0;
    for (auto& v : in.u.data()) v *= 1e6;
    const Tensor y = ss1d_scan(in);
    CHECK(all_finite(y));
}

TEST_CASE("unfold orders for a 2x3 map") {
    const Tensor x({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    const auto seq_of = [&](Direction d) {
        const Tensor s = unfold_direction(x, d);
        std::vector<double> v;
        for (std::int64_t t = 0; t < s.extent(1); ++t) v.push_back(s.at(0, t, 0));
        return v;
    };
    CHECK_EQ(seq_of(Direction::h_fwd), std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_EQ(seq_of(Direction::h_bwd), std::vector<double>{6, 5, 4, 3, 2, 1});
    CHECK_EQ(seq_of(Direction::v_fwd), std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK_EQ(seq_of(Direction::v_bwd), std::vector<double>{6, 3, 5, 2, 4, 1});
}

TEST_CASE("unfold orders for a 3x2 map") {
    const Tensor x({1, 1, 3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor s = unfold_direction(x, Direction::v_fwd);
    const double want[6] = {1, 3, 5, 2, 4, 6};
    for (int t = 0; t < 6; ++t) CHECK_EQ(s.at(0, t, 0), want[t]);
}

TEST_CASE("fold inverts unfold for every direction") {
    SplitMix64 rng(951);
    Tensor x({2, 3, 3, 5});
    for (auto& v : x.data()) v = rng.sym(2.0);
    for (const Direction d :
         {Direction::h_fwd, Direction::h_bwd, Direction::v_fwd, Direction::v_bwd}) {
        const Tensor seq = unfold_direction(x, d);
        CHECK_EQ(seq.shape(), Shape{2, 15, 3});
        const Tensor back = fold_direction(seq, d, 3, 5);
        CHECK_EQ(max_abs_diff(back, x), 0.0);
    }
    CHECK_THROWS_AS(fold_direction(unfold_direction(x, Direction::h_fwd), Direction::h_fwd, 4, 4),
                    std::invalid_argument);
}

TEST_CASE("decayless unit-parameter 2d scan computes directional running sums") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto cumsum_params = [](Direction d) {
        Ss2dDirectionParams p;
        p.dir = d;
        p.A = Tensor({1, 1});  // zero: exp(0)=1, pure accumulation
        p.delta = 1.0;
        p.B_row = Tensor::full({1}, 1.0);
        p.C_row = Tensor::full({1}, 1.0);
        return p;
    };

    SUBCASE("row-major accumulation") {
        const auto p = cumsum_params(Direction::h_fwd);
        const Tensor y = ss2d(x, std::span<const Ss2dDirectionParams>(&p, 1));
        const double want[4] = {1, 3, 6, 10};
        for (int i = 0; i < 4; ++i) CHECK_EQ(y.at(i), want[i]);
    }
    SUBCASE("column-major accumulation") {
        const auto p = cumsum_params(Direction::v_fwd);
        const Tensor y = ss2d(x, std::span<const Ss2dDirectionParams>(&p, 1));
        const double want[4] = {1, 6, 4, 10};  // columns scanned top-to-bottom
        for (int i = 0; i < 4; ++i) CHECK_EQ(y.at(i), want[i]);
    }
    SUBCASE("two directions sum their folded results") {
        const std::array<Ss2dDirectionParams, 2> both = {cumsum_params(Direction::h_fwd),
                                                         cumsum_params(Direction::v_fwd)};
        const Tensor y = ss2d(x, both);
        const double want[4] = {1 + 1, 3 + 6, 6 + 4, 10 + 10};
        for (int i = 0; i < 4; ++i) CHECK_EQ(y.at(i), want[i]);
    }
}

TEST_CASE("horizontal and vertical scans of a symmetric map are transposes") {
    // On a transpose-symmetric input the row-major and column-major
    // serializations coincide, so the two directional responses fold back as
    // transposes of each other.
    SplitMix64 rng(951);
    Tensor x({1, 2, 4, 4});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = i; j < 4; ++j) {
                const double v = rng.sym(1.0);
                x.at(0, c, i, j) = v;
                x.at(0, c, j, i) = v;
            }

    SplitMix64 pr(952);
    Ss2dDirectionParams p;
    p.dir = Direction::h_fwd;
    p.A = Tensor({2, 3});
    for (auto& v : p.A.data()) v = pr.uniform(-1.0, -0.1);
    p.delta = 0.4;
    p.B_row = Tensor({3});
    p.C_row = Tensor({3});
    for (auto& v : p.B_row.data()) v = pr.sym(1.0);
    for (auto& v : p.C_row.data()) v = pr.sym(1.0);
    Ss2dDirectionParams q = p;
    q.dir = Direction::v_fwd;

    const Tensor yh = ss2d(x, std::span<const Ss2dDirectionParams>(&p, 1));
    const Tensor yv = ss2d(x, std::span<const Ss2dDirectionParams>(&q, 1));
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 4; ++j) CHECK_EQ(yv.at(0, c, i, j), yh.at(0, c, j, i));
}

TEST_CASE("region block parameter accounting at small width") {
    SplitMix64 rng(961);
    const RegionSS2DWeights w = make_region_ss2d_weights(8, 4, rng);
    // gn 16, depthwise 3x3 80, two rank-4 pairs 64 each, grouped state
    // projections 32+64, two state matrices 64, output projection 72
    CHECK_EQ(w.parameter_count(), 456);
    CHECK_EQ(w.driving_projection_parameter_count(), 8 * 4 + 4 * 8);
    CHECK_EQ(w.group_count(), 2);
    CHECK_EQ(w.rank(), kLowRank);
}

TEST_CASE("region block parameter accounting at full width") {
    SplitMix64 rng(962);
    const RegionSS2DWeights w = make_region_ss2d_weights(256, 16, rng);
    CHECK_EQ(w.driving_projection_parameter_count(), 2048);
    CHECK_EQ(dense_driving_projection_parameter_count(256), 65536);
    CHECK_EQ(w.parameter_count(), 82432);
    CHECK_EQ(dense_ss2d_reference_parameter_count(256, 16), 562688);
    CHECK_LT(static_cast<double>(w.parameter_count()) /
                 static_cast<double>(dense_ss2d_reference_parameter_count(256, 16)),
             0.25);
}

TEST_CASE("region block forward keeps shape and stays finite") {
    SplitMix64 rng(963);
    const RegionSS2DWeights w = make_region_ss2d_weights(8, 4, rng);
    Tensor x({2, 8, 6, 5});
    SplitMix64 xr(964);
    for (auto& v : x.data()) v = xr.sym(1.5);
    const Tensor y = region_aware_ss2d(x, w);
    CHECK_EQ(y.shape(), x.shape());
    CHECK(all_finite(y));

    SUBCASE("one weight instance serves every pyramid resolution") {
        for (const std::int64_t size : {16, 32}) {
            const Tensor level = Tensor::full({1, 8, size, size}, 0.25);
            const Tensor out = region_aware_ss2d(level, w);
            CHECK_EQ(out.shape(), (Shape{1, 8, size, size}));
            CHECK(all_finite(out));
        }
    }
    SUBCASE("zero input maps to zero because every bias starts at zero") {
        const Tensor zero({1, 8, 5, 5});
        const Tensor out = region_aware_ss2d(zero, w);
        for (std::int64_t i = 0; i < out.numel(); ++i) CHECK_EQ(out.at(i), 0.0);
    }
}

TEST_CASE("region block supports all four directions") {
    SplitMix64 rng(965);
    const std::array<Direction, 4> dirs = {Direction::h_fwd, Direction::h_bwd, Direction::v_fwd,
                                           Direction::v_bwd};
    const RegionSS2DWeights w = make_region_ss2d_weights(8, 4, dirs, rng);
    CHECK_EQ(w.A_dir.size(), 4);
    Tensor x({1, 8, 4, 4});
    SplitMix64 xr(966);
    for (auto& v : x.data()) v = xr.sym(1.0);
    const Tensor y = region_aware_ss2d(x, w);
    CHECK_EQ(y.shape(), x.shape());
    CHECK(all_finite(y));
}

TEST_CASE("region block validation") {
    SplitMix64 rng(967);
    RegionSS2DWeights w = make_region_ss2d_weights(8, 4, rng);
    Tensor x({1, 8, 4, 4});

    SUBCASE("corrupted state matrix shape") {
        w.A_dir[0] = Tensor({8, 3});
        CHECK_THROWS_AS(region_aware_ss2d(x, w), std::invalid_argument);
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(region_aware_ss2d(Tensor({1, 6, 4, 4}), w), std::invalid_argument);
    }
    SUBCASE("odd channel width is rejected at construction") {
        CHECK_THROWS_AS(make_region_ss2d_weights(7, 4, rng), std::invalid_argument);
    }
}
