#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mmk/encoder.hpp"
#include "mmk/rng.hpp"
#include "mmk/scan.hpp"
#include "mmk/tensor.hpp"

using namespace mmk;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double s = 1.0) {
    Tensor t(shape);
    SplitMix64 rng(seed);
    for (auto& v : t.data()) v = rng.sym(s);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a.at(i) - b.at(i)));
    return worst;
}

// y = x * W^T + b with W stored as (out, in), written as bare loops.
std::vector<double> matvec(const Tensor& w, const std::vector<double>& x, const Tensor* b) {
    const std::int64_t out = w.extent(0), in = w.extent(1);
    std::vector<double> y(static_cast<std::size_t>(out), 0.0);
    for (std::int64_t o = 0; o < out; ++o) {
        double acc = b ? b->at(o) : 0.0;
        for (std::int64_t i = 0; i < in; ++i) acc += w.at(o, i) * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("interaction gates match a straight-line re-derivation") {
    SplitMix64 rng(1301);
    const std::int64_t C = 4, N = 3, E = 8, L = 64;
    const CEIWeights w = make_cei_weights(C, N, rng);
    ModalityPair p{random_tensor({1, C, 8, 8}, 1302), random_tensor({1, C, 8, 8}, 1303)};
    const CEIGates got = cei_gates(p, w);

    // serialize the concatenated maps (the 8x8 pool is the identity here)
    std::vector<std::vector<double>> drive(L), gate(L);
    for (std::int64_t t = 0; t < L; ++t) {
        std::vector<double> z(2 * C);
        for (std::int64_t c = 0; c < 2 * C; ++c) {
            const Tensor& src = c < C ? p.rgb : p.ir;
            z[static_cast<std::size_t>(c)] = src.at(0, c % C, t / 8, t % 8);
        }
        const auto proj = matvec(w.in_up, matvec(w.in_down, z, nullptr), nullptr);
        drive[static_cast<std::size_t>(t)].assign(proj.begin(), proj.begin() + E);
        for (auto& v : drive[static_cast<std::size_t>(t)]) v = silu(v);
        gate[static_cast<std::size_t>(t)].assign(proj.begin() + E, proj.end());
    }

    // gated scan over the serialized sequence, one state row per feature
    std::vector<double> ybar(E, 0.0);
    std::vector<std::vector<double>> h(static_cast<std::size_t>(E), std::vector<double>(N, 0.0));
    for (std::int64_t t = 0; t < L; ++t) {
        const auto& u = drive[static_cast<std::size_t>(t)];
        const auto dt_raw = matvec(w.delta_w, u, &w.delta_b);
        const auto b_row = matvec(w.b_w, u, nullptr);
        const auto c_row = matvec(w.c_w, u, nullptr);
        for (std::int64_t e = 0; e < E; ++e) {
            const double dt = std::max(softplus_scalar(dt_raw[static_cast<std::size_t>(e)]), 1e-4);
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                auto& hn = h[static_cast<std::size_t>(e)][static_cast<std::size_t>(n)];
                hn = std::exp(dt * w.A.at(e, n)) * hn + dt * b_row[static_cast<std::size_t>(n)] * u[static_cast<std::size_t>(e)];
                acc += c_row[static_cast<std::size_t>(n)] * hn;
            }
            ybar[static_cast<std::size_t>(e)] += acc * silu(gate[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)]);
        }
    }
    for (auto& v : ybar) v /= static_cast<double>(L);

    double mean = 0.0, var = 0.0;
    for (double v : ybar) mean += v;
    mean /= static_cast<double>(E);
    for (double v : ybar) var += (v - mean) * (v - mean);
    var /= static_cast<double>(E);
    std::vector<double> ln(static_cast<std::size_t>(E));
    for (std::int64_t e = 0; e < E; ++e)
        ln[static_cast<std::size_t>(e)] = (ybar[static_cast<std::size_t>(e)] - mean) / std::sqrt(var + 1e-5);
    const auto logits = matvec(w.out_w, ln, &w.out_b);

    for (std::int64_t c = 0; c < C; ++c) {
        const double want_rgb = 1.0 / (1.0 + std::exp(-logits[static_cast<std::size_t>(c)]));
        const double want_ir = 1.0 / (1.0 + std::exp(-logits[static_cast<std::size_t>(C + c)]));
        CHECK_LT(std::fabs(got.w_rgb.at(0, c) - want_rgb), 1e-10);
        CHECK_LT(std::fabs(got.w_ir.at(0, c) - want_ir), 1e-10);
    }
}

TEST_CASE("interaction rescales residually and never shrinks a feature") {
    SplitMix64 rng(1304);
    const CEIWeights w = make_cei_weights(4, 3, rng);
    ModalityPair p{random_tensor({2, 4, 6, 6}, 1305, 2.0), random_tensor({2, 4, 6, 6}, 1306, 2.0)};
    const CEIGates g = cei_gates(p, w);
    const ModalityPair out = cei_forward(p, w);

    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t c = 0; c < 4; ++c) {
            CHECK_GT(g.w_rgb.at(b, c), 0.0);
            CHECK_LT(g.w_rgb.at(b, c), 1.0);
            CHECK_GT(g.w_ir.at(b, c), 0.0);
            CHECK_LT(g.w_ir.at(b, c), 1.0);
            for (std::int64_t i = 0; i < 6; ++i)
                for (std::int64_t j = 0; j < 6; ++j) {
                    const double fin = p.rgb.at(b, c, i, j), fout = out.rgb.at(b, c, i, j);
                    CHECK_EQ(fout, fin + g.w_rgb.at(b, c) * fin);  // residual law, bit for bit
                    CHECK_GE(std::fabs(fout), std::fabs(fin));
                    CHECK_GE(fout * fin, 0.0);  // sign preserved
                }
        }
}

TEST_CASE("a silenced gate head pins every gate at one half") {
    SplitMix64 rng(1311);
    CEIWeights w = make_cei_weights(4, 3, rng);
    w.out_w = Tensor(w.out_w.shape());  // zero logits into the sigmoid
    w.out_b = Tensor(w.out_b.shape());
    ModalityPair p{random_tensor({1, 4, 5, 5}, 1312, 2.0), random_tensor({1, 4, 5, 5}, 1313, 2.0)};
    const CEIGates g = cei_gates(p, w);
    const ModalityPair out = cei_forward(p, w);
    for (std::int64_t c = 0; c < 4; ++c) {
        CHECK_EQ(g.w_rgb.at(0, c), 0.5);
        CHECK_EQ(g.w_ir.at(0, c), 0.5);
    }
    for (std::int64_t i = 0; i < out.rgb.numel(); ++i) {
        CHECK_EQ(out.rgb.at(i), 1.5 * p.rgb.at(i));
        CHECK_EQ(out.ir.at(i), 1.5 * p.ir.at(i));
    }
}

TEST_CASE("one gate weight instance accepts several resolutions") {
    SplitMix64 rng(1314);
    const CEIWeights w = make_cei_weights(4, 3, rng);
    for (const std::int64_t size : {8, 16}) {
        ModalityPair p{random_tensor({1, 4, size, size}, 1315), random_tensor({1, 4, size, size}, 1316)};
        const CEIGates g = cei_gates(p, w);
        CHECK_EQ(g.w_rgb.shape(), (Shape{1, 4}));
        CHECK(all_finite(g.w_rgb));
        CHECK(all_finite(g.w_ir));
    }
}

TEST_CASE("interaction pools tiny maps without upscaling") {
    SplitMix64 rng(1307);
    const CEIWeights w = make_cei_weights(4, 3, rng);
    ModalityPair p{random_tensor({1, 4, 3, 5}, 1308), random_tensor({1, 4, 3, 5}, 1309)};
    const CEIGates g = cei_gates(p, w);
    CHECK_EQ(g.w_rgb.shape(), Shape{1, 4});
    CHECK(all_finite(g.w_rgb));
    CHECK(all_finite(g.w_ir));
}

TEST_CASE("interaction validation") {
    SplitMix64 rng(1310);
    const CEIWeights w = make_cei_weights(4, 3, rng);
    SUBCASE("modality shape mismatch") {
        ModalityPair p{Tensor({1, 4, 4, 4}), Tensor({1, 4, 4, 5})};
        CHECK_THROWS_AS(cei_forward(p, w), std::invalid_argument);
    }
    SUBCASE("channel mismatch") {
        ModalityPair p{Tensor({1, 6, 4, 4}), Tensor({1, 6, 4, 4})};
        CHECK_THROWS_AS(cei_forward(p, w), std::invalid_argument);
    }
}

TEST_CASE("position embedding quarters at the origin and divisibility rule") {
    const Tensor pe = sincos_position_embedding(3, 4, 8);
    CHECK_EQ(pe.shape(), Shape{12, 8});
    for (std::int64_t i = 0; i < 2; ++i) {
        CHECK_EQ(pe.at(0, i), 0.0);      // sin of x=0
        CHECK_EQ(pe.at(0, 2 + i), 1.0);  // cos of x=0
        CHECK_EQ(pe.at(0, 4 + i), 0.0);  // sin of y=0
        CHECK_EQ(pe.at(0, 6 + i), 1.0);  // cos of y=0
    }
    // token 1 sits at x=1, y=0 for row-major serialization
    CHECK_LT(std::fabs(pe.at(1, 0) - std::sin(1.0)), 1e-15);
    CHECK_LT(std::fabs(pe.at(1, 1) - std::sin(1.0 / 100.0)), 1e-15);  // second frequency
    // token 4 opens the second row: x=0, y=1
    CHECK_EQ(pe.at(4, 0), 0.0);
    CHECK_LT(std::fabs(pe.at(4, 4) - std::sin(1.0)), 1e-15);

    CHECK_THROWS_AS(sincos_position_embedding(2, 2, 6), std::invalid_argument);
}

TEST_CASE("attention scores match a direct softmax oracle") {
    SplitMix64 rng(1311);
    const std::int64_t d = 4, H = 2, W = 2, L = 4;
    const DeepAttentionWeights w = make_deep_attention_weights(d, rng);
    const Tensor x = random_tensor({1, d, H, W}, 1312);
    const Tensor got = deep_attention_scores(x, w);
    const Tensor pe = sincos_position_embedding(H, W, d);

    std::vector<std::vector<double>> q(L), k(L);
    for (std::int64_t t = 0; t < L; ++t) {
        std::vector<double> qk(static_cast<std::size_t>(d));
        for (std::int64_t c = 0; c < d; ++c) qk[static_cast<std::size_t>(c)] = x.at(0, c, t / W, t % W) + pe.at(t, c);
        q[static_cast<std::size_t>(t)] = matvec(w.wq, qk, &w.bq);
        k[static_cast<std::size_t>(t)] = matvec(w.wk, qk, &w.bk);
    }
    double worst = 0.0;
    for (std::int64_t i = 0; i < L; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(L));
        double mx = -1e300;
        for (std::int64_t j = 0; j < L; ++j) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < d; ++c)
                acc += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] *
                       k[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
            logits[static_cast<std::size_t>(j)] = acc / 2.0;  // 1/sqrt(4)
            mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (double& v : logits) z += (v = std::exp(v - mx));
        for (std::int64_t j = 0; j < L; ++j)
            worst = std::max(worst, std::fabs(got.at(0, i, j) - logits[static_cast<std::size_t>(j)] / z));
    }
    CHECK_LT(worst, 1e-13);
}

TEST_CASE("attention rows are stochastic and the embedding moves them") {
    SplitMix64 rng(1313);
    DeepAttentionWeights w = make_deep_attention_weights(8, rng);
    const Tensor x = random_tensor({2, 8, 3, 3}, 1314);
    const Tensor s = deep_attention_scores(x, w);
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t i = 0; i < 9; ++i) {
            double sum = 0.0;
            for (std::int64_t j = 0; j < 9; ++j) {
                CHECK_GT(s.at(b, i, j), 0.0);
                sum += s.at(b, i, j);
            }
            CHECK_LT(std::fabs(sum - 1.0), 1e-12);
        }
    w.pe_scale = 0.0;
    const Tensor s0 = deep_attention_scores(x, w);
    CHECK_GT(max_abs_diff(s, s0), 1e-6);  // the embedding must matter
}

TEST_CASE("attention with silenced value and output paths is a double layer norm") {
    SplitMix64 rng(1315);
    DeepAttentionWeights w = make_deep_attention_weights(8, rng);
    // leave the score path (wq/wk) live and zero everything additive
    for (Tensor* t : {&w.wv, &w.wo, &w.ffn_w2}) {
        for (auto& v : t->data()) v = 0.0;
    }
    const Tensor x = random_tensor({1, 8, 3, 2}, 1316);
    const Tensor got = deep_attention(x, w);
    const Tensor want = normalize(normalize(x, NormKind::layer, 1, w.ln1_gamma, w.ln1_beta),
                                  NormKind::layer, 1, w.ln2_gamma, w.ln2_beta);
    CHECK_LT(max_abs_diff(got, want), 1e-12);
}

TEST_CASE("attention validation") {
    SplitMix64 rng(1317);
    const DeepAttentionWeights w = make_deep_attention_weights(8, rng);
    CHECK_THROWS_AS(deep_attention(Tensor({1, 6, 2, 2}), w), std::invalid_argument);
    CHECK_THROWS_AS(deep_attention(Tensor({2, 4}), w), std::invalid_argument);
}

TEST_CASE("completion branch is gated by the fused feature's pooled response") {
    SplitMix64 rng(1318);
    CompletionWeights w;
    w.in_proj = ConvWeights{};
    w.in_proj.kernel = random_tensor({8, 4, 1, 1}, 1319, 0.5);
    w.in_proj.bias = Tensor({8});
    w.scan = make_region_ss2d_weights(8, 4, rng);
    w.dw = ConvWeights{};
    w.dw.kernel = random_tensor({8, 1, 3, 3}, 1320, 0.3);
    w.dw.groups = 8;
    w.dw.bias = Tensor({8});

    const Tensor modality = random_tensor({1, 4, 6, 6}, 1321);
    const Tensor fuse_hot = Tensor::full({1, 8, 6, 6}, 40.0);
    const Tensor fuse_cold = Tensor::full({1, 8, 6, 6}, -40.0);

    const Tensor open_gate = completion_branch(modality, fuse_hot, w);
    const Tensor shut_gate = completion_branch(modality, fuse_cold, w);

    double live = 0.0, dead = 0.0;
    for (std::int64_t i = 0; i < open_gate.numel(); ++i) {
        live = std::max(live, std::fabs(open_gate.at(i)));
        dead = std::max(dead, std::fabs(shut_gate.at(i)));
    }
    CHECK_GT(live, 1e-3);   // a saturated-open gate passes the branch through
    CHECK_LT(dead, 1e-12);  // a saturated-shut gate silences it

    SUBCASE("spatial misalignment is rejected") {
        CHECK_THROWS_AS(completion_branch(modality, Tensor({1, 8, 5, 6}), w), std::invalid_argument);
    }
}

TEST_CASE("completion output is the gated body, channel by channel") {
    SplitMix64 rng(1330);
    CompletionWeights w;
    w.in_proj.kernel = random_tensor({8, 4, 1, 1}, 1331, 0.5);
    w.in_proj.bias = Tensor({8});
    w.scan = make_region_ss2d_weights(8, 4, rng);
    w.dw.kernel = random_tensor({8, 1, 3, 3}, 1332, 0.3);
    w.dw.groups = 8;
    w.dw.bias = Tensor({8});

    const Tensor modality = random_tensor({1, 4, 6, 6}, 1333);
    const Tensor fuse = random_tensor({1, 8, 6, 6}, 1334);
    const Tensor out = completion_branch(modality, fuse, w);

    const Tensor body = conv2d(region_aware_ss2d(conv2d(modality, w.in_proj), w.scan), w.dw);
    const Tensor pooled = global_avg_pool(fuse);
    for (std::int64_t c = 0; c < 8; ++c) {
        const double gate = sigmoid_scalar(pooled.at(0, c, 0, 0));
        CHECK_GT(gate, 0.0);
        CHECK_LT(gate, 1.0);
        for (std::int64_t h = 0; h < 6; ++h)
            for (std::int64_t v = 0; v < 6; ++v) {
                CHECK_EQ(out.at(0, c, h, v), gate * body.at(0, c, h, v));
                CHECK_LE(std::fabs(out.at(0, c, h, v)), std::fabs(body.at(0, c, h, v)));
            }
    }
}

TEST_CASE("an aligned-width projection can select either modality block") {
    const Tensor rgb = random_tensor({1, 3, 4, 4}, 1335);
    const Tensor ir = random_tensor({1, 3, 4, 4}, 1336);
    const Tensor both[2] = {rgb, ir};
    const Tensor cat = concat_channels(both);

    ConvWeights pick;
    pick.kernel = Tensor({3, 6, 1, 1});
    SUBCASE("identity block on the first half") {
        for (std::int64_t c = 0; c < 3; ++c) pick.kernel.at(c, c, 0, 0) = 1.0;
        CHECK_EQ(max_abs_diff(conv2d(cat, pick), rgb), 0.0);
    }
    SUBCASE("identity block on the second half") {
        for (std::int64_t c = 0; c < 3; ++c) pick.kernel.at(c, 3 + c, 0, 0) = 1.0;
        CHECK_EQ(max_abs_diff(conv2d(cat, pick), ir), 0.0);
    }
}

TEST_CASE("attention without position information is permutation equivariant") {
    SplitMix64 rng(1337);
    DeepAttentionWeights w = make_deep_attention_weights(8, rng);
    w.pe_scale = 0.0;

    const Tensor x = random_tensor({1, 8, 2, 2}, 1338);
    const int perm[4] = {2, 0, 3, 1};  // positions are tokens on the 2x2 grid
    Tensor shuffled(x.shape());
    for (std::int64_t c = 0; c < 8; ++c)
        for (int t = 0; t < 4; ++t) {
            const int s = perm[t];
            shuffled.at(0, c, t / 2, t % 2) = x.at(0, c, s / 2, s % 2);
        }

    const Tensor y = deep_attention(x, w);
    const Tensor y_shuffled = deep_attention(shuffled, w);
    for (std::int64_t c = 0; c < 8; ++c)
        for (int t = 0; t < 4; ++t) {
            const int s = perm[t];
            CHECK_LT(std::fabs(y_shuffled.at(0, c, t / 2, t % 2) - y.at(0, c, s / 2, s % 2)), 1e-12);
        }

    // With the embedding active, position matters and equivariance breaks.
    w.pe_scale = 1.0;
    const Tensor z = deep_attention(x, w);
    const Tensor z_shuffled = deep_attention(shuffled, w);
    double gap = 0.0;
    for (std::int64_t c = 0; c < 8; ++c)
        for (int t = 0; t < 4; ++t) {
            const int s = perm[t];
            gap = std::max(gap, std::fabs(z_shuffled.at(0, c, t / 2, t % 2) - z.at(0, c, s / 2, s % 2)));
        }
    CHECK_GT(gap, 1e-8);
}

TEST_CASE("fusion block is a reduction plus one residual refinement") {
    SplitMix64 rng(1322);
    FusionBlockWeights w;
    w.reduce.kernel = random_tensor({4, 12, 1, 1}, 1323, 0.3);
    w.reduce.bias = random_tensor({4}, 1324, 0.1);
    w.conv3.kernel = random_tensor({4, 4, 3, 3}, 1325, 0.2);
    w.conv3.bias = random_tensor({4}, 1326, 0.1);
    const Tensor x = random_tensor({1, 12, 5, 5}, 1327);
    const Tensor got = fusion_block(x, w);
    const Tensor reduced = conv2d(x, w.reduce);
    CHECK_EQ(max_abs_diff(got, add(reduced, conv2d(reduced, w.conv3))), 0.0);
}

TEST_CASE("pyramid fusion produces the three-level contract on non-square maps") {
    SplitMix64 rng(1328);
    const std::array<std::int64_t, 3> chans = {4, 6, 8};
    const MPFWeights w = make_mpf_weights(chans, 16, 4, rng);
    std::array<ModalityPair, 3> levels;
    std::int64_t h = 8, iw = 4;
    for (int l = 0; l < 3; ++l) {
        levels[static_cast<std::size_t>(l)] = {
            random_tensor({1, chans[static_cast<std::size_t>(l)], h, iw}, 1330 + 2 * l),
            random_tensor({1, chans[static_cast<std::size_t>(l)], h, iw}, 1331 + 2 * l)};
        h /= 2;
        iw /= 2;
    }
    const PyramidFeatures f = mpf_forward(levels, w);
    CHECK_EQ(f.p3.shape(), Shape{1, 16, 8, 4});
    CHECK_EQ(f.n4.shape(), Shape{1, 16, 4, 2});
    CHECK_EQ(f.n5.shape(), Shape{1, 16, 2, 1});
    CHECK(all_finite(f.p3));
    CHECK(all_finite(f.n4));
    CHECK(all_finite(f.n5));

    SUBCASE("level shape mismatch is rejected") {
        levels[1].ir = Tensor({1, 6, 4, 4});
        CHECK_THROWS_AS(mpf_forward(levels, w), std::invalid_argument);
    }
}

TEST_CASE("silencing the completion output convs reproduces the branch-free pipeline") {
    SplitMix64 rng(1332);
    const std::array<std::int64_t, 3> chans = {4, 6, 8};
    MPFWeights gated = make_mpf_weights(chans, 16, 4, rng, CompletionSide::ir);
    MPFWeights plain = gated;
    plain.side = CompletionSide::none;
    for (JunctionWeights* j : {&gated.td4, &gated.td3, &gated.bu4, &gated.bu5}) {
        for (auto& v : j->ir.dw.kernel.data()) v = 0.0;
        for (auto& v : j->ir.dw.bias->data()) v = 0.0;
    }
    std::array<ModalityPair, 3> levels;
    std::int64_t hw = 8;
    for (int l = 0; l < 3; ++l) {
        levels[static_cast<std::size_t>(l)] = {
            random_tensor({1, chans[static_cast<std::size_t>(l)], hw, hw}, 1340 + 2 * l),
            random_tensor({1, chans[static_cast<std::size_t>(l)], hw, hw}, 1341 + 2 * l)};
        hw /= 2;
    }
    const PyramidFeatures a = mpf_forward(levels, gated);
    const PyramidFeatures b = mpf_forward(levels, plain);
    CHECK_EQ(max_abs_diff(a.p3, b.p3), 0.0);
    CHECK_EQ(max_abs_diff(a.n4, b.n4), 0.0);
    CHECK_EQ(max_abs_diff(a.n5, b.n5), 0.0);
}

TEST_CASE("an active completion branch changes the pyramid") {
    SplitMix64 rng(1333);
    const std::array<std::int64_t, 3> chans = {4, 6, 8};
    MPFWeights gated = make_mpf_weights(chans, 16, 4, rng, CompletionSide::ir);
    MPFWeights plain = gated;
    plain.side = CompletionSide::none;
    std::array<ModalityPair, 3> levels;
    std::int64_t hw = 8;
    for (int l = 0; l < 3; ++l) {
        levels[static_cast<std::size_t>(l)] = {
            random_tensor({1, chans[static_cast<std::size_t>(l)], hw, hw}, 1350 + 2 * l),
            random_tensor({1, chans[static_cast<std::size_t>(l)], hw, hw}, 1351 + 2 * l)};
        hw /= 2;
    }
    const PyramidFeatures a = mpf_forward(levels, gated);
    const PyramidFeatures b = mpf_forward(levels, plain);
    CHECK_GT(max_abs_diff(a.p3, b.p3), 1e-8);
}
