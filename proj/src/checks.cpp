#include "mmk/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <utility>

#include "mmk/adapter.hpp"
#include "mmk/encoder.hpp"
#include "mmk/harness.hpp"
#include "mmk/scan.hpp"
#include "mmk/weight_store.hpp"

namespace mmk::checks {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return std::string(buf);
}

CheckResult bounded(double measured, double tol, std::string detail) {
    CheckResult r;
    r.measured = measured;
    r.tolerance = tol;
    r.pass = measured <= tol;
    r.detail = std::move(detail);
    return r;
}

CheckResult exceeds(double measured, double floor_value, std::string detail) {
    CheckResult r;
    r.measured = measured;
    r.tolerance = floor_value;
    r.pass = measured > floor_value;
    r.detail = std::move(detail);
    return r;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::fabs(av[i] - bv[i]));
    return worst;
}

Tensor random_tensor(const Shape& shape, SplitMix64& rng, double s = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.sym(s);
    return t;
}

Tensor random_range(const Shape& shape, SplitMix64& rng, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

ScanInputs random_scan_inputs(std::int64_t B, std::int64_t L, std::int64_t D, std::int64_t N,
                              std::uint64_t seed) {
    SplitMix64 rng(seed);
    ScanInputs in;
    in.u = random_tensor({B, L, D}, rng, 0.8);
    in.delta = random_range({B, L, D}, rng, 0.05, 0.6);
    in.A = random_range({D, N}, rng, -1.5, -0.2);
    in.B_seq = random_tensor({B, L, N}, rng, 0.8);
    in.C_seq = random_tensor({B, L, N}, rng, 0.8);
    return in;
}

double scan_loss(const ScanInputs& in, const Tensor& dy) {
    const Tensor y = ss1d_scan(in);
    double s = 0.0;
    const auto yv = y.data();
    const auto dv = dy.data();
    for (std::size_t i = 0; i < yv.size(); ++i) s += dv[i] * yv[i];
    return s;
}

// Central finite difference on one field of the scan inputs, compared against
// the analytic adjoint; returns the worst relative disagreement.
double fd_worst_rel(const ScanInputs& in, const Tensor& dy, Tensor ScanInputs::* field,
                    const Tensor& analytic) {
    constexpr double h = 1e-5;
    ScanInputs work = in;
    Tensor& t = work.*field;
    const auto grad = analytic.data();
    double worst = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double orig = t.at(i);
        t.at(i) = orig + h;
        const double lp = scan_loss(work, dy);
        t.at(i) = orig - h;
        const double lm = scan_loss(work, dy);
        t.at(i) = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double g = grad[static_cast<std::size_t>(i)];
        const double rel = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-4});
        worst = std::max(worst, rel);
    }
    return worst;
}

HarnessConfig tiny_config() {
    HarnessConfig cfg;
    cfg.stage_channels = {8, 12, 16};
    cfg.stem_channels = 8;
    cfg.input_size = 32;
    cfg.adapter_dim = 8;
    cfg.fusion_width = 16;
    cfg.state_dim = 4;
    cfg.seed = 23;
    cfg.zero_init_adapter_outputs = false;
    return cfg;
}

double median_scan_ms(std::int64_t L, std::int64_t D, std::int64_t N, int reps) {
    const ScanInputs in = random_scan_inputs(1, L, D, N, 31ULL + static_cast<std::uint64_t>(L));
    volatile double sink = 0.0;
    for (int w = 0; w < 2; ++w) sink = sink + ss1d_scan(in).at(0);
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor y = ss1d_scan(in);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + y.at(0);
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
}

// ---------------------------------------------------------------- scan group

CheckResult check_scan_linearity_scale() {
    ScanInputs in = random_scan_inputs(2, 7, 3, 4, 11);
    const Tensor y1 = ss1d_scan(in);
    ScanInputs scaled = in;
    scaled.u = scale(in.u, 2.5);
    const Tensor y2 = ss1d_scan(scaled);
    const double worst = max_abs_diff(y2, scale(y1, 2.5));
    return bounded(worst, 1e-12, "max |y(2.5u) - 2.5 y(u)|");
}

CheckResult check_scan_linearity_additive() {
    ScanInputs a = random_scan_inputs(1, 9, 2, 3, 12);
    ScanInputs b = a;
    SplitMix64 rng(13);
    b.u = random_tensor(a.u.shape(), rng, 0.8);
    ScanInputs sum = a;
    sum.u = add(a.u, b.u);
    const double worst = max_abs_diff(ss1d_scan(sum), add(ss1d_scan(a), ss1d_scan(b)));
    return bounded(worst, 1e-12, "max |y(u1+u2) - y(u1) - y(u2)|");
}

CheckResult check_scan_causality() {
    ScanInputs in = random_scan_inputs(1, 8, 2, 3, 14);
    for (auto& v : in.u.data()) v = 0.0;
    for (std::int64_t d = 0; d < 2; ++d) in.u.at(0, 3, d) = 1.0;
    const Tensor y = ss1d_scan(in);
    double worst = 0.0;
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t d = 0; d < 2; ++d) worst = std::max(worst, std::fabs(y.at(0, t, d)));
    return bounded(worst, 0.0, "response before the impulse position");
}

CheckResult check_scan_single_step() {
    ScanInputs in;
    in.u = Tensor({1, 1, 1}, {3.0});
    in.delta = Tensor({1, 1, 1}, {0.5});
    in.A = Tensor({1, 2}, {-1.0, -2.0});
    in.B_seq = Tensor({1, 1, 2}, {1.0, 2.0});
    in.C_seq = Tensor({1, 1, 2}, {2.0, 3.0});
    // h = 0.5*3*(1,2) = (1.5, 3); y = 2*1.5 + 3*3 = 12
    const double y = ss1d_scan(in).at(0);
    return bounded(std::fabs(y - 12.0), 1e-15, fmt("single-step output %.17g, expected 12", y));
}

CheckResult check_scan_decay_bound() {
    const ScanInputs in = random_scan_inputs(2, 64, 4, 5, 15);
    const ScanTrace tr = ss1d_scan_trace(in);
    double dmax = 0.0, umax = 0.0, bmax = 0.0, rho = 0.0;
    for (double v : in.delta.data()) dmax = std::max(dmax, v);
    for (double v : in.u.data()) umax = std::max(umax, std::fabs(v));
    for (double v : in.B_seq.data()) bmax = std::max(bmax, std::fabs(v));
    for (std::int64_t b = 0; b < in.batches(); ++b)
        for (std::int64_t t = 0; t < in.length(); ++t)
            for (std::int64_t d = 0; d < in.channels(); ++d)
                for (std::int64_t n = 0; n < in.state_dim(); ++n)
                    rho = std::max(rho, std::exp(in.delta.at(b, t, d) * in.A.at(d, n)));
    const double bound = dmax * bmax * umax / (1.0 - rho);
    double hmax = 0.0;
    for (double v : tr.h.data()) hmax = std::max(hmax, std::fabs(v));
    return bounded(hmax / bound, 1.0, fmt("max |h| = %.6g against geometric bound %.6g", hmax, bound));
}

CheckResult check_scan_grad(Tensor ScanInputs::* field, Tensor ScanGradients::* gfield,
                            const char* what) {
    const ScanInputs in = random_scan_inputs(2, 5, 3, 4, 16);
    SplitMix64 rng(17);
    const Tensor dy = random_tensor(in.u.shape(), rng, 1.0);
    const ScanGradients g = ss1d_backward(in, dy);
    const double worst = fd_worst_rel(in, dy, field, g.*gfield);
    return bounded(worst, 1e-6, std::string("worst relative error of the ") + what + " adjoint vs central differences");
}

CheckResult check_fold_roundtrip() {
    SplitMix64 rng(18);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    double worst = 0.0;
    for (Direction d : {Direction::h_fwd, Direction::h_bwd, Direction::v_fwd, Direction::v_bwd}) {
        worst = std::max(worst, max_abs_diff(fold_direction(unfold_direction(x, d), d, 4, 5), x));
    }
    return bounded(worst, 0.0, "fold(unfold(x)) over all four raster orders");
}

CheckResult check_direction_reversal() {
    SplitMix64 rng(19);
    const Tensor x = random_tensor({1, 2, 3, 4}, rng);
    double worst = 0.0;
    for (auto [fwd, bwd] : {std::pair{Direction::h_fwd, Direction::h_bwd},
                            std::pair{Direction::v_fwd, Direction::v_bwd}}) {
        const Tensor f = unfold_direction(x, fwd);
        const Tensor b = unfold_direction(x, bwd);
        const std::int64_t L = f.extent(1);
        for (std::int64_t t = 0; t < L; ++t)
            for (std::int64_t c = 0; c < f.extent(2); ++c)
                worst = std::max(worst, std::fabs(f.at(0, t, c) - b.at(0, L - 1 - t, c)));
    }
    return bounded(worst, 0.0, "backward rasters equal reversed forward rasters");
}

CheckResult check_ss2d_cumsum() {
    const Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Ss2dDirectionParams p;
    p.A = Tensor({1, 1});  // zero state matrix: pure accumulation
    p.delta = 1.0;
    p.B_row = Tensor({1}, {1.0});
    p.C_row = Tensor({1}, {1.0});
    double worst = 0.0;
    p.dir = Direction::h_fwd;
    {
        const Tensor y = ss2d(x, std::span<const Ss2dDirectionParams>(&p, 1));
        const double want[4] = {1.0, 3.0, 6.0, 10.0};
        for (int i = 0; i < 4; ++i) worst = std::max(worst, std::fabs(y.at(i) - want[i]));
    }
    p.dir = Direction::v_fwd;
    {
        const Tensor y = ss2d(x, std::span<const Ss2dDirectionParams>(&p, 1));
        const double want[4] = {1.0, 6.0, 4.0, 10.0};
        for (int i = 0; i < 4; ++i) worst = std::max(worst, std::fabs(y.at(i) - want[i]));
    }
    return bounded(worst, 1e-12, "degenerate scan reproduces directional cumulative sums");
}

CheckResult check_ss2d_direction_additivity() {
    SplitMix64 rng(20);
    const Tensor x = random_tensor({1, 3, 4, 5}, rng);
    std::vector<Ss2dDirectionParams> ps(2);
    for (int i = 0; i < 2; ++i) {
        ps[i].dir = i == 0 ? Direction::h_fwd : Direction::v_bwd;
        ps[i].A = random_range({3, 4}, rng, -1.2, -0.3);
        ps[i].delta = 0.3;
        ps[i].B_row = random_tensor({4}, rng);
        ps[i].C_row = random_tensor({4}, rng);
    }
    const Tensor both = ss2d(x, ps);
    const Tensor first = ss2d(x, std::span<const Ss2dDirectionParams>(ps.data(), 1));
    const Tensor second = ss2d(x, std::span<const Ss2dDirectionParams>(ps.data() + 1, 1));
    return bounded(max_abs_diff(both, add(first, second)), 1e-12,
                   "two-direction result equals the sum of single-direction results");
}

CheckResult check_region_shape_finite() {
    SplitMix64 rng(21);
    RegionSS2DWeights w = make_region_ss2d_weights(8, 4, rng);
    const Tensor x = random_tensor({2, 8, 6, 5}, rng);
    const Tensor y = region_aware_ss2d(x, w);
    const bool ok = y.same_shape(x) && all_finite(y);
    return bounded(ok ? 0.0 : 1.0, 0.0, "output shape matches input and every value is finite");
}

CheckResult check_region_low_rank_budget() {
    SplitMix64 rng(22);
    RegionSS2DWeights w = make_region_ss2d_weights(256, 16, rng);
    const auto count = w.driving_projection_parameter_count();
    const auto dense = dense_driving_projection_parameter_count(256);
    CheckResult r;
    r.measured = static_cast<double>(count);
    r.tolerance = 0.25 * static_cast<double>(dense);
    r.pass = count == 2048 && static_cast<double>(count) < r.tolerance;
    r.detail = fmt("driving projection holds %.0f weights; dense map would hold %.0f",
                   static_cast<double>(count), static_cast<double>(dense));
    return r;
}

CheckResult check_region_module_budget() {
    SplitMix64 rng(23);
    RegionSS2DWeights w = make_region_ss2d_weights(256, 16, rng);
    const auto count = w.parameter_count();
    const auto dense = dense_ss2d_reference_parameter_count(256, 16);
    const double ratio = static_cast<double>(count) / static_cast<double>(dense);
    CheckResult r = bounded(ratio, 0.25,
                            fmt("block holds %.0f weights, dense reference %.0f", static_cast<double>(count),
                                static_cast<double>(dense)));
    r.pass = r.pass && count == 82432;
    return r;
}

// ------------------------------------------------------------- encoder group

CheckResult check_cei_gate_range() {
    SplitMix64 rng(24);
    CEIWeights w = make_cei_weights(8, 4, rng);
    ModalityPair p{random_tensor({1, 8, 16, 16}, rng), random_tensor({1, 8, 16, 16}, rng)};
    const CEIGates g = cei_gates(p, w);
    std::int64_t bad = 0;
    for (const Tensor* t : {&g.w_rgb, &g.w_ir})
        for (double v : t->data())
            if (!(v > 0.0 && v < 1.0)) ++bad;
    return bounded(static_cast<double>(bad), 0.0, "modality gates outside the open interval (0,1)");
}

CheckResult check_cei_residual_identity() {
    SplitMix64 rng(25);
    CEIWeights w = make_cei_weights(6, 4, rng);
    for (auto& v : w.out_w.data()) v = 0.0;
    for (auto& v : w.out_b.data()) v = -40.0;  // gates collapse to sigmoid(-40) ~ 4e-18
    ModalityPair p{random_tensor({1, 6, 8, 8}, rng), random_tensor({1, 6, 8, 8}, rng)};
    const ModalityPair out = cei_forward(p, w);
    const double worst = std::max(max_abs_diff(out.rgb, p.rgb), max_abs_diff(out.ir, p.ir));
    return bounded(worst, 1e-12, "with gates forced to zero the block reduces to the identity");
}

CheckResult check_cei_small_maps() {
    SplitMix64 rng(26);
    CEIWeights w = make_cei_weights(6, 4, rng);
    ModalityPair p{random_tensor({1, 6, 3, 5}, rng), random_tensor({1, 6, 3, 5}, rng)};
    const ModalityPair out = cei_forward(p, w);
    const bool ok = out.rgb.same_shape(p.rgb) && out.ir.same_shape(p.ir) && all_finite(out.rgb) &&
                    all_finite(out.ir);
    return bounded(ok ? 0.0 : 1.0, 0.0, "maps smaller than the pooling grid are handled by clamping");
}

CheckResult check_attention_row_stochastic() {
    SplitMix64 rng(27);
    DeepAttentionWeights w = make_deep_attention_weights(16, rng);
    const Tensor x = random_tensor({1, 16, 3, 4}, rng);
    const Tensor s = deep_attention_scores(x, w);
    double worst = 0.0;
    for (std::int64_t i = 0; i < s.extent(1); ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < s.extent(2); ++j) {
            const double v = s.at(0, i, j);
            sum += v;
            if (v < 0.0) worst = std::max(worst, -v);
        }
        worst = std::max(worst, std::fabs(sum - 1.0));
    }
    return bounded(worst, 1e-12, "attention rows are non-negative and sum to one");
}

CheckResult check_attention_structural_identity() {
    SplitMix64 rng(28);
    DeepAttentionWeights w = make_deep_attention_weights(16, rng);
    for (Tensor* t : {&w.wv, &w.bv, &w.wo, &w.bo, &w.ffn_w2, &w.ffn_b2})
        for (auto& v : t->data()) v = 0.0;
    const Tensor x = random_tensor({1, 16, 3, 4}, rng);
    const Tensor got = deep_attention(x, w);
    Tensor tokens = unfold_direction(x, Direction::h_fwd);
    tokens = normalize(tokens, NormKind::layer, 1, w.ln1_gamma, w.ln1_beta);
    tokens = normalize(tokens, NormKind::layer, 1, w.ln2_gamma, w.ln2_beta);
    const Tensor want = fold_direction(tokens, Direction::h_fwd, 3, 4);
    return bounded(max_abs_diff(got, want), 1e-12,
                   "with value, output and second feed-forward maps zeroed the block is two layer norms");
}

CheckResult check_pe_distinct() {
    const Tensor pe = sincos_position_embedding(6, 5, 32);
    double gap = 1e300;
    for (std::int64_t i = 0; i < pe.extent(0); ++i)
        for (std::int64_t j = i + 1; j < pe.extent(0); ++j) {
            double d = 0.0;
            for (std::int64_t k = 0; k < pe.extent(1); ++k)
                d = std::max(d, std::fabs(pe.at(i, k) - pe.at(j, k)));
            gap = std::min(gap, d);
        }
    return exceeds(gap, 1e-6, "smallest pairwise gap between positional rows (must exceed tolerance)");
}

std::array<ModalityPair, 3> random_levels(const std::array<std::int64_t, 3>& chans, std::int64_t top,
                                          SplitMix64& rng) {
    std::array<ModalityPair, 3> levels;
    for (std::size_t l = 0; l < 3; ++l) {
        const std::int64_t hw = top >> l;
        levels[l].rgb = random_tensor({1, chans[l], hw, hw}, rng);
        levels[l].ir = random_tensor({1, chans[l], hw, hw}, rng);
    }
    return levels;
}

CheckResult check_mpf_shapes() {
    SplitMix64 rng(29);
    const std::array<std::int64_t, 3> chans{8, 12, 16};
    MPFWeights w = make_mpf_weights(chans, 16, 4, rng, CompletionSide::ir);
    const auto levels = random_levels(chans, 8, rng);
    const PyramidFeatures p = mpf_forward(levels, w);
    const bool ok = p.p3.shape() == Shape{1, 16, 8, 8} && p.n4.shape() == Shape{1, 16, 4, 4} &&
                    p.n5.shape() == Shape{1, 16, 2, 2} && all_finite(p.p3) && all_finite(p.n4) &&
                    all_finite(p.n5);
    return bounded(ok ? 0.0 : 1.0, 0.0, "pyramid outputs sit at the fused width and strides 8/16/32");
}

CheckResult check_mpf_completion_ablation() {
    SplitMix64 rng(30);
    const std::array<std::int64_t, 3> chans{8, 12, 16};
    MPFWeights w = make_mpf_weights(chans, 16, 4, rng, CompletionSide::ir);
    const auto levels = random_levels(chans, 8, rng);
    const PyramidFeatures with = mpf_forward(levels, w);
    MPFWeights cut = w;
    cut.side = CompletionSide::none;
    const PyramidFeatures without = mpf_forward(levels, cut);
    const double diff = std::max({max_abs_diff(with.p3, without.p3), max_abs_diff(with.n4, without.n4),
                                  max_abs_diff(with.n5, without.n5)});
    return exceeds(diff, 1e-8, "removing the completion branches must change the pyramid");
}

// ------------------------------------------------------------- adapter group

CheckResult check_fft_roundtrip() {
    SplitMix64 rng(31);
    const Tensor x = random_tensor({1, 2, 8, 6}, rng);
    const Tensor back = idft2d_centered_real(dft2d_centered(x));
    return bounded(max_abs_diff(back, x), 1e-9, "inverse transform recovers the input");
}

CheckResult check_fft_parseval() {
    SplitMix64 rng(32);
    const Tensor x = random_tensor({1, 1, 8, 8}, rng);
    const ComplexImage s = dft2d_centered(x);
    double ex = 0.0, es = 0.0;
    for (double v : x.data()) ex += v * v;
    for (const auto& z : s.data) es += std::norm(z);
    es /= 64.0;
    const double rel = std::fabs(ex - es) / std::max(ex, 1e-12);
    return bounded(rel, 1e-9, fmt("spatial energy %.12g vs spectral energy %.12g", ex, es));
}

CheckResult check_fft_impulse() {
    Tensor x({1, 1, 8, 8});
    x.at(0, 0, 2, 3) = 1.0;
    const ComplexImage s = dft2d_centered(x);
    double worst = 0.0;
    for (const auto& z : s.data) worst = std::max(worst, std::fabs(std::abs(z) - 1.0));
    return bounded(worst, 1e-12, "impulse input yields a flat magnitude spectrum");
}

CheckResult check_mask_partition() {
    double worst = 0.0;
    for (auto [H, W] : {std::pair<std::int64_t, std::int64_t>{4, 4}, {6, 4}, {4, 6}, {8, 8}}) {
        const Tensor low = centered_lowpass_mask(H, W, 0.5);
        double ones = 0.0;
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                const double v = low.at(h, w);
                if (v != 0.0 && v != 1.0) worst = std::max(worst, 1.0);
                ones += v;
            }
        if (H == 4 && W == 4 && ones != 9.0) worst = std::max(worst, std::fabs(ones - 9.0));
        if (ones <= 0.0 || ones >= static_cast<double>(H * W)) worst = std::max(worst, 1.0);
    }
    return bounded(worst, 0.0, "cutoff masks are 0/1 partitions with the expected census");
}

CheckResult check_adapter_identity() {
    SplitMix64 rng(33);
    AdapterWeights w = make_adapter_weights(8, 16, rng, /*zero_init_outputs=*/true);
    const Tensor x = random_tensor({1, 8, 6, 6}, rng);
    return bounded(max_abs_diff(adapter_forward(x, w), x), 0.0,
                   "freshly initialized adapter is an exact identity");
}

CheckResult check_adapter_router() {
    SplitMix64 rng(34);
    AdapterWeights w = make_adapter_weights(8, 16, rng, false);
    const Tensor x = random_tensor({1, 8, 6, 6}, rng);
    const Tensor weights = activate(conv2d(x, w.router), Activation::softmax_channels);
    double worst = 0.0;
    for (std::int64_t h = 0; h < 6; ++h)
        for (std::int64_t ww = 0; ww < 6; ++ww) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < 3; ++c) {
                const double v = weights.at(0, c, h, ww);
                sum += v;
                if (v < 0.0) worst = std::max(worst, -v);
            }
            worst = std::max(worst, std::fabs(sum - 1.0));
        }
    return bounded(worst, 1e-12, "pixel router weights form a 3-way partition of unity");
}

CheckResult check_adapter_full_cutoff() {
    SplitMix64 rng(35);
    AdapterWeights w = make_adapter_weights(8, 16, rng, false);
    w.rho = 1.0;
    const Tensor xt = random_tensor({1, 16, 8, 8}, rng);
    const auto [d_low, d_high] = frequency_expert(xt, w);
    (void)d_low;
    double worst = 0.0;
    for (double v : d_high.data()) worst = std::max(worst, std::fabs(v));
    return bounded(worst, 0.0, "at full cutoff the high-frequency branch carries nothing");
}

CheckResult check_adapter_odd_sizes() {
    SplitMix64 rng(36);
    AdapterWeights w = make_adapter_weights(8, 16, rng, false);
    const Tensor x = random_tensor({1, 8, 5, 7}, rng);
    const Tensor y = adapter_forward(x, w);
    const bool ok = y.same_shape(x) && all_finite(y);
    return bounded(ok ? 0.0 : 1.0, 0.0, "odd spatial sizes round-trip through the padded transform");
}

// --------------------------------------------------------- tensor-core group

CheckResult check_norm_layer_moments() {
    SplitMix64 rng(37);
    const Tensor x = random_tensor({2, 6, 4, 4}, rng, 100.0);
    const Tensor g = Tensor::full({6}, 1.0);
    const Tensor b = Tensor({6});
    const Tensor y = normalize(x, NormKind::layer, 1, g, b);
    double worst = 0.0;
    for (std::int64_t bb = 0; bb < 2; ++bb)
        for (std::int64_t h = 0; h < 4; ++h)
            for (std::int64_t w = 0; w < 4; ++w) {
                double mean = 0.0, var = 0.0;
                for (std::int64_t c = 0; c < 6; ++c) mean += y.at(bb, c, h, w);
                mean /= 6.0;
                for (std::int64_t c = 0; c < 6; ++c) {
                    const double d = y.at(bb, c, h, w) - mean;
                    var += d * d;
                }
                var /= 6.0;
                worst = std::max({worst, std::fabs(mean), std::fabs(var - 1.0)});
            }
    return bounded(worst, 1e-6, "normalized features have zero mean and unit variance per position");
}

CheckResult check_norm_group_moments() {
    SplitMix64 rng(38);
    const Tensor x = random_tensor({2, 8, 4, 4}, rng, 100.0);
    const Tensor g = Tensor::full({8}, 1.0);
    const Tensor b = Tensor({8});
    const Tensor y = normalize(x, NormKind::group, 2, g, b);
    double worst = 0.0;
    for (std::int64_t bb = 0; bb < 2; ++bb)
        for (std::int64_t grp = 0; grp < 2; ++grp) {
            double mean = 0.0, var = 0.0;
            std::int64_t n = 0;
            for (std::int64_t c = grp * 4; c < (grp + 1) * 4; ++c)
                for (std::int64_t h = 0; h < 4; ++h)
                    for (std::int64_t w = 0; w < 4; ++w) {
                        mean += y.at(bb, c, h, w);
                        ++n;
                    }
            mean /= static_cast<double>(n);
            for (std::int64_t c = grp * 4; c < (grp + 1) * 4; ++c)
                for (std::int64_t h = 0; h < 4; ++h)
                    for (std::int64_t w = 0; w < 4; ++w) {
                        const double d = y.at(bb, c, h, w) - mean;
                        var += d * d;
                    }
            var /= static_cast<double>(n);
            worst = std::max({worst, std::fabs(mean), std::fabs(var - 1.0)});
        }
    return bounded(worst, 1e-6, "group statistics are standardized per (batch, group)");
}

CheckResult check_softmax_channels() {
    SplitMix64 rng(39);
    const Tensor x = random_tensor({1, 5, 3, 3}, rng, 3.0);
    const Tensor y = activate(x, Activation::softmax_channels);
    double worst = 0.0;
    for (std::int64_t h = 0; h < 3; ++h)
        for (std::int64_t w = 0; w < 3; ++w) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < 5; ++c) {
                const double v = y.at(0, c, h, w);
                sum += v;
                if (v < 0.0) worst = std::max(worst, -v);
            }
            worst = std::max(worst, std::fabs(sum - 1.0));
        }
    return bounded(worst, 1e-12, "channel softmax normalizes every pixel");
}

CheckResult check_global_pool() {
    SplitMix64 rng(40);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor y = global_avg_pool(x);
    double worst = 0.0;
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (std::int64_t h = 0; h < 4; ++h)
                for (std::int64_t w = 0; w < 5; ++w) mean += x.at(b, c, h, w);
            mean /= 20.0;
            worst = std::max(worst, std::fabs(y.at(b, c, 0, 0) - mean));
        }
    return bounded(worst, 1e-12, "global pooling equals the arithmetic mean per channel");
}

CheckResult check_adaptive_pool_windows() {
    const Tensor x({1, 1, 5, 1}, {1.0, 2.0, 3.0, 4.0, 5.0});
    const Tensor y = adaptive_avg_pool(x, 2, 1);
    const double worst = std::max(std::fabs(y.at(0, 0, 0, 0) - 2.0), std::fabs(y.at(0, 0, 1, 0) - 4.0));
    return bounded(worst, 1e-15, "overlapping pooling windows average [0,3) and [2,5)");
}

CheckResult check_conv_identity() {
    SplitMix64 rng(41);
    const Tensor x = random_tensor({1, 3, 4, 4}, rng);
    ConvWeights w;
    w.kernel = Tensor({3, 3, 1, 1});
    for (std::int64_t c = 0; c < 3; ++c) w.kernel.at(c, c, 0, 0) = 1.0;
    return bounded(max_abs_diff(conv2d(x, w), x), 0.0, "identity 1x1 kernel reproduces the input");
}

CheckResult check_conv_linearity() {
    SplitMix64 rng(47);
    const Tensor x = random_tensor({2, 3, 5, 5}, rng);
    const Tensor y = random_tensor({2, 3, 5, 5}, rng);
    ConvWeights w;
    w.kernel = random_tensor({4, 3, 3, 3}, rng);
    const double alpha = 0.7, beta = -1.3;
    Tensor mix(x.shape());
    for (std::size_t i = 0; i < mix.data().size(); ++i)
        mix.data()[i] = alpha * x.data()[i] + beta * y.data()[i];
    const Tensor lhs = conv2d(mix, w);
    const Tensor fx = conv2d(x, w);
    const Tensor fy = conv2d(y, w);
    Tensor rhs(lhs.shape());
    for (std::size_t i = 0; i < rhs.data().size(); ++i)
        rhs.data()[i] = alpha * fx.data()[i] + beta * fy.data()[i];
    return bounded(max_abs_diff(lhs, rhs), 1e-10,
                   "bias-free convolution is linear in its input");
}

CheckResult check_op_purity() {
    SplitMix64 rng(53);
    const Tensor x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor x_copy = x;
    ConvWeights w;
    w.kernel = random_tensor({2, 2, 3, 3}, rng);
    const Tensor c1 = conv2d(x, w);
    const Tensor c2 = conv2d(x, w);
    const ScanInputs in = random_scan_inputs(1, 8, 2, 3, 54);
    const ScanInputs in_copy = in;
    const Tensor s1 = ss1d_scan(in);
    const Tensor s2 = ss1d_scan(in);
    const double worst = std::max(
        {max_abs_diff(c1, c2), max_abs_diff(s1, s2), max_abs_diff(x, x_copy),
         max_abs_diff(in.u, in_copy.u), max_abs_diff(in.delta, in_copy.delta),
         max_abs_diff(in.A, in_copy.A), max_abs_diff(in.B_seq, in_copy.B_seq),
         max_abs_diff(in.C_seq, in_copy.C_seq)});
    return bounded(worst, 0.0,
                   "repeated evaluation is bit-identical and leaves inputs untouched");
}

CheckResult check_norm_affine_response() {
    SplitMix64 rng(59);
    const Tensor x = random_tensor({2, 6, 3, 3}, rng, 5.0);
    const Tensor g1 = Tensor::full({6}, 1.0);
    const Tensor b0 = Tensor({6});
    const Tensor g2 = Tensor::full({6}, 2.0);
    const Tensor b1 = Tensor::full({6}, 1.0);
    const Tensor base = normalize(x, NormKind::layer, 1, g1, b0);
    const Tensor scaled = normalize(x, NormKind::layer, 1, g2, b1);
    double worst = 0.0;
    for (std::size_t i = 0; i < base.data().size(); ++i)
        worst = std::max(worst, std::fabs(scaled.data()[i] - (2.0 * base.data()[i] + 1.0)));
    const Tensor flat = Tensor::full({1, 6, 3, 3}, 4.25);
    const Tensor zeroed = normalize(flat, NormKind::layer, 1, g1, b0);
    for (const double v : zeroed.data()) worst = std::max(worst, std::fabs(v));
    return bounded(worst, 1e-12,
                   "gamma/beta act affinely and constant input normalizes to zero");
}

// ------------------------------------------------------------- harness group

CheckResult check_weights_roundtrip() {
    const HarnessConfig cfg = tiny_config();
    const EncoderModel m = make_default_model(cfg);
    const ModalityPair in = synth_pair(99, 32);
    const PyramidFeatures a = encoder_forward(in.rgb, in.ir, m);
    const WeightStore s = store_from_model(m);
    const auto path = (std::filesystem::temp_directory_path() / "mmk_roundtrip.weights").string();
    save_weights(s, path);
    const WeightStore s2 = load_weights(path);
    std::filesystem::remove(path);
    const PyramidFeatures b = encoder_forward(in.rgb, in.ir, s2, cfg);
    const double worst = std::max(
        {max_abs_diff(a.p3, b.p3), max_abs_diff(a.n4, b.n4), max_abs_diff(a.n5, b.n5)});
    return bounded(worst, 0.0, "serialize/deserialize/rebind reproduces the forward pass bitwise");
}

CheckResult check_synth_deterministic() {
    const ModalityPair a = synth_pair(5, 32);
    const ModalityPair b = synth_pair(5, 32);
    const ModalityPair c = synth_pair(6, 32);
    const double same = std::max(max_abs_diff(a.rgb, b.rgb), max_abs_diff(a.ir, b.ir));
    const double cross = std::max(max_abs_diff(a.rgb, c.rgb), max_abs_diff(a.ir, c.ir));
    CheckResult r = bounded(same, 0.0, fmt("same seed reproduces inputs; different seeds differ by %.3g", cross));
    r.pass = r.pass && cross > 1e-6;
    return r;
}

CheckResult check_synth_correlation() {
    const ModalityPair p = synth_pair(11, 64);
    const std::int64_t size = p.ir.extent(2);
    const std::int64_t n = size * size;
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (std::int64_t h = 0; h < size; ++h)
        for (std::int64_t w = 0; w < size; ++w) {
            double mean = 0.0;
            for (std::int64_t c = 0; c < 3; ++c) mean += p.rgb.at(0, c, h, w);
            a[static_cast<std::size_t>(h * size + w)] = mean / 3.0;
            b[static_cast<std::size_t>(h * size + w)] = p.ir.at(0, 0, h, w);
        }
    double ma = 0.0, mb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        ma += a[static_cast<std::size_t>(i)];
        mb += b[static_cast<std::size_t>(i)];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double da = a[static_cast<std::size_t>(i)] - ma;
        const double db = b[static_cast<std::size_t>(i)] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    const double corr = cov / std::sqrt(std::max(va * vb, 1e-30));
    return exceeds(corr, 0.2,
                   "the two synthetic modalities share scene structure (positive correlation)");
}

CheckResult check_encoder_deterministic() {
    const HarnessConfig cfg = tiny_config();
    const EncoderModel m = make_default_model(cfg);
    const ModalityPair in = synth_pair(7, 32);
    const PyramidFeatures a = encoder_forward(in.rgb, in.ir, m);
    const PyramidFeatures b = encoder_forward(in.rgb, in.ir, m);
    const double worst = std::max(
        {max_abs_diff(a.p3, b.p3), max_abs_diff(a.n4, b.n4), max_abs_diff(a.n5, b.n5)});
    return bounded(worst, 0.0, "repeated evaluation is bitwise identical");
}

CheckResult check_scan_scaling() {
    const double m1 = median_scan_ms(4096, 32, 16, 21);
    const double m2 = median_scan_ms(8192, 32, 16, 21);
    const double ratio = m2 / m1;
    CheckResult r;
    r.measured = ratio;
    r.tolerance = 2.8;
    r.pass = ratio >= 1.5 && ratio <= 2.8;
    r.detail = fmt("doubling the length scales the median runtime by %.3g (band [1.5, 2.8]); ", ratio) +
               fmt("medians %.4g ms and %.4g ms", m1, m2);
    return r;
}

}  // namespace

std::vector<CheckResult> run_invariant_suite(const std::string& filter) {
    std::vector<std::pair<std::string, std::function<CheckResult()>>> registry;
    auto add = [&](const char* name, std::function<CheckResult()> fn) {
        registry.emplace_back(name, std::move(fn));
    };

    add("scan.linearity-scale", check_scan_linearity_scale);
    add("scan.linearity-additive", check_scan_linearity_additive);
    add("scan.causality", check_scan_causality);
    add("scan.single-step-value", check_scan_single_step);
    add("scan.state-decay-bound", check_scan_decay_bound);
    add("scan.grad-input", [] { return check_scan_grad(&ScanInputs::u, &ScanGradients::u, "input"); });
    add("scan.grad-step",
        [] { return check_scan_grad(&ScanInputs::delta, &ScanGradients::delta, "step-size"); });
    add("scan.grad-state-matrix",
        [] { return check_scan_grad(&ScanInputs::A, &ScanGradients::A, "state-matrix"); });
    add("scan.grad-input-vector",
        [] { return check_scan_grad(&ScanInputs::B_seq, &ScanGradients::B_seq, "input-vector"); });
    add("scan.grad-output-vector",
        [] { return check_scan_grad(&ScanInputs::C_seq, &ScanGradients::C_seq, "output-vector"); });
    add("scan.fold-roundtrip", check_fold_roundtrip);
    add("scan.direction-reversal", check_direction_reversal);
    add("ss2d.cumulative-sums", check_ss2d_cumsum);
    add("ss2d.direction-additivity", check_ss2d_direction_additivity);
    add("region.shape-finite", check_region_shape_finite);
    add("region.low-rank-budget", check_region_low_rank_budget);
    add("region.module-budget", check_region_module_budget);
    add("cei.gate-range", check_cei_gate_range);
    add("cei.residual-identity", check_cei_residual_identity);
    add("cei.small-map-shapes", check_cei_small_maps);
    add("attention.row-stochastic", check_attention_row_stochastic);
    add("attention.structural-identity", check_attention_structural_identity);
    add("attention.pe-distinct", check_pe_distinct);
    add("mpf.output-shapes", check_mpf_shapes);
    add("mpf.completion-ablation", check_mpf_completion_ablation);
    add("fft.roundtrip", check_fft_roundtrip);
    add("fft.parseval", check_fft_parseval);
    add("fft.impulse-flat", check_fft_impulse);
    add("fft.mask-partition", check_mask_partition);
    add("adapter.identity-at-init", check_adapter_identity);
    add("adapter.router-partition", check_adapter_router);
    add("adapter.full-cutoff-highpass-zero", check_adapter_full_cutoff);
    add("adapter.odd-size", check_adapter_odd_sizes);
    add("norm.layer-moments", check_norm_layer_moments);
    add("norm.group-moments", check_norm_group_moments);
    add("softmax.channel-partition", check_softmax_channels);
    add("pool.global-average", check_global_pool);
    add("pool.adaptive-windows", check_adaptive_pool_windows);
    add("conv.identity-kernel", check_conv_identity);
    add("conv.linearity", check_conv_linearity);
    add("op.purity", check_op_purity);
    add("norm.affine-response", check_norm_affine_response);
    add("weights.roundtrip", check_weights_roundtrip);
    add("synth.deterministic", check_synth_deterministic);
    add("synth.cross-modal-correlation", check_synth_correlation);
    add("encoder.deterministic", check_encoder_deterministic);
    add("perf.scan-linear-scaling", check_scan_scaling);

    std::vector<CheckResult> out;
    for (auto& [name, fn] : registry) {
        if (!filter.empty() && name.find(filter) == std::string::npos) continue;
        CheckResult r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.name = name;
        out.push_back(std::move(r));
    }
    if (out.empty()) {
        throw std::invalid_argument("no invariant checks match filter '" + filter + "'");
    }
    return out;
}

}  // namespace mmk::checks
