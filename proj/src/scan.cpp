#include "mmk/scan.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmk {

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

}  // namespace

void ScanInputs::validate() const {
    if (u.rank() != 3) fail("ss1d", "u must be rank 3 (B,L,D), got " + shape_str(u));
    if (!delta.same_shape(u)) {
        fail("ss1d", "delta shape " + shape_str(delta) + " must match u " + shape_str(u));
    }
    const std::int64_t B = u.extent(0), L = u.extent(1), D = u.extent(2);
    if (A.rank() != 2 || A.extent(0) != D) {
        fail("ss1d", "A must be (D,N) with D=" + std::to_string(D) + ", got " + shape_str(A));
    }
    const std::int64_t N = A.extent(1);
    for (const auto* t : {&B_seq, &C_seq}) {
        if (t->rank() != 3 || t->extent(0) != B || t->extent(1) != L || t->extent(2) != N) {
            fail("ss1d", std::string(t == &B_seq ? "B_seq" : "C_seq") + " must be (B,L,N)=(" +
                             std::to_string(B) + "," + std::to_string(L) + "," + std::to_string(N) +
                             "), got " + shape_str(*t));
        }
    }
    for (double d : delta.data()) {
        if (!(d > 0.0)) fail("ss1d", "delta entries must be strictly positive");
    }
}

namespace {

// Shared forward sweep. When trace is non-null, stores h into it (B,L,D,N).
Tensor scan_forward(const ScanInputs& in, Tensor* trace) {
    const std::int64_t B = in.batches(), L = in.length(), D = in.channels(), N = in.state_dim();
    Tensor y({B, L, D});
    std::vector<double> h(static_cast<std::size_t>(N));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t d = 0; d < D; ++d) {
            std::fill(h.begin(), h.end(), 0.0);
            const double* arow = &in.A.data()[static_cast<std::size_t>(d * N)];
            for (std::int64_t t = 0; t < L; ++t) {
                const double dt = in.delta.at(b, t, d);
                const double ut = in.u.at(b, t, d);
                const double* brow = &in.B_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                const double* crow = &in.C_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                double acc = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    h[static_cast<std::size_t>(n)] = std::exp(dt * arow[n]) * h[static_cast<std::size_t>(n)] +
                                                     dt * brow[n] * ut;
                    acc += crow[n] * h[static_cast<std::size_t>(n)];
                }
                y.at(b, t, d) = acc;
                if (trace) {
                    double* hrow = &trace->data()[static_cast<std::size_t>(((b * L + t) * D + d) * N)];
                    for (std::int64_t n = 0; n < N; ++n) hrow[n] = h[static_cast<std::size_t>(n)];
                }
            }
        }
    }
    return y;
}

}  // namespace

Tensor ss1d_scan(const ScanInputs& in) {
    in.validate();
    return scan_forward(in, nullptr);
}

ScanTrace ss1d_scan_trace(const ScanInputs& in) {
    in.validate();
    ScanTrace out;
    out.h = Tensor({in.batches(), in.length(), in.channels(), in.state_dim()});
    out.y = scan_forward(in, &out.h);
    return out;
}

ScanGradients ss1d_backward(const ScanInputs& in, const Tensor& dy) {
    in.validate();
    if (!dy.same_shape(in.u)) {
        fail("ss1d_backward", "dy shape " + shape_str(dy) + " must match y " + shape_str(in.u));
    }
    const std::int64_t B = in.batches(), L = in.length(), D = in.channels(), N = in.state_dim();

    ScanGradients g;
    g.u = Tensor(in.u.shape());
    g.delta = Tensor(in.delta.shape());
    g.A = Tensor(in.A.shape());
    g.B_seq = Tensor(in.B_seq.shape());
    g.C_seq = Tensor(in.C_seq.shape());

    // Per (b, d) lane: replay the forward recurrence storing h_t, then run the
    // adjoint recursion lam_t = dy_t * C_t + exp(delta_{t+1} A) ⊙ lam_{t+1}.
    std::vector<double> h(static_cast<std::size_t>((L + 1) * N));  // h[0] = initial zero state
    std::vector<double> abar(static_cast<std::size_t>(L * N));
    std::vector<double> lam(static_cast<std::size_t>(N));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t d = 0; d < D; ++d) {
            const double* arow = &in.A.data()[static_cast<std::size_t>(d * N)];
            std::fill(h.begin(), h.begin() + N, 0.0);
            for (std::int64_t t = 0; t < L; ++t) {
                const double dt = in.delta.at(b, t, d);
                const double ut = in.u.at(b, t, d);
                const double* brow = &in.B_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                double* hprev = &h[static_cast<std::size_t>(t * N)];
                double* hcur = &h[static_cast<std::size_t>((t + 1) * N)];
                double* ab = &abar[static_cast<std::size_t>(t * N)];
                for (std::int64_t n = 0; n < N; ++n) {
                    ab[n] = std::exp(dt * arow[n]);
                    hcur[n] = ab[n] * hprev[n] + dt * brow[n] * ut;
                }
            }
            std::fill(lam.begin(), lam.end(), 0.0);
            for (std::int64_t t = L - 1; t >= 0; --t) {
                const double dt = in.delta.at(b, t, d);
                const double ut = in.u.at(b, t, d);
                const double dyt = dy.at(b, t, d);
                const double* brow = &in.B_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                const double* crow = &in.C_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                const double* hprev = &h[static_cast<std::size_t>(t * N)];
                const double* hcur = &h[static_cast<std::size_t>((t + 1) * N)];
                const double* ab = &abar[static_cast<std::size_t>(t * N)];
                double* gb = &g.B_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                double* gc = &g.C_seq.data()[static_cast<std::size_t>((b * L + t) * N)];
                double* ga = &g.A.data()[static_cast<std::size_t>(d * N)];
                double du = 0.0, ddt = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    // lam picks up the emission term of step t first.
                    const double l = lam[static_cast<std::size_t>(n)] + dyt * crow[n];
                    gc[n] += dyt * hcur[n];
                    du += l * dt * brow[n];
                    ddt += l * (arow[n] * ab[n] * hprev[n] + brow[n] * ut);
                    ga[n] += l * dt * ab[n] * hprev[n];
                    gb[n] += l * dt * ut;
                    lam[static_cast<std::size_t>(n)] = ab[n] * l;  // propagate to step t-1
                }
                g.u.at(b, t, d) = du;
                g.delta.at(b, t, d) = ddt;
            }
        }
    }
    return g;
}

const char* direction_name(Direction d) {
    switch (d) {
        case Direction::h_fwd: return "h_fwd";
        case Direction::h_bwd: return "h_bwd";
        case Direction::v_fwd: return "v_fwd";
        case Direction::v_bwd: return "v_bwd";
    }
    return "?";
}

namespace {

// Maps sequence position t to the plane offset h*W + w for a direction.
inline std::int64_t plane_offset(Direction d, std::int64_t t, std::int64_t H, std::int64_t W) {
    const std::int64_t L = H * W;
    switch (d) {
        case Direction::h_fwd: return t;
        case Direction::h_bwd: return L - 1 - t;
        case Direction::v_fwd: return (t % H) * W + (t / H);
        case Direction::v_bwd: {
            const std::int64_t s = L - 1 - t;
            return (s % H) * W + (s / H);
        }
    }
    return 0;
}

}  // namespace

Tensor unfold_direction(const Tensor& x, Direction d) {
    if (x.rank() != 4) fail("unfold_direction", "input must be rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::int64_t L = H * W;
    Tensor out({B, L, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
            const std::int64_t off = plane_offset(d, t, H, W);
            double* orow = &out.data()[static_cast<std::size_t>((b * L + t) * C)];
            for (std::int64_t c = 0; c < C; ++c) {
                orow[c] = x.data()[static_cast<std::size_t>((b * C + c) * L + off)];
            }
        }
    return out;
}

Tensor fold_direction(const Tensor& seq, Direction d, std::int64_t H, std::int64_t W) {
    if (seq.rank() != 3) fail("fold_direction", "sequence must be rank 3, got " + shape_str(seq));
    const std::int64_t B = seq.extent(0), L = seq.extent(1), C = seq.extent(2);
    if (L != H * W) {
        fail("fold_direction", "sequence length " + std::to_string(L) + " does not equal H*W = " +
                                   std::to_string(H) + "*" + std::to_string(W));
    }
    Tensor out({B, C, H, W});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
            const std::int64_t off = plane_offset(d, t, H, W);
            const double* srow = &seq.data()[static_cast<std::size_t>((b * L + t) * C)];
            for (std::int64_t c = 0; c < C; ++c) {
                out.data()[static_cast<std::size_t>((b * C + c) * L + off)] = srow[c];
            }
        }
    return out;
}

Tensor ss2d(const Tensor& x, std::span<const Ss2dDirectionParams> params) {
    if (x.rank() != 4) fail("ss2d", "input must be rank 4, got " + shape_str(x));
    if (params.empty()) fail("ss2d", "needs at least one direction");
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::int64_t L = H * W;
    Tensor acc({B, C, H, W});
    for (const auto& p : params) {
        if (p.A.rank() != 2 || p.A.extent(0) != C) {
            fail("ss2d", "A must be (C,N) with C=" + std::to_string(C) + ", got " + shape_str(p.A));
        }
        const std::int64_t N = p.A.extent(1);
        if (p.B_row.rank() != 1 || p.B_row.extent(0) != N || p.C_row.rank() != 1 || p.C_row.extent(0) != N) {
            fail("ss2d", "B_row/C_row must be (N), got " + shape_str(p.B_row) + "/" + shape_str(p.C_row));
        }
        if (!(p.delta > 0.0)) fail("ss2d", "delta must be strictly positive");
        ScanInputs in;
        in.u = unfold_direction(x, p.dir);
        in.delta = Tensor::full({B, L, C}, p.delta);
        in.A = p.A;
        in.B_seq = Tensor({B, L, N});
        in.C_seq = Tensor({B, L, N});
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t)
                for (std::int64_t n = 0; n < N; ++n) {
                    in.B_seq.at(b, t, n) = p.B_row.at(n);
                    in.C_seq.at(b, t, n) = p.C_row.at(n);
                }
        acc = add(acc, fold_direction(ss1d_scan(in), p.dir, H, W));
    }
    return acc;
}

void RegionSS2DWeights::validate() const {
    const std::int64_t C = channels();
    if (C % 2 != 0) fail("region_aware_ss2d", "channel width must be even, got " + std::to_string(C));
    if (directions.empty() || directions.size() != A_dir.size()) {
        fail("region_aware_ss2d", "need one state matrix per scan direction");
    }
    for (const Tensor& a : A_dir) {
        if (a.rank() != 2 || a.extent(0) != C || a.extent(1) != state_dim) {
            fail("region_aware_ss2d", "direction state matrix must be (C,N)=(" + std::to_string(C) + "," +
                                          std::to_string(state_dim) + "), got " + shape_str(a));
        }
    }
    if (u_down.kernel.extent(1) != C || u_up.kernel.extent(0) != C) {
        fail("region_aware_ss2d", "driving projection pair must map C -> r -> C");
    }
    if (bc_up[0].kernel.extent(0) != 2 * state_dim) {
        fail("region_aware_ss2d", "state projection must produce 2N channels per group");
    }
}

std::int64_t RegionSS2DWeights::parameter_count() const {
    std::int64_t n = gn_gamma.numel() + gn_beta.numel();
    n += dw3.parameter_count();
    n += u_down.parameter_count() + u_up.parameter_count();
    n += delta_down.parameter_count() + delta_up.parameter_count();
    for (const auto& c : bc_down) n += c.parameter_count();
    for (const auto& c : bc_up) n += c.parameter_count();
    for (const Tensor& a : A_dir) n += a.numel();
    n += out_proj.parameter_count();
    return n;
}

std::int64_t RegionSS2DWeights::driving_projection_parameter_count() const {
    return u_down.parameter_count() + u_up.parameter_count();
}

std::int64_t dense_driving_projection_parameter_count(std::int64_t channels) {
    return channels * channels;
}

std::int64_t dense_ss2d_reference_parameter_count(std::int64_t channels, std::int64_t state_dim) {
    const std::int64_t expanded = 2 * channels;
    const std::int64_t dt_rank = std::max<std::int64_t>(1, channels / 16);
    const std::int64_t directions = 4;
    std::int64_t n = channels * (2 * expanded);                        // gated input projection
    n += expanded * 9;                                                 // depthwise 3x3
    n += directions * expanded * (dt_rank + 2 * state_dim);            // per-direction step/state generation
    n += directions * dt_rank * expanded;                              // step expansion
    n += directions * expanded * state_dim;                            // state matrices
    n += 2 * expanded;                                                 // output norm affine
    n += expanded * channels;                                          // output projection
    return n;
}

namespace {

ConvWeights conv1x1(std::int64_t c_out, std::int64_t c_in, SplitMix64& rng, bool with_bias) {
    ConvWeights w;
    w.kernel = Tensor({c_out, c_in, 1, 1});
    const double s = 1.0 / std::sqrt(static_cast<double>(c_in));
    for (auto& v : w.kernel.data()) v = rng.sym(s);
    if (with_bias) w.bias = Tensor({c_out});
    return w;
}

ConvWeights depthwise(std::int64_t c, std::int64_t k, SplitMix64& rng) {
    ConvWeights w;
    w.kernel = Tensor({c, 1, k, k});
    w.groups = c;
    const double s = 1.0 / static_cast<double>(k);
    for (auto& v : w.kernel.data()) v = rng.sym(s);
    w.bias = Tensor({c});
    return w;
}

Tensor standard_state_matrix(std::int64_t channels, std::int64_t state_dim) {
    Tensor a({channels, state_dim});
    for (std::int64_t d = 0; d < channels; ++d)
        for (std::int64_t n = 0; n < state_dim; ++n) a.at(d, n) = -static_cast<double>(n + 1);
    return a;
}

}  // namespace

RegionSS2DWeights make_region_ss2d_weights(std::int64_t channels, std::int64_t state_dim,
                                           std::span<const Direction> directions, SplitMix64& rng) {
    if (channels % 2 != 0) fail("make_region_ss2d_weights", "channel width must be even");
    RegionSS2DWeights w;
    w.gn_gamma = Tensor::full({channels}, 1.0);
    w.gn_beta = Tensor({channels});
    w.dw3 = depthwise(channels, 3, rng);
    w.u_down = conv1x1(kLowRank, channels, rng, false);
    w.u_up = conv1x1(channels, kLowRank, rng, false);
    w.delta_down = conv1x1(kLowRank, channels, rng, false);
    w.delta_up = conv1x1(channels, kLowRank, rng, false);
    const std::int64_t half = channels / 2;
    for (int g = 0; g < 2; ++g) {
        w.bc_down[static_cast<std::size_t>(g)] = conv1x1(kLowRank, half, rng, false);
        w.bc_up[static_cast<std::size_t>(g)] = conv1x1(2 * state_dim, kLowRank, rng, false);
    }
    w.directions.assign(directions.begin(), directions.end());
    for (std::size_t i = 0; i < w.directions.size(); ++i) {
        w.A_dir.push_back(standard_state_matrix(channels, state_dim));
    }
    w.out_proj = conv1x1(channels, channels, rng, true);
    w.state_dim = state_dim;
    return w;
}

RegionSS2DWeights make_region_ss2d_weights(std::int64_t channels, std::int64_t state_dim, SplitMix64& rng) {
    const std::array<Direction, 2> dirs = {Direction::h_fwd, Direction::v_fwd};
    return make_region_ss2d_weights(channels, state_dim, dirs, rng);
}

namespace {

// Extracts feature columns [f0, f1) of a (B, L, F) sequence.
Tensor seq_slice(const Tensor& seq, std::int64_t f0, std::int64_t f1) {
    const std::int64_t B = seq.extent(0), L = seq.extent(1), F = seq.extent(2);
    Tensor out({B, L, f1 - f0});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t) {
            const double* src = &seq.data()[static_cast<std::size_t>((b * L + t) * F + f0)];
            double* dst = &out.data()[static_cast<std::size_t>((b * L + t) * (f1 - f0))];
            std::copy(src, src + (f1 - f0), dst);
        }
    return out;
}

Tensor a_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
    const std::int64_t N = a.extent(1);
    Tensor out({r1 - r0, N});
    std::copy(a.data().begin() + r0 * N, a.data().begin() + r1 * N, out.data().begin());
    return out;
}

}  // namespace

Tensor region_aware_ss2d(const Tensor& x, const RegionSS2DWeights& w) {
    w.validate();
    if (x.rank() != 4) fail("region_aware_ss2d", "input must be rank 4, got " + shape_str(x));
    const std::int64_t C = w.channels();
    if (x.extent(1) != C) {
        fail("region_aware_ss2d", "input channels " + std::to_string(x.extent(1)) +
                                      " do not match weights " + std::to_string(C));
    }
    const std::int64_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const std::int64_t N = w.state_dim, half = C / 2;

    // local mixing: group norm -> depthwise 3x3 -> SiLU
    Tensor xt = activate(conv2d(normalize(x, NormKind::group, 2, w.gn_gamma, w.gn_beta), w.dw3),
                         Activation::silu);
    require_finite(xt, "region_aware_ss2d: mixed feature");

    Tensor u_map = conv2d(conv2d(xt, w.u_down), w.u_up);
    Tensor delta_map = conv2d(conv2d(xt, w.delta_down), w.delta_up);
    for (auto& v : delta_map.data()) v = std::max(softplus_scalar(v), kDeltaFloor);

    // per-group state parameters, generated once and unfolded per direction
    std::array<Tensor, 2> b_map, c_map;
    for (std::int64_t g = 0; g < 2; ++g) {
        Tensor part = slice_channels(xt, g * half, (g + 1) * half);
        Tensor bc = conv2d(conv2d(part, w.bc_down[static_cast<std::size_t>(g)]),
                           w.bc_up[static_cast<std::size_t>(g)]);
        b_map[static_cast<std::size_t>(g)] = slice_channels(bc, 0, N);
        c_map[static_cast<std::size_t>(g)] = slice_channels(bc, N, 2 * N);
    }

    Tensor acc({B, C, H, W});
    const std::int64_t L = H * W;
    for (std::size_t di = 0; di < w.directions.size(); ++di) {
        const Direction dir = w.directions[di];
        Tensor u_seq = unfold_direction(u_map, dir);
        Tensor d_seq = unfold_direction(delta_map, dir);
        Tensor y_dir({B, L, C});
        for (std::int64_t g = 0; g < 2; ++g) {
            ScanInputs in;
            in.u = seq_slice(u_seq, g * half, (g + 1) * half);
            in.delta = seq_slice(d_seq, g * half, (g + 1) * half);
            in.A = a_rows(w.A_dir[di], g * half, (g + 1) * half);
            in.B_seq = unfold_direction(b_map[static_cast<std::size_t>(g)], dir);
            in.C_seq = unfold_direction(c_map[static_cast<std::size_t>(g)], dir);
            Tensor y_g = ss1d_scan(in);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t t = 0; t < L; ++t) {
                    const double* src = &y_g.data()[static_cast<std::size_t>((b * L + t) * half)];
                    double* dst = &y_dir.data()[static_cast<std::size_t>((b * L + t) * C + g * half)];
                    std::copy(src, src + half, dst);
                }
        }
        acc = add(acc, fold_direction(y_dir, dir, H, W));
    }
    Tensor out = conv2d(acc, w.out_proj);
    require_finite(out, "region_aware_ss2d: output");
    return out;
}

}  // namespace mmk
