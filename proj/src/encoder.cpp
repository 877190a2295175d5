#include "mmk/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmk {

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

Tensor dense(std::int64_t rows, std::int64_t cols, SplitMix64& rng) {
    Tensor t({rows, cols});
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : t.data()) v = rng.sym(s);
    return t;
}

ConvWeights conv_init(std::int64_t c_out, std::int64_t c_in, std::int64_t k, SplitMix64& rng) {
    ConvWeights w;
    w.kernel = Tensor({c_out, c_in, k, k});
    const double s = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
    for (auto& v : w.kernel.data()) v = rng.sym(s);
    w.bias = Tensor({c_out});
    return w;
}

ConvWeights depthwise3(std::int64_t c, SplitMix64& rng) {
    ConvWeights w;
    w.kernel = Tensor({c, 1, 3, 3});
    w.groups = c;
    for (auto& v : w.kernel.data()) v = rng.sym(1.0 / 3.0);
    w.bias = Tensor({c});
    return w;
}

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

}  // namespace

CEIWeights make_cei_weights(std::int64_t channels, std::int64_t state_dim, SplitMix64& rng) {
    CEIWeights w;
    const std::int64_t E = 2 * channels;
    w.in_down = dense(kLowRank, 2 * channels, rng);
    w.in_up = dense(2 * E, kLowRank, rng);
    w.A = Tensor({E, state_dim});
    for (std::int64_t d = 0; d < E; ++d)
        for (std::int64_t n = 0; n < state_dim; ++n) w.A.at(d, n) = -static_cast<double>(n + 1);
    w.delta_w = dense(E, E, rng);
    w.delta_b = Tensor({E});
    w.b_w = dense(state_dim, E, rng);
    w.c_w = dense(state_dim, E, rng);
    w.ln_gamma = Tensor::full({E}, 1.0);
    w.ln_beta = Tensor({E});
    w.out_w = dense(2 * channels, E, rng);
    w.out_b = Tensor({2 * channels});
    return w;
}

CEIGates cei_gates(const ModalityPair& p, const CEIWeights& w) {
    if (p.rgb.rank() != 4 || p.ir.rank() != 4) {
        fail("cei_forward", "modality features must be rank 4, got " + shape_str(p.rgb) + " and " +
                                shape_str(p.ir));
    }
    if (!p.rgb.same_shape(p.ir)) {
        fail("cei_forward", "modality shapes differ: " + shape_str(p.rgb) + " vs " + shape_str(p.ir));
    }
    const std::int64_t C = w.channels();
    if (p.rgb.extent(1) != C) {
        fail("cei_forward", "channel width " + std::to_string(p.rgb.extent(1)) +
                                " does not match weights " + std::to_string(C));
    }
    const std::int64_t B = p.rgb.extent(0), H = p.rgb.extent(2), W = p.rgb.extent(3);
    const std::int64_t E = w.inner_width();

    const Tensor both[2] = {p.rgb, p.ir};
    Tensor cat = concat_channels(both);
    // pool to the target grid (clamped for tiny maps), then serialize
    const std::int64_t ph = std::min(w.pool_h, H), pw = std::min(w.pool_w, W);
    Tensor pooled = adaptive_avg_pool(cat, ph, pw);
    const std::int64_t L = ph * pw;
    Tensor z({B, L, 2 * C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < 2 * C; ++c)
            for (std::int64_t t = 0; t < L; ++t) z.at(b, t, c) = pooled.at(b, c, t / pw, t % pw);

    Tensor proj = linear(linear(z, w.in_down), w.in_up);  // (B, L, 2E)
    Tensor drive = activate(seq_slice(proj, 0, E), Activation::silu);
    Tensor gate = seq_slice(proj, E, 2 * E);

    ScanInputs in;
    in.u = drive;
    in.delta = linear(drive, w.delta_w, w.delta_b);
    for (auto& v : in.delta.data()) v = std::max(softplus_scalar(v), kDeltaFloor);
    in.A = w.A;
    in.B_seq = linear(drive, w.b_w);
    in.C_seq = linear(drive, w.c_w);
    Tensor y = mul(ss1d_scan(in), activate(gate, Activation::silu));

    Tensor ybar({B, E});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t e = 0; e < E; ++e) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < L; ++t) acc += y.at(b, t, e);
            ybar.at(b, e) = acc / static_cast<double>(L);
        }
    Tensor logits = linear(normalize(ybar, NormKind::layer, 1, w.ln_gamma, w.ln_beta), w.out_w, w.out_b);
    Tensor g = activate(logits, Activation::sigmoid);  // (B, 2C)

    CEIGates out;
    out.w_rgb = Tensor({B, C});
    out.w_ir = Tensor({B, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            out.w_rgb.at(b, c) = g.at(b, c);
            out.w_ir.at(b, c) = g.at(b, C + c);
        }
    return out;
}

namespace {

Tensor apply_gate(const Tensor& f, const Tensor& gate) {
    const std::int64_t B = f.extent(0), C = f.extent(1), plane = f.extent(2) * f.extent(3);
    Tensor out(f.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const double g = gate.at(b, c);
            const double* src = f.row(b, c, 0);
            double* dst = out.row(b, c, 0);
            for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + g * src[p];
        }
    return out;
}

}  // namespace

ModalityPair cei_forward(const ModalityPair& p, const CEIWeights& w) {
    CEIGates g = cei_gates(p, w);
    return {apply_gate(p.rgb, g.w_rgb), apply_gate(p.ir, g.w_ir)};
}

DeepAttentionWeights make_deep_attention_weights(std::int64_t width, SplitMix64& rng) {
    DeepAttentionWeights w;
    w.wq = dense(width, width, rng);
    w.bq = Tensor({width});
    w.wk = dense(width, width, rng);
    w.bk = Tensor({width});
    w.wv = dense(width, width, rng);
    w.bv = Tensor({width});
    w.wo = dense(width, width, rng);
    w.bo = Tensor({width});
    w.ln1_gamma = Tensor::full({width}, 1.0);
    w.ln1_beta = Tensor({width});
    w.ln2_gamma = Tensor::full({width}, 1.0);
    w.ln2_beta = Tensor({width});
    w.ffn_w1 = dense(2 * width, width, rng);
    w.ffn_b1 = Tensor({2 * width});
    w.ffn_w2 = dense(width, 2 * width, rng);
    w.ffn_b2 = Tensor({width});
    return w;
}

Tensor sincos_position_embedding(std::int64_t H, std::int64_t W, std::int64_t d) {
    if (d % 4 != 0) {
        fail("sincos_position_embedding", "width must be divisible by 4, got " + std::to_string(d));
    }
    const std::int64_t quarter = d / 4;
    Tensor pe({H * W, d});
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            const std::int64_t t = y * W + x;
            for (std::int64_t i = 0; i < quarter; ++i) {
                const double omega =
                    1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
                pe.at(t, i) = std::sin(static_cast<double>(x) * omega);
                pe.at(t, quarter + i) = std::cos(static_cast<double>(x) * omega);
                pe.at(t, 2 * quarter + i) = std::sin(static_cast<double>(y) * omega);
                pe.at(t, 3 * quarter + i) = std::cos(static_cast<double>(y) * omega);
            }
        }
    return pe;
}

namespace {

struct AttentionParts {
    Tensor tokens;  // (B, L, d)
    Tensor scores;  // (B, L, L), row-stochastic
};

AttentionParts attention_scores_impl(const Tensor& x, const DeepAttentionWeights& w) {
    if (x.rank() != 4) fail("deep_attention", "input must be rank 4, got " + shape_str(x));
    const std::int64_t d = w.width();
    if (x.extent(1) != d) {
        fail("deep_attention", "channel width " + std::to_string(x.extent(1)) +
                                   " does not match weights " + std::to_string(d));
    }
    const std::int64_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const std::int64_t L = H * W;

    Tensor tokens({B, L, d});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t t = 0; t < L; ++t) tokens.at(b, t, c) = x.at(b, c, t / W, t % W);

    // positional encoding enters queries and keys only
    Tensor pe = sincos_position_embedding(H, W, d);
    Tensor qk_in(tokens.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t)
            for (std::int64_t c = 0; c < d; ++c) {
                qk_in.at(b, t, c) = tokens.at(b, t, c) + w.pe_scale * pe.at(t, c);
            }

    Tensor q = linear(qk_in, w.wq, w.bq);
    Tensor k = linear(qk_in, w.wk, w.bk);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor scores({B, L, L});
    std::vector<double> row(static_cast<std::size_t>(L));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < L; ++i) {
            double mx = -1e300;
            for (std::int64_t j = 0; j < L; ++j) {
                double acc = 0.0;
                for (std::int64_t c = 0; c < d; ++c) acc += q.at(b, i, c) * k.at(b, j, c);
                row[static_cast<std::size_t>(j)] = acc * inv_sqrt_d;
                mx = std::max(mx, row[static_cast<std::size_t>(j)]);
            }
            double sum = 0.0;
            for (std::int64_t j = 0; j < L; ++j) {
                row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
                sum += row[static_cast<std::size_t>(j)];
            }
            for (std::int64_t j = 0; j < L; ++j) scores.at(b, i, j) = row[static_cast<std::size_t>(j)] / sum;
        }
    return {std::move(tokens), std::move(scores)};
}

}  // namespace

Tensor deep_attention_scores(const Tensor& x, const DeepAttentionWeights& w) {
    return attention_scores_impl(x, w).scores;
}

Tensor deep_attention(const Tensor& x, const DeepAttentionWeights& w) {
    AttentionParts parts = attention_scores_impl(x, w);
    const std::int64_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    const std::int64_t d = w.width(), L = H * W;

    Tensor v = linear(parts.tokens, w.wv, w.bv);
    Tensor mixed({B, L, d});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < L; ++i) {
            double* dst = &mixed.data()[static_cast<std::size_t>((b * L + i) * d)];
            for (std::int64_t j = 0; j < L; ++j) {
                const double s = parts.scores.at(b, i, j);
                const double* vj = &v.data()[static_cast<std::size_t>((b * L + j) * d)];
                for (std::int64_t c = 0; c < d; ++c) dst[c] += s * vj[c];
            }
        }
    Tensor attn_out = linear(mixed, w.wo, w.bo);

    Tensor x1 = normalize(add(parts.tokens, attn_out), NormKind::layer, 1, w.ln1_gamma, w.ln1_beta);
    Tensor ffn = linear(activate(linear(x1, w.ffn_w1, w.ffn_b1), Activation::silu), w.ffn_w2, w.ffn_b2);
    Tensor out_tokens = normalize(add(x1, ffn), NormKind::layer, 1, w.ln2_gamma, w.ln2_beta);

    Tensor out(x.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t t = 0; t < L; ++t) out.at(b, c, t / W, t % W) = out_tokens.at(b, t, c);
    return out;
}

Tensor completion_branch(const Tensor& modality_feat, const Tensor& fuse_feat, const CompletionWeights& w) {
    if (modality_feat.rank() != 4 || fuse_feat.rank() != 4) {
        fail("completion_branch", "features must be rank 4");
    }
    if (modality_feat.extent(0) != fuse_feat.extent(0) || modality_feat.extent(2) != fuse_feat.extent(2) ||
        modality_feat.extent(3) != fuse_feat.extent(3)) {
        fail("completion_branch", "spatial misalignment: " + shape_str(modality_feat) + " vs " +
                                      shape_str(fuse_feat));
    }
    Tensor aligned = conv2d(modality_feat, w.in_proj);
    if (aligned.extent(1) != fuse_feat.extent(1)) {
        fail("completion_branch", "aligned width " + std::to_string(aligned.extent(1)) +
                                      " does not match fused width " + std::to_string(fuse_feat.extent(1)));
    }
    Tensor body = conv2d(region_aware_ss2d(aligned, w.scan), w.dw);
    Tensor gate = activate(global_avg_pool(fuse_feat), Activation::sigmoid);  // (B, d, 1, 1)
    const std::int64_t B = body.extent(0), C = body.extent(1), plane = body.extent(2) * body.extent(3);
    Tensor out(body.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const double g = gate.at(b, c, 0, 0);
            const double* src = body.row(b, c, 0);
            double* dst = out.row(b, c, 0);
            for (std::int64_t p = 0; p < plane; ++p) dst[p] = g * src[p];
        }
    return out;
}

Tensor fusion_block(const Tensor& x, const FusionBlockWeights& w) {
    Tensor reduced = conv2d(x, w.reduce);
    return add(reduced, conv2d(reduced, w.conv3));
}

namespace {

CompletionWeights make_completion(std::int64_t level_channels, std::int64_t width, std::int64_t state_dim,
                                  SplitMix64& rng) {
    CompletionWeights w;
    w.in_proj = conv_init(width, level_channels, 1, rng);
    w.scan = make_region_ss2d_weights(width, state_dim, rng);
    w.dw = depthwise3(width, rng);
    return w;
}

JunctionWeights make_junction(std::int64_t level_channels, std::int64_t width, std::int64_t state_dim,
                              SplitMix64& rng) {
    JunctionWeights j;
    j.ir = make_completion(level_channels, width, state_dim, rng);
    j.rgb = make_completion(level_channels, width, state_dim, rng);
    j.fuse.reduce = conv_init(width, 3 * width, 1, rng);
    j.fuse.conv3 = conv_init(width, width, 3, rng);
    return j;
}

}  // namespace

MPFWeights make_mpf_weights(const std::array<std::int64_t, 3>& level_channels, std::int64_t width,
                            std::int64_t state_dim, SplitMix64& rng, CompletionSide side) {
    MPFWeights w;
    for (std::size_t l = 0; l < 3; ++l) {
        w.fuse_proj[l] = conv_init(width, 2 * level_channels[l], 1, rng);
    }
    w.attn = make_deep_attention_weights(width, rng);
    w.td4 = make_junction(level_channels[1], width, state_dim, rng);
    w.td3 = make_junction(level_channels[0], width, state_dim, rng);
    w.bu4 = make_junction(level_channels[1], width, state_dim, rng);
    w.bu5 = make_junction(level_channels[2], width, state_dim, rng);
    w.down4 = conv_init(width, width, 3, rng);
    w.down5 = conv_init(width, width, 3, rng);
    w.side = side;
    return w;
}

namespace {

// Completion output for one junction under the configured side selection.
Tensor junction_completion(const ModalityPair& level, const Tensor& fuse_feat, const JunctionWeights& jw,
                           CompletionSide side) {
    switch (side) {
        case CompletionSide::none: return Tensor(fuse_feat.shape());
        case CompletionSide::ir: return completion_branch(level.ir, fuse_feat, jw.ir);
        case CompletionSide::rgb: return completion_branch(level.rgb, fuse_feat, jw.rgb);
        case CompletionSide::both:
            return add(completion_branch(level.ir, fuse_feat, jw.ir),
                       completion_branch(level.rgb, fuse_feat, jw.rgb));
    }
    return Tensor(fuse_feat.shape());
}

Tensor downsample(const Tensor& x, const ConvWeights& w) { return subsample_2x(conv2d(x, w)); }

}  // namespace

PyramidFeatures mpf_forward(const std::array<ModalityPair, 3>& levels, const MPFWeights& w) {
    for (std::size_t l = 0; l < 3; ++l) {
        if (!levels[l].rgb.same_shape(levels[l].ir)) {
            fail("mpf_forward", "modality shapes differ at level " + std::to_string(l + 3));
        }
    }
    std::array<Tensor, 3> fuse;
    for (std::size_t l = 0; l < 3; ++l) {
        const Tensor both[2] = {levels[l].rgb, levels[l].ir};
        fuse[l] = conv2d(concat_channels(both), w.fuse_proj[l]);
    }

    Tensor f5 = deep_attention(fuse[2], w.attn);

    // top-down: inject completion at each junction while propagating downwards
    Tensor r_td4 = junction_completion(levels[1], fuse[1], w.td4, w.side);
    const Tensor cat4[3] = {upsample_nearest_2x(f5), fuse[1], r_td4};
    Tensor p4 = fusion_block(concat_channels(cat4), w.td4.fuse);

    Tensor r_td3 = junction_completion(levels[0], fuse[0], w.td3, w.side);
    const Tensor cat3[3] = {upsample_nearest_2x(p4), fuse[0], r_td3};
    Tensor p3 = fusion_block(concat_channels(cat3), w.td3.fuse);

    // bottom-up: mirror of the top-down pass, gated by the current laterals
    Tensor r_bu4 = junction_completion(levels[1], p4, w.bu4, w.side);
    const Tensor catn4[3] = {downsample(p3, w.down4), p4, r_bu4};
    Tensor n4 = fusion_block(concat_channels(catn4), w.bu4.fuse);

    Tensor r_bu5 = junction_completion(levels[2], f5, w.bu5, w.side);
    const Tensor catn5[3] = {downsample(n4, w.down5), f5, r_bu5};
    Tensor n5 = fusion_block(concat_channels(catn5), w.bu5.fuse);

    PyramidFeatures out{std::move(p3), std::move(n4), std::move(n5)};
    require_finite(out.p3, "mpf_forward: P3");
    require_finite(out.n4, "mpf_forward: N4");
    require_finite(out.n5, "mpf_forward: N5");
    return out;
}

}  // namespace mmk
