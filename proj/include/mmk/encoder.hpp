#pragma once

#include <array>

#include "mmk/rng.hpp"
#include "mmk/scan.hpp"
#include "mmk/tensor.hpp"

namespace mmk {

struct ModalityPair {
    Tensor rgb, ir;
};

// Channel-gating interaction block. Concatenated modality features are
// pooled to a fixed grid, serialized, run through a gated state-space scan,
// and reduced to per-channel gates in (0,1) that rescale each modality
// residually: out_m = f_m + w_m ⊙ f_m.
struct CEIWeights {
    std::int64_t pool_h = 8, pool_w = 8;
    Tensor in_down;             // (r, 2C), bias-free low-rank pair
    Tensor in_up;               // (2E, r): drive and gate halves, E = 2C
    Tensor A;                   // (E, N)
    Tensor delta_w, delta_b;    // (E, E), (E)
    Tensor b_w, c_w;            // (N, E)
    Tensor ln_gamma, ln_beta;   // (E)
    Tensor out_w, out_b;        // (2C, E), (2C)

    std::int64_t channels() const { return in_down.extent(1) / 2; }
    std::int64_t inner_width() const { return in_up.extent(0) / 2; }
    std::int64_t state_dim() const { return A.extent(1); }
};

CEIWeights make_cei_weights(std::int64_t channels, std::int64_t state_dim, SplitMix64& rng);

struct CEIGates {
    Tensor w_rgb, w_ir;  // (B, C) each, entries strictly in (0,1)
};

CEIGates cei_gates(const ModalityPair& p, const CEIWeights& w);
ModalityPair cei_forward(const ModalityPair& p, const CEIWeights& w);

// Single-head post-norm transformer block applied to the flattened deepest
// level. Positional encoding enters queries and keys only.
struct DeepAttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;                // (d,d) / (d)
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;      // (d)
    Tensor ffn_w1, ffn_b1;                                // (2d, d), (2d)
    Tensor ffn_w2, ffn_b2;                                // (d, 2d), (d)
    double pe_scale = 1.0;

    std::int64_t width() const { return wq.extent(0); }
};

DeepAttentionWeights make_deep_attention_weights(std::int64_t width, SplitMix64& rng);

// Fixed 2d sine/cosine embedding, (H*W, d); requires d % 4 == 0.
Tensor sincos_position_embedding(std::int64_t H, std::int64_t W, std::int64_t d);

Tensor deep_attention(const Tensor& x, const DeepAttentionWeights& w);  // BCHW -> BCHW

// Row-stochastic attention matrix (B, L, L) of the block above, for checks.
Tensor deep_attention_scores(const Tensor& x, const DeepAttentionWeights& w);

// Completion branch: aligns a modality feature to the fused width, applies
// the region-aware scan and a depthwise refinement, and gates the result
// with per-channel sigmoid weights pooled from the fused feature.
struct CompletionWeights {
    ConvWeights in_proj;       // 1x1, level width -> fused width
    RegionSS2DWeights scan;
    ConvWeights dw;            // depthwise 3x3 at fused width (branch output conv)
};

Tensor completion_branch(const Tensor& modality_feat, const Tensor& fuse_feat, const CompletionWeights& w);

// 1x1 reduction followed by one residual 3x3 block.
struct FusionBlockWeights {
    ConvWeights reduce;  // 1x1, 3d -> d
    ConvWeights conv3;   // 3x3, d -> d
};

Tensor fusion_block(const Tensor& x, const FusionBlockWeights& w);

enum class CompletionSide { none, ir, rgb, both };

struct JunctionWeights {
    CompletionWeights ir, rgb;
    FusionBlockWeights fuse;
};

struct PyramidFeatures {
    Tensor p3, n4, n5;
};

// Dual-path pyramid fusion: per-level fusion projections, deep attention on
// level 5, a top-down pass producing P4/P3 and a bottom-up pass producing
// N4/N5, with one modality-completion branch per pyramid junction.
struct MPFWeights {
    std::array<ConvWeights, 3> fuse_proj;  // levels 3,4,5: 2*C_l -> d
    DeepAttentionWeights attn;
    JunctionWeights td4, td3, bu4, bu5;    // named by the level they produce
    ConvWeights down4, down5;              // stride-2 3x3 downsampling convs
    CompletionSide side = CompletionSide::ir;

    std::int64_t width() const { return attn.width(); }
};

MPFWeights make_mpf_weights(const std::array<std::int64_t, 3>& level_channels, std::int64_t width,
                            std::int64_t state_dim, SplitMix64& rng,
                            CompletionSide side = CompletionSide::ir);

// levels are the three (post-interaction) modality pairs, shallow to deep.
PyramidFeatures mpf_forward(const std::array<ModalityPair, 3>& levels, const MPFWeights& w);

}  // namespace mmk
