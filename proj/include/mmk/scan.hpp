#pragma once

#include <array>
#include <span>
#include <vector>

#include "mmk/rng.hpp"
#include "mmk/tensor.hpp"

namespace mmk {

// Step-size floor applied after softplus wherever scan steps are generated
// from features; keeps exp(delta*A) away from exactly 1.
inline constexpr double kDeltaFloor = 1e-4;

// Bottleneck rank of every low-rank projection pair.
inline constexpr std::int64_t kLowRank = 4;

// Inputs of the diagonal linear state-space scan
//   h_t = exp(delta_t ⊙ A) ⊙ h_{t-1} + delta_t * B_t * u_t
//   y_t = <C_t, h_t>
// evaluated independently per (batch, channel) lane. u and delta are
// (B, L, D); A is (D, N); B_seq and C_seq are (B, L, N), shared across the
// D channels. delta must be strictly positive.
struct ScanInputs {
    Tensor u, delta, A, B_seq, C_seq;

    void validate() const;
    std::int64_t batches() const { return u.extent(0); }
    std::int64_t length() const { return u.extent(1); }
    std::int64_t channels() const { return u.extent(2); }
    std::int64_t state_dim() const { return A.extent(1); }
};

// Runs the recurrence in O(L) and returns y (B, L, D).
Tensor ss1d_scan(const ScanInputs& in);

// Same scan, also returning the state trajectory h (B, L, D, N).
struct ScanTrace {
    Tensor y;
    Tensor h;
};
ScanTrace ss1d_scan_trace(const ScanInputs& in);

struct ScanGradients {
    Tensor u, delta, A, B_seq, C_seq;
};

// Reverse-time adjoint scan: gradients of sum(dy ⊙ y) with respect to every
// input, at the same O(L) cost as the forward pass.
ScanGradients ss1d_backward(const ScanInputs& in, const Tensor& dy);

// Raster orders used to serialize a (B, C, H, W) map into scan sequences.
// h_fwd walks rows left-to-right, v_fwd walks columns top-to-bottom; the
// _bwd variants reverse the respective order.
enum class Direction { h_fwd, h_bwd, v_fwd, v_bwd };

const char* direction_name(Direction d);

Tensor unfold_direction(const Tensor& x, Direction d);  // (B,C,H,W) -> (B, H*W, C)
Tensor fold_direction(const Tensor& seq, Direction d, std::int64_t H,
                      std::int64_t W);  // exact inverse of unfold_direction

// Per-direction parameters of the generic 2d scan: a state matrix per
// channel plus constant step size and input/output vectors applied at every
// position of the serialized sequence.
struct Ss2dDirectionParams {
    Direction dir;
    Tensor A;      // (C, N)
    double delta;  // > 0
    Tensor B_row;  // (N)
    Tensor C_row;  // (N)
};

// y = sum_d Fold_d(SS1D(Unfold_d(x))): every direction is scanned with its
// own parameters, folded back to the plane, and the directional results are
// summed.
Tensor ss2d(const Tensor& x, std::span<const Ss2dDirectionParams> params);

// Region-aware scan block: group-normalized depthwise local mixing followed
// by directional state-space scans whose driving signal, step sizes and
// state parameters come from low-rank / grouped 1x1 projections.
struct RegionSS2DWeights {
    Tensor gn_gamma, gn_beta;            // (C)
    ConvWeights dw3;                     // depthwise 3x3 at C
    ConvWeights u_down, u_up;            // 1x1, C -> r -> C, bias-free
    ConvWeights delta_down, delta_up;    // 1x1, C -> r -> C, bias-free
    std::array<ConvWeights, 2> bc_down;  // per channel group: C/2 -> r, bias-free
    std::array<ConvWeights, 2> bc_up;    // per channel group: r -> 2N, bias-free
    std::vector<Tensor> A_dir;           // one (C, N) state matrix per direction
    std::vector<Direction> directions;   // default {h_fwd, v_fwd}
    ConvWeights out_proj;                // 1x1, C -> C
    std::int64_t state_dim = 16;

    std::int64_t channels() const { return gn_gamma.extent(0); }
    std::int64_t rank() const { return u_down.kernel.extent(0); }
    std::int64_t group_count() const { return static_cast<std::int64_t>(bc_down.size()); }
    std::int64_t parameter_count() const;
    std::int64_t driving_projection_parameter_count() const;
    void validate() const;
};

RegionSS2DWeights make_region_ss2d_weights(std::int64_t channels, std::int64_t state_dim,
                                           std::span<const Direction> directions, SplitMix64& rng);
RegionSS2DWeights make_region_ss2d_weights(std::int64_t channels, std::int64_t state_dim,
                                           SplitMix64& rng);

Tensor region_aware_ss2d(const Tensor& x, const RegionSS2DWeights& w);

// Parameter count of the dense projection a single scan-signal generator
// would need at width C (one full C x C map).
std::int64_t dense_driving_projection_parameter_count(std::int64_t channels);

// Weight count of a conventional dense scan block at channel width C and
// state dimension N: gated input projection with 2x channel expansion, four
// scan directions with per-direction dense step/state generation, depthwise
// mixing and output projection at the expanded width. Serves as the
// reference the low-rank grouped block is compared against.
std::int64_t dense_ss2d_reference_parameter_count(std::int64_t channels, std::int64_t state_dim);

}  // namespace mmk
