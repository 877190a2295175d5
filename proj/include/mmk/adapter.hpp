#pragma once

#include <complex>
#include <utility>
#include <vector>

#include "mmk/rng.hpp"
#include "mmk/tensor.hpp"

namespace mmk {

// Complex-valued (B, C, H, W) grid holding centered spectra.
struct ComplexImage {
    Shape shape;
    std::vector<std::complex<double>> data;

    std::int64_t extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }
    std::complex<double>& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
        const std::int64_t H = shape[2], W = shape[3];
        return data[static_cast<std::size_t>(((b * shape[1] + c) * H + h) * W + w)];
    }
    std::complex<double> at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
        const std::int64_t H = shape[2], W = shape[3];
        return data[static_cast<std::size_t>(((b * shape[1] + c) * H + h) * W + w)];
    }
};

struct SpectrumPair {
    ComplexImage low, high;
};

// Residual adapter weights: channel layer norm, projection to the adapter
// width, a multi-kernel spatial expert, low/high frequency experts behind a
// centered spectral split at cutoff rho, and a pixel-wise three-way router.
struct AdapterWeights {
    Tensor ln_gamma, ln_beta;                 // (C)
    ConvWeights down_proj;                    // 1x1, C -> d_a
    ConvWeights dw3, dw5, dw7;                // depthwise at d_a
    ConvWeights mix_proj;                     // 1x1, d_a -> d_a
    ConvWeights spatial_out;                  // 1x1, d_a -> C
    ConvWeights freq_dw_low, freq_dw_high;    // depthwise 3x3 at d_a
    ConvWeights ca_low, ca_high;              // 1x1, d_a -> d_a (channel attention)
    ConvWeights freq_out_low, freq_out_high;  // 1x1, d_a -> C
    ConvWeights router;                       // 1x1, C -> 3
    double rho = 0.5;

    std::int64_t channels() const { return ln_gamma.extent(0); }
    std::int64_t adapter_dim() const { return down_proj.out_channels(); }
    void validate() const;
};

// zero_init_outputs zeroes spatial_out/freq_out_low/freq_out_high so a fresh
// adapter is an exact identity map.
AdapterWeights make_adapter_weights(std::int64_t channels, std::int64_t adapter_dim, SplitMix64& rng,
                                    bool zero_init_outputs = true);

// Unnormalized forward DFT per channel, center-shifted so the zero frequency
// sits at (H/2, W/2). Requires even H and W.
ComplexImage dft2d_centered(const Tensor& x);

// Inverse of dft2d_centered with 1/(H*W) normalization. The imaginary
// residue is discarded after asserting max |imag| < 1e-9.
Tensor idft2d_centered_real(const ComplexImage& s);

// (H, W) 0/1 mask: 1 where max(|u - H/2|, |v - W/2|) <= rho*H/2.
Tensor centered_lowpass_mask(std::int64_t H, std::int64_t W, double rho);

Tensor project_in(const Tensor& x, const AdapterWeights& w);   // LN + 1x1 down projection
Tensor spatial_expert(const Tensor& xt, const AdapterWeights& w);  // -> C channels
SpectrumPair frequency_split(const Tensor& xt, double rho);
// -> (low, high) residual candidates at C channels
std::pair<Tensor, Tensor> frequency_expert(const Tensor& xt, const AdapterWeights& w);
Tensor router_fuse(const Tensor& x, const Tensor& d_spatial, const Tensor& d_low, const Tensor& d_high,
                   const AdapterWeights& w);
Tensor adapter_forward(const Tensor& x, const AdapterWeights& w);

}  // namespace mmk
