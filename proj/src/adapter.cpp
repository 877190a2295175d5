#include "mmk/adapter.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mmk {

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

ConvWeights conv1x1(std::int64_t c_out, std::int64_t c_in, SplitMix64& rng) {
    ConvWeights w;
    w.kernel = Tensor({c_out, c_in, 1, 1});
    const double s = 1.0 / std::sqrt(static_cast<double>(c_in));
    for (auto& v : w.kernel.data()) v = rng.sym(s);
    w.bias = Tensor({c_out});
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

void zero_conv(ConvWeights& w) {
    for (auto& v : w.kernel.data()) v = 0.0;
    if (w.bias)
        for (auto& v : w.bias->data()) v = 0.0;
}

// Complex exponential table exp(sign * 2*pi*i * j * k / n) for j,k < n.
std::vector<std::complex<double>> twiddle(std::int64_t n, double sign) {
    std::vector<std::complex<double>> t(static_cast<std::size_t>(n * n));
    const double step = sign * 2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t k = 0; k < n; ++k) {
            const double a = step * static_cast<double>((j * k) % n);
            t[static_cast<std::size_t>(j * n + k)] = {std::cos(a), std::sin(a)};
        }
    return t;
}

void check_even(const char* op, std::int64_t H, std::int64_t W) {
    if (H % 2 != 0 || W % 2 != 0) {
        fail(op, "spatial extents must be even, got " + std::to_string(H) + "x" + std::to_string(W));
    }
}

}  // namespace

void AdapterWeights::validate() const {
    const std::int64_t C = channels(), d = adapter_dim();
    if (down_proj.in_channels() != C) fail("adapter", "down projection does not match channel width");
    if (spatial_out.out_channels() != C || freq_out_low.out_channels() != C ||
        freq_out_high.out_channels() != C) {
        fail("adapter", "expert output projections must map back to " + std::to_string(C) + " channels");
    }
    if (dw3.out_channels() != d || dw5.out_channels() != d || dw7.out_channels() != d) {
        fail("adapter", "spatial expert kernels must act at adapter width " + std::to_string(d));
    }
    if (router.out_channels() != 3 || router.in_channels() != C) {
        fail("adapter", "router must map " + std::to_string(C) + " channels to 3 expert logits");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) fail("adapter", "rho must lie in [0,1]");
}

AdapterWeights make_adapter_weights(std::int64_t channels, std::int64_t adapter_dim, SplitMix64& rng,
                                    bool zero_init_outputs) {
    AdapterWeights w;
    w.ln_gamma = Tensor::full({channels}, 1.0);
    w.ln_beta = Tensor({channels});
    w.down_proj = conv1x1(adapter_dim, channels, rng);
    w.dw3 = depthwise(adapter_dim, 3, rng);
    w.dw5 = depthwise(adapter_dim, 5, rng);
    w.dw7 = depthwise(adapter_dim, 7, rng);
    w.mix_proj = conv1x1(adapter_dim, adapter_dim, rng);
    w.spatial_out = conv1x1(channels, adapter_dim, rng);
    w.freq_dw_low = depthwise(adapter_dim, 3, rng);
    w.freq_dw_high = depthwise(adapter_dim, 3, rng);
    w.ca_low = conv1x1(adapter_dim, adapter_dim, rng);
    w.ca_high = conv1x1(adapter_dim, adapter_dim, rng);
    w.freq_out_low = conv1x1(channels, adapter_dim, rng);
    w.freq_out_high = conv1x1(channels, adapter_dim, rng);
    w.router = conv1x1(3, channels, rng);
    if (zero_init_outputs) {
        zero_conv(w.spatial_out);
        zero_conv(w.freq_out_low);
        zero_conv(w.freq_out_high);
    }
    return w;
}

ComplexImage dft2d_centered(const Tensor& x) {
    if (x.rank() != 4) fail("dft2d_centered", "input must be rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    check_even("dft2d_centered", H, W);
    const auto wrow = twiddle(W, -1.0);
    const auto wcol = twiddle(H, -1.0);

    ComplexImage out;
    out.shape = {B, C, H, W};
    out.data.assign(static_cast<std::size_t>(B * C * H * W), {0.0, 0.0});
    std::vector<std::complex<double>> tmp(static_cast<std::size_t>(H * W));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            // rows first, then columns (separable transform)
            for (std::int64_t h = 0; h < H; ++h) {
                const double* src = x.row(b, c, h);
                for (std::int64_t l = 0; l < W; ++l) {
                    std::complex<double> acc{0.0, 0.0};
                    const std::complex<double>* tw = &wrow[static_cast<std::size_t>(l * W)];
                    for (std::int64_t v = 0; v < W; ++v) acc += src[v] * tw[v];
                    tmp[static_cast<std::size_t>(h * W + l)] = acc;
                }
            }
            for (std::int64_t k = 0; k < H; ++k) {
                const std::complex<double>* tw = &wcol[static_cast<std::size_t>(k * H)];
                for (std::int64_t l = 0; l < W; ++l) {
                    std::complex<double> acc{0.0, 0.0};
                    for (std::int64_t h = 0; h < H; ++h) acc += tmp[static_cast<std::size_t>(h * W + l)] * tw[h];
                    // center shift: spectrum index (u, v) holds frequency (u - H/2, v - W/2)
                    const std::int64_t u = (k + H / 2) % H;
                    const std::int64_t v = (l + W / 2) % W;
                    out.at(b, c, u, v) = acc;
                }
            }
        }
    return out;
}

Tensor idft2d_centered_real(const ComplexImage& s) {
    const std::int64_t B = s.extent(0), C = s.extent(1), H = s.extent(2), W = s.extent(3);
    check_even("idft2d_centered_real", H, W);
    const auto wrow = twiddle(W, 1.0);
    const auto wcol = twiddle(H, 1.0);
    const double norm = 1.0 / static_cast<double>(H * W);

    Tensor out({B, C, H, W});
    std::vector<std::complex<double>> tmp(static_cast<std::size_t>(H * W));
    double max_imag = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t l = 0; l < W; ++l) {
                for (std::int64_t h = 0; h < H; ++h) {
                    std::complex<double> acc{0.0, 0.0};
                    const std::complex<double>* tw = &wcol[static_cast<std::size_t>(h * H)];
                    for (std::int64_t k = 0; k < H; ++k) {
                        // undo the center shift while reading
                        const std::int64_t u = (k + H / 2) % H;
                        const std::int64_t v = (l + W / 2) % W;
                        acc += s.at(b, c, u, v) * tw[k];
                    }
                    tmp[static_cast<std::size_t>(h * W + l)] = acc;
                }
            }
            for (std::int64_t h = 0; h < H; ++h) {
                double* dst = out.row(b, c, h);
                for (std::int64_t v = 0; v < W; ++v) {
                    std::complex<double> acc{0.0, 0.0};
                    const std::complex<double>* tw = &wrow[static_cast<std::size_t>(v * W)];
                    for (std::int64_t l = 0; l < W; ++l) acc += tmp[static_cast<std::size_t>(h * W + l)] * tw[l];
                    acc *= norm;
                    max_imag = std::max(max_imag, std::abs(acc.imag()));
                    dst[v] = acc.real();
                }
            }
        }
    if (max_imag >= 1e-9) {
        throw std::runtime_error("idft2d_centered_real: imaginary residue " + std::to_string(max_imag) +
                                 " exceeds 1e-9; spectrum is not conjugate-symmetric");
    }
    return out;
}

Tensor centered_lowpass_mask(std::int64_t H, std::int64_t W, double rho) {
    if (H < 1 || W < 1) fail("centered_lowpass_mask", "mask extents must be positive");
    Tensor m({H, W});
    const double limit = rho * static_cast<double>(H) / 2.0;
    for (std::int64_t u = 0; u < H; ++u)
        for (std::int64_t v = 0; v < W; ++v) {
            const double du = std::abs(static_cast<double>(u) - static_cast<double>(H) / 2.0);
            const double dv = std::abs(static_cast<double>(v) - static_cast<double>(W) / 2.0);
            m.at(u, v) = (std::max(du, dv) <= limit) ? 1.0 : 0.0;
        }
    return m;
}

Tensor project_in(const Tensor& x, const AdapterWeights& w) {
    return conv2d(normalize(x, NormKind::layer, 1, w.ln_gamma, w.ln_beta), w.down_proj);
}

Tensor spatial_expert(const Tensor& xt, const AdapterWeights& w) {
    Tensor xbar = scale(add(add(conv2d(xt, w.dw3), conv2d(xt, w.dw5)), conv2d(xt, w.dw7)), 1.0 / 3.0);
    Tensor inner = add(add(xbar, xt), conv2d(xbar, w.mix_proj));
    return conv2d(inner, w.spatial_out);
}

SpectrumPair frequency_split(const Tensor& xt, double rho) {
    if (xt.rank() != 4) fail("frequency_split", "input must be rank 4, got " + shape_str(xt));
    if (xt.numel() == 0) fail("frequency_split", "zero-area input");
    const std::int64_t B = xt.extent(0), C = xt.extent(1), H = xt.extent(2), W = xt.extent(3);
    check_even("frequency_split", H, W);
    ComplexImage spec = dft2d_centered(xt);
    Tensor mask = centered_lowpass_mask(H, W, rho);
    SpectrumPair out;
    out.low.shape = out.high.shape = spec.shape;
    out.low.data.assign(spec.data.size(), {0.0, 0.0});
    out.high.data.assign(spec.data.size(), {0.0, 0.0});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t u = 0; u < H; ++u)
                for (std::int64_t v = 0; v < W; ++v) {
                    if (mask.at(u, v) != 0.0) {
                        out.low.at(b, c, u, v) = spec.at(b, c, u, v);
                    } else {
                        out.high.at(b, c, u, v) = spec.at(b, c, u, v);
                    }
                }
    return out;
}

namespace {

Tensor pad_to_even(const Tensor& x) {
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::int64_t He = H + (H % 2), We = W + (W % 2);
    if (He == H && We == W) return x;
    Tensor out({B, C, He, We});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t h = 0; h < H; ++h) {
                const double* src = x.row(b, c, h);
                std::copy(src, src + W, out.row(b, c, h));
            }
    return out;
}

Tensor crop(const Tensor& x, std::int64_t H, std::int64_t W) {
    if (x.extent(2) == H && x.extent(3) == W) return x;
    Tensor out({x.extent(0), x.extent(1), H, W});
    for (std::int64_t b = 0; b < x.extent(0); ++b)
        for (std::int64_t c = 0; c < x.extent(1); ++c)
            for (std::int64_t h = 0; h < H; ++h) {
                const double* src = x.row(b, c, h);
                std::copy(src, src + W, out.row(b, c, h));
            }
    return out;
}

// out[b,c,i,j] = x[b,c,i,j] * g[b,c,0,0]
Tensor channel_scale(const Tensor& x, const Tensor& g) {
    Tensor out(x.shape());
    const std::int64_t B = x.extent(0), C = x.extent(1), plane = x.extent(2) * x.extent(3);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const double s = g.at(b, c, 0, 0);
            const double* src = x.row(b, c, 0);
            double* dst = out.row(b, c, 0);
            for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] * s;
        }
    return out;
}

Tensor branch_delta(const Tensor& recon, const ConvWeights& dw, const ConvWeights& ca,
                    const ConvWeights& out_proj) {
    Tensor feat = conv2d(recon, dw);
    Tensor gate = activate(conv2d(global_avg_pool(feat), ca), Activation::sigmoid);
    return conv2d(channel_scale(feat, gate), out_proj);
}

}  // namespace

std::pair<Tensor, Tensor> frequency_expert(const Tensor& xt, const AdapterWeights& w) {
    if (xt.rank() != 4) fail("frequency_expert", "input must be rank 4, got " + shape_str(xt));
    const std::int64_t H = xt.extent(2), W = xt.extent(3);
    Tensor even = pad_to_even(xt);  // odd extents are zero-padded right/bottom, cropped after
    SpectrumPair sp = frequency_split(even, w.rho);
    for (const auto& v : sp.low.data) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw std::runtime_error("frequency_expert: non-finite spectral values");
        }
    }
    Tensor x_low = crop(idft2d_centered_real(sp.low), H, W);
    Tensor x_high = crop(idft2d_centered_real(sp.high), H, W);
    Tensor d_low = branch_delta(x_low, w.freq_dw_low, w.ca_low, w.freq_out_low);
    Tensor d_high = branch_delta(x_high, w.freq_dw_high, w.ca_high, w.freq_out_high);
    return {d_low, d_high};
}

Tensor router_fuse(const Tensor& x, const Tensor& d_spatial, const Tensor& d_low, const Tensor& d_high,
                   const AdapterWeights& w) {
    for (const Tensor* t : {&d_spatial, &d_low, &d_high}) {
        if (!t->same_shape(x)) {
            fail("router_fuse", "residual candidate shape " + shape_str(*t) + " does not match input " +
                                    shape_str(x));
        }
    }
    Tensor weights = activate(conv2d(x, w.router), Activation::softmax_channels);  // (B,3,H,W)
    const std::int64_t B = x.extent(0), C = x.extent(1), plane = x.extent(2) * x.extent(3);
    Tensor out(x.shape());
    const Tensor* deltas[3] = {&d_spatial, &d_low, &d_high};
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            double* dst = out.row(b, c, 0);
            for (int k = 0; k < 3; ++k) {
                const double* wk = weights.row(b, k, 0);
                const double* dk = deltas[k]->row(b, c, 0);
                for (std::int64_t p = 0; p < plane; ++p) dst[p] += wk[p] * dk[p];
            }
        }
    return out;
}

Tensor adapter_forward(const Tensor& x, const AdapterWeights& w) {
    w.validate();
    if (x.rank() != 4) fail("adapter_forward", "input must be rank 4, got " + shape_str(x));
    if (x.extent(1) != w.channels()) {
        fail("adapter_forward", "input channels " + std::to_string(x.extent(1)) +
                                    " do not match adapter width " + std::to_string(w.channels()));
    }
    Tensor xt = project_in(x, w);
    Tensor d_spatial = spatial_expert(xt, w);
    auto [d_low, d_high] = frequency_expert(xt, w);
    Tensor delta = router_fuse(x, d_spatial, d_low, d_high, w);
    return add(x, delta);
}

}  // namespace mmk
