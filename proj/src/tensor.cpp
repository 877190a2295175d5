#include "mmk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmk {

namespace {

std::int64_t shape_product(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    return n;
}

void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw std::invalid_argument("tensor rank must be 1..4, got rank " +
                                    std::to_string(shape.size()));
    }
    for (std::int64_t e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    }
}

[[noreturn]] void fail_shape(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
    init_strides();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_product(shape_)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
    init_strides();
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

void Tensor::init_strides() {
    const auto r = shape_.size();
    std::int64_t s = 1;
    std::int64_t tmp[4] = {1, 1, 1, 1};
    for (std::size_t i = r; i-- > 0;) {
        tmp[i] = s;
        s *= shape_[i];
    }
    for (int i = 0; i < 3; ++i) st_[i] = (static_cast<std::size_t>(i) < r) ? tmp[i] : 0;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

std::string shape_str(const Tensor& t) { return shape_str(t.shape()); }

void ConvWeights::validate() const {
    if (kernel.rank() != 4) fail_shape("conv2d", "kernel must be rank 4, got " + shape_str(kernel));
    if (kernel.extent(2) != kernel.extent(3)) {
        fail_shape("conv2d", "kernel must be square, got " + shape_str(kernel));
    }
    if (groups < 1) fail_shape("conv2d", "groups must be >= 1");
    if (kernel.extent(0) % groups != 0) {
        fail_shape("conv2d", "output channels " + std::to_string(kernel.extent(0)) +
                                 " not divisible by groups " + std::to_string(groups));
    }
    if (bias && (bias->rank() != 1 || bias->extent(0) != kernel.extent(0))) {
        fail_shape("conv2d", "bias shape " + shape_str(*bias) + " does not match output channels " +
                                 std::to_string(kernel.extent(0)));
    }
}

Tensor conv2d(const Tensor& x, const ConvWeights& w) {
    w.validate();
    if (x.rank() != 4) fail_shape("conv2d", "input must be rank 4 (B,C,H,W), got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (C != w.in_channels()) {
        fail_shape("conv2d", "input channels " + std::to_string(C) + " vs kernel expecting " +
                                 std::to_string(w.in_channels()) + " (kernel " + shape_str(w.kernel) + ")");
    }
    const std::int64_t Cout = w.out_channels();
    const std::int64_t Cg = w.kernel.extent(1);
    const std::int64_t k = w.kernel_size();
    const std::int64_t p = w.pad();
    const std::int64_t cout_per_g = Cout / w.groups;

    Tensor out({B, Cout, H, W});
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            const double bias = w.bias ? w.bias->at(co) : 0.0;
            for (std::int64_t i = 0; i < H; ++i) {
                double* orow = out.row(b, co, i);
                std::fill(orow, orow + W, bias);
            }
            const std::int64_t ci0 = (co / cout_per_g) * Cg;
            for (std::int64_t cl = 0; cl < Cg; ++cl) {
                for (std::int64_t u = 0; u < k; ++u) {
                    const std::int64_t i0 = std::max<std::int64_t>(0, p - u);
                    const std::int64_t i1 = std::min<std::int64_t>(H, H + p - u);
                    for (std::int64_t v = 0; v < k; ++v) {
                        const double kw = w.kernel.at(co, cl, u, v);
                        if (kw == 0.0) continue;
                        const std::int64_t j0 = std::max<std::int64_t>(0, p - v);
                        const std::int64_t j1 = std::min<std::int64_t>(W, W + p - v);
                        for (std::int64_t i = i0; i < i1; ++i) {
                            const double* xrow = x.row(b, ci0 + cl, i + u - p) + (j0 + v - p);
                            double* orow = out.row(b, co, i) + j0;
                            const std::int64_t n = j1 - j0;
                            for (std::int64_t j = 0; j < n; ++j) orow[j] += kw * xrow[j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

namespace {

// Normalizes `count` values with stride `stride` starting at base index.
void normalize_slice(const Tensor& x, Tensor& out, std::int64_t base, std::int64_t count,
                     std::int64_t stride, double eps) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < count; ++i) mean += x.at(base + i * stride);
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        const double d = x.at(base + i * stride) - mean;
        var += d * d;
    }
    var /= static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < count; ++i) {
        out.at(base + i * stride) = (x.at(base + i * stride) - mean) * inv;
    }
}

}  // namespace

Tensor normalize(const Tensor& x, NormKind kind, std::int64_t num_groups, const Tensor& gamma,
                 const Tensor& beta, double eps) {
    const std::int64_t feat = (x.rank() == 4) ? x.extent(1) : x.extent(static_cast<int>(x.rank() - 1));
    if (gamma.rank() != 1 || gamma.extent(0) != feat || beta.rank() != 1 || beta.extent(0) != feat) {
        fail_shape("normalize", "affine shapes " + shape_str(gamma) + "/" + shape_str(beta) +
                                    " do not match feature width " + std::to_string(feat));
    }
    Tensor out(x.shape());

    if (kind == NormKind::layer) {
        if (x.rank() == 4) {
            const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
            const std::int64_t plane = H * W;
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t pos = 0; pos < plane; ++pos) {
                    normalize_slice(x, out, b * C * plane + pos, C, plane, eps);
                }
            }
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t c = 0; c < C; ++c) {
                    const double g = gamma.at(c), be = beta.at(c);
                    for (std::int64_t pos = 0; pos < plane; ++pos) {
                        double& v = out.at(b * C * plane + c * plane + pos);
                        v = v * g + be;
                    }
                }
            return out;
        }
        if (x.rank() == 3 || x.rank() == 2) {
            const std::int64_t rows = x.numel() / feat;
            for (std::int64_t r = 0; r < rows; ++r) normalize_slice(x, out, r * feat, feat, 1, eps);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t d = 0; d < feat; ++d) {
                    double& v = out.at(r * feat + d);
                    v = v * gamma.at(d) + beta.at(d);
                }
            return out;
        }
        fail_shape("normalize", "layer norm expects rank 2..4, got " + shape_str(x));
    }

    // group norm
    if (x.rank() != 4) fail_shape("normalize", "group norm expects rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (num_groups < 1 || C % num_groups != 0) {
        fail_shape("normalize", "channels " + std::to_string(C) + " not divisible by groups " +
                                    std::to_string(num_groups));
    }
    const std::int64_t cg = C / num_groups;
    const std::int64_t plane = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t g = 0; g < num_groups; ++g) {
            normalize_slice(x, out, (b * C + g * cg) * plane, cg * plane, 1, eps);
        }
    }
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            const double g = gamma.at(c), be = beta.at(c);
            double* row = out.row(b, c, 0);
            for (std::int64_t pos = 0; pos < plane; ++pos) row[pos] = row[pos] * g + be;
        }
    return out;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double silu_scalar(double x) { return x * sigmoid_scalar(x); }

double softplus_scalar(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

Tensor activate(const Tensor& x, Activation kind) {
    if (kind == Activation::softmax_channels) {
        if (x.rank() != 4) fail_shape("activate", "channel softmax expects rank 4, got " + shape_str(x));
        const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
        const std::int64_t plane = H * W;
        Tensor out(x.shape());
        for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t pos = 0; pos < plane; ++pos) {
                const std::int64_t base = b * C * plane + pos;
                double mx = x.at(base);
                for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, x.at(base + c * plane));
                double sum = 0.0;
                for (std::int64_t c = 0; c < C; ++c) {
                    const double e = std::exp(x.at(base + c * plane) - mx);
                    out.at(base + c * plane) = e;
                    sum += e;
                }
                for (std::int64_t c = 0; c < C; ++c) out.at(base + c * plane) /= sum;
            }
        }
        return out;
    }
    Tensor out(x.shape());
    const auto in = x.data();
    auto o = out.data();
    if (kind == Activation::silu) {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = silu_scalar(in[i]);
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = sigmoid_scalar(in[i]);
    }
    return out;
}

Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.rank() != 4) fail_shape("adaptive_avg_pool", "input must be rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (out_h < 1 || out_h > H || out_w < 1 || out_w > W) {
        fail_shape("adaptive_avg_pool", "target (" + std::to_string(out_h) + "," + std::to_string(out_w) +
                                            ") outside [1,H]x[1,W] for input " + shape_str(x));
    }
    Tensor out({B, C, out_h, out_w});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t h0 = (i * H) / out_h;
                const std::int64_t h1 = ((i + 1) * H + out_h - 1) / out_h;  // ceil
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t w0 = (j * W) / out_w;
                    const std::int64_t w1 = ((j + 1) * W + out_w - 1) / out_w;
                    double acc = 0.0;
                    for (std::int64_t h = h0; h < h1; ++h) {
                        const double* row = x.row(b, c, h);
                        for (std::int64_t w = w0; w < w1; ++w) acc += row[w];
                    }
                    out.at(b, c, i, j) = acc / static_cast<double>((h1 - h0) * (w1 - w0));
                }
            }
    return out;
}

Tensor global_avg_pool(const Tensor& x) { return adaptive_avg_pool(x, 1, 1); }

Tensor upsample_nearest_2x(const Tensor& x) {
    if (x.rank() != 4) fail_shape("upsample_nearest_2x", "input must be rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor out({B, C, 2 * H, 2 * W});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < 2 * H; ++i) {
                const double* src = x.row(b, c, i / 2);
                double* dst = out.row(b, c, i);
                for (std::int64_t j = 0; j < 2 * W; ++j) dst[j] = src[j / 2];
            }
    return out;
}

Tensor subsample_2x(const Tensor& x) {
    if (x.rank() != 4) fail_shape("subsample_2x", "input must be rank 4, got " + shape_str(x));
    const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (H % 2 != 0 || W % 2 != 0) {
        fail_shape("subsample_2x", "spatial extents must be even, got " + shape_str(x));
    }
    Tensor out({B, C, H / 2, W / 2});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < H / 2; ++i) {
                const double* src = x.row(b, c, 2 * i);
                double* dst = out.row(b, c, i);
                for (std::int64_t j = 0; j < W / 2; ++j) dst[j] = src[2 * j];
            }
    return out;
}

Tensor concat_channels(std::span<const Tensor> xs) {
    if (xs.empty()) fail_shape("concat_channels", "needs at least one input");
    const Tensor& first = xs[0];
    if (first.rank() != 4) fail_shape("concat_channels", "inputs must be rank 4, got " + shape_str(first));
    std::int64_t C = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != 4 || t.extent(0) != first.extent(0) || t.extent(2) != first.extent(2) ||
            t.extent(3) != first.extent(3)) {
            fail_shape("concat_channels",
                       "incompatible shapes " + shape_str(first) + " vs " + shape_str(t));
        }
        C += t.extent(1);
    }
    const std::int64_t B = first.extent(0), H = first.extent(2), W = first.extent(3);
    Tensor out({B, C, H, W});
    for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t co = 0;
        for (const Tensor& t : xs) {
            for (std::int64_t c = 0; c < t.extent(1); ++c, ++co) {
                for (std::int64_t i = 0; i < H; ++i) {
                    const double* src = t.row(b, c, i);
                    double* dst = out.row(b, co, i);
                    std::copy(src, src + W, dst);
                }
            }
        }
    }
    return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t c_begin, std::int64_t c_end) {
    if (x.rank() != 4) fail_shape("slice_channels", "input must be rank 4, got " + shape_str(x));
    if (c_begin < 0 || c_end <= c_begin || c_end > x.extent(1)) {
        fail_shape("slice_channels", "range [" + std::to_string(c_begin) + "," + std::to_string(c_end) +
                                         ") invalid for " + shape_str(x));
    }
    const std::int64_t B = x.extent(0), H = x.extent(2), W = x.extent(3);
    Tensor out({B, c_end - c_begin, H, W});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = c_begin; c < c_end; ++c)
            for (std::int64_t i = 0; i < H; ++i) {
                const double* src = x.row(b, c, i);
                std::copy(src, src + W, out.row(b, c - c_begin, i));
            }
    return out;
}

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
    if (w.rank() != 2) fail_shape("linear", "weight must be rank 2, got " + shape_str(w));
    if (x.rank() != 2 && x.rank() != 3) {
        fail_shape("linear", "input must be rank 2 or 3, got " + shape_str(x));
    }
    const std::int64_t din = x.extent(static_cast<int>(x.rank() - 1));
    const std::int64_t dout = w.extent(0);
    if (w.extent(1) != din) {
        fail_shape("linear", "weight " + shape_str(w) + " does not match input feature width " +
                                 std::to_string(din));
    }
    if (b && (b->rank() != 1 || b->extent(0) != dout)) {
        fail_shape("linear", "bias " + shape_str(*b) + " does not match output width " + std::to_string(dout));
    }
    Shape os = x.shape();
    os.back() = dout;
    Tensor out(os);
    const std::int64_t rows = x.numel() / din;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xin = &x.data()[static_cast<std::size_t>(r * din)];
        double* o = &out.data()[static_cast<std::size_t>(r * dout)];
        for (std::int64_t d = 0; d < dout; ++d) {
            const double* wrow = &w.data()[static_cast<std::size_t>(d * din)];
            double acc = b ? b->at(d) : 0.0;
            for (std::int64_t i = 0; i < din; ++i) acc += wrow[i] * xin[i];
            o[d] = acc;
        }
    }
    return out;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return linear_impl(x, w, &b); }

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        fail_shape(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) - b.at(i);
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * s;
    return out;
}

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor& t, const char* what) {
    if (!all_finite(t)) {
        throw std::runtime_error(std::string(what) + ": non-finite values in tensor " + shape_str(t));
    }
}

}  // namespace mmk
