#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmk {

using Shape = std::vector<std::int64_t>;

// Dense row-major tensor of doubles, rank 1..4. Canonical image layout is
// (batch, channels, height, width); sequences are (batch, length, features).
// Every operation below treats its inputs as immutable and returns a fresh
// tensor.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> values);

    static Tensor full(Shape shape, double value);

    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    // Unchecked element access; the caller is responsible for rank/bounds.
    double& at(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * st_[0] + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * st_[0] + j)]; }
    double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>((i * st_[0]) + j * st_[1] + k)];
    }
    double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>((i * st_[0]) + j * st_[1] + k)];
    }
    double& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(b * st_[0] + c * st_[1] + h * st_[2] + w)];
    }
    double at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(b * st_[0] + c * st_[1] + h * st_[2] + w)];
    }

    double* row(std::int64_t b, std::int64_t c, std::int64_t h) {
        return data_.data() + b * st_[0] + c * st_[1] + h * st_[2];
    }
    const double* row(std::int64_t b, std::int64_t c, std::int64_t h) const {
        return data_.data() + b * st_[0] + c * st_[1] + h * st_[2];
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    void init_strides();

    Shape shape_;
    std::vector<double> data_;
    std::int64_t st_[3] = {0, 0, 0};  // strides for the leading rank-1 axes
};

std::string shape_str(const Tensor& t);
std::string shape_str(const Shape& s);

// Weights of a stride-1 2d convolution with zero same-padding.
// kernel is (C_out, C_in/groups, k, k); bias, when present, is (C_out).
struct ConvWeights {
    Tensor kernel;
    std::optional<Tensor> bias;
    std::int64_t groups = 1;
    std::int64_t padding = -1;  // -1 selects k/2

    std::int64_t out_channels() const { return kernel.extent(0); }
    std::int64_t in_channels() const { return kernel.extent(1) * groups; }
    std::int64_t kernel_size() const { return kernel.extent(2); }
    std::int64_t pad() const { return padding < 0 ? kernel.extent(2) / 2 : padding; }
    std::int64_t parameter_count() const {
        return kernel.numel() + (bias ? bias->numel() : 0);
    }
    void validate() const;
};

enum class NormKind { layer, group };
enum class Activation { silu, sigmoid, softmax_channels };

Tensor conv2d(const Tensor& x, const ConvWeights& w);

// layer: statistics over the feature axis (channels for BCHW, last axis for
// rank-2/3) per remaining index; group: statistics over (C/groups, H, W) per
// (batch, group), rank-4 only. Output has zero mean and unit variance per
// normalization group before the gamma/beta affine map.
Tensor normalize(const Tensor& x, NormKind kind, std::int64_t num_groups,
                 const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor activate(const Tensor& x, Activation kind);

Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest_2x(const Tensor& x);
Tensor subsample_2x(const Tensor& x);  // keeps every second row/column

Tensor concat_channels(std::span<const Tensor> xs);
Tensor slice_channels(const Tensor& x, std::int64_t c_begin, std::int64_t c_end);

// x is (B, D) or (B, L, D); w is (D_out, D).
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

double sigmoid_scalar(double x);
double silu_scalar(double x);
double softplus_scalar(double x);

bool all_finite(const Tensor& t);
void require_finite(const Tensor& t, const char* what);

}  // namespace mmk
