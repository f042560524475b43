#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lgf/lgf_solver.hpp"
#include "lgf/matrix.hpp"

namespace lgf::nn {

/// Row-major 4-axis array; feature maps are (batch, channels, height, width).
class Tensor4 {
public:
    using Dims = std::array<std::size_t, 4>;

    Tensor4() = default;
    explicit Tensor4(Dims dims, double fill = 0.0);
    Tensor4(Dims dims, std::vector<double> data);

    const Dims& dims() const noexcept { return dims_; }
    std::size_t dim(std::size_t axis) const noexcept { return dims_[axis]; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
        return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
    }
    double operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
        return data_[((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    /// Contiguous (d2×d3) plane at (a, b).
    std::span<double> plane(std::size_t a, std::size_t b) noexcept;
    std::span<const double> plane(std::size_t a, std::size_t b) const noexcept;

    bool all_finite() const noexcept;
    friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
    Dims dims_{0, 0, 0, 0};
    std::vector<double> data_;
};

/// Learned filter C_{i,o}: (C_out, C_in, N', W, W).
struct LearnedFilter {
    std::size_t c_out = 0, c_in = 0, n_orient = 0, width = 0;
    std::vector<double> weights;

    LearnedFilter() = default;
    LearnedFilter(std::size_t c_out, std::size_t c_in, std::size_t n_orient, std::size_t width, double fill = 0.0);

    std::size_t size() const noexcept { return weights.size(); }
    double& at(std::size_t i, std::size_t c, std::size_t n, std::size_t y, std::size_t x) noexcept {
        return weights[(((i * c_in + c) * n_orient + n) * width + y) * width + x];
    }
    double at(std::size_t i, std::size_t c, std::size_t n, std::size_t y, std::size_t x) const noexcept {
        return weights[(((i * c_in + c) * n_orient + n) * width + y) * width + x];
    }
    bool same_shape(const LearnedFilter& o) const noexcept;
};

/// One W×W LGF slice per orientation.
struct Modulator {
    std::size_t n_orient = 0, width = 0;
    std::vector<double> stack;

    std::span<const double> slice(std::size_t u) const noexcept {
        return {stack.data() + u * width * width, width * width};
    }
};

/// Slice u is the bank column whose angle is circularly nearest to
/// u·180°/n_orient (lowest column wins ties), scaled to unit max |value|.
Modulator build_modulator(const LandmarkBank& bank, std::size_t n_orient, std::uint32_t scale_index, std::size_t width);
Modulator constant_modulator(std::size_t n_orient, std::size_t width, double value = 1.0);

/// Modulated filters (C_out, U, C_in, N', W, W); also the conv weight matrix
/// with C_out·U rows and C_in·N'·W² columns.
struct ModulatedFilters {
    std::size_t c_out = 0, n_out = 0, c_in = 0, n_orient = 0, width = 0;
    std::vector<double> values;

    double at(std::size_t i, std::size_t u, std::size_t c, std::size_t n, std::size_t y, std::size_t x) const noexcept {
        return values[((((i * n_out + u) * c_in + c) * n_orient + n) * width + y) * width + x];
    }
};

/// N' (learned.n_orient) counts input orientation channels and U
/// (modulator.n_orient) output orientations; networks chain them with N' = U.
struct OcnLayer {
    LearnedFilter learned;
    Modulator modulator;
    std::optional<Tensor4> cached_input;

    OcnLayer() = default;
    OcnLayer(LearnedFilter learned, Modulator modulator);

    std::size_t in_channels() const noexcept { return learned.c_in * learned.n_orient; }
    std::size_t out_channels() const noexcept { return learned.c_out * modulator.n_orient; }
    std::size_t param_count() const noexcept { return learned.size(); }
};

struct OcnGrads {
    Tensor4 input;
    LearnedFilter learned;
};

ModulatedFilters modulate(const OcnLayer& layer);
/// Input (batch, C_in·N', H, W) → output (batch, C_out·U, H, W); channel c·N'+n
/// in, i·U+k out. Stride 1, zero padding (W−1)/2, cross-correlation.
Tensor4 ocn_forward(OcnLayer& layer, const Tensor4& input);
OcnGrads ocn_backward(const OcnLayer& layer, const Tensor4& grad_out);
/// learned ← learned − lr·(grad + weight_decay·learned)
void sgd_step(OcnLayer& layer, const LearnedFilter& grad, double lr, double weight_decay);

// Plain convolution, no bias. Weights (C_out, C_in, K, K).
struct Conv2d {
    std::size_t c_in = 0, c_out = 0, kernel = 0;
    std::vector<double> weights;
    std::optional<Tensor4> cached_input;

    Conv2d() = default;
    Conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel);
    std::size_t param_count() const noexcept { return weights.size(); }
};

struct ConvGrads {
    Tensor4 input;
    std::vector<double> weights;
};

Tensor4 conv_forward(Conv2d& layer, const Tensor4& input);
ConvGrads conv_backward(const Conv2d& layer, const Tensor4& grad_out);

// Stateless cores shared by both conv layers. `weights` is (C_out)×(C_in·K²).
Tensor4 conv2d(const Tensor4& input, std::span<const double> weights, std::size_t c_out, std::size_t kernel);
/// Accumulates into grad_weights; returns the input gradient.
Tensor4 conv2d_backward(const Tensor4& input, std::span<const double> weights, std::size_t kernel,
                        const Tensor4& grad_out, std::span<double> grad_weights);

Tensor4 relu_forward(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out);

/// 2×2 max-pool, stride 2, floor on odd sizes. argmax holds flat input
/// indices, first maximum in row-major window order.
struct PoolResult {
    Tensor4 output;
    std::vector<std::size_t> argmax;
};
PoolResult maxpool2_forward(const Tensor4& x);
Tensor4 maxpool2_backward(const Tensor4::Dims& input_dims, std::span<const std::size_t> argmax, const Tensor4& grad_out);

/// Max over the U orientation channels of each group: (b, C·U, H, W) → (b, C, H, W).
PoolResult orientation_maxpool_forward(const Tensor4& x, std::size_t n_orient);
/// (b, C, H, W) → (b, C·N', H, W) with each channel repeated N' times.
Tensor4 replicate_orientations(const Tensor4& x, std::size_t n_orient);
Tensor4 replicate_orientations_backward(const Tensor4& grad_out, std::size_t n_orient);

struct Linear {
    std::size_t in = 0, out = 0;
    Matrix weights; // out×in
    std::vector<double> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out);
    std::size_t param_count() const noexcept { return weights.size() + bias.size(); }
};

struct LinearGrads {
    Matrix input;
    Matrix weights;
    std::vector<double> bias;
};

/// x is batch×in; returns batch×out.
Matrix linear_forward(const Linear& layer, const Matrix& x);
LinearGrads linear_backward(const Linear& layer, const Matrix& x, const Matrix& grad_out);

/// Inverted dropout: kept entries are scaled by 1/(1 − rate).
struct DropoutResult {
    Matrix output;
    std::vector<double> mask;
};
DropoutResult dropout_forward(const Matrix& x, double rate, std::mt19937_64& rng);
Matrix dropout_backward(std::span<const double> mask, const Matrix& grad_out);

/// Mean cross-entropy over the batch and its gradient wrt the logits.
struct LossResult {
    double loss = 0.0;
    Matrix grad;
};
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

Matrix flatten(const Tensor4& x);
Tensor4 unflatten(const Matrix& m, const Tensor4::Dims& dims);

} // namespace lgf::nn
