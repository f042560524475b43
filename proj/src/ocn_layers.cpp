#include "lgf/ocn_layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lgf/error.hpp"
#include "lgf/rng.hpp"
#include "lgf/simd.hpp"

namespace lgf::nn {

namespace {

using simd::Transpose;

std::string dims_str(const Tensor4::Dims& d) {
    std::ostringstream os;
    os << '(' << d[0] << ", " << d[1] << ", " << d[2] << ", " << d[3] << ')';
    return os.str();
}

// rows (c, ky, kx) × columns (y, x) of one batch item, zero outside the image.
void im2col(const double* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* cols) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* dst = cols + ((c * k + ky) * k + kx) * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    double* row = dst + y * w;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(row, row + w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * h + static_cast<std::size_t>(sy)) * w;
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        row[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[sx];
                    }
                }
            }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* img) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* src = cols + ((c * k + ky) * k + kx) * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* dst = img + (c * h + static_cast<std::size_t>(sy)) * w;
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += src[y * w + x];
                    }
                }
            }
}

void require_odd_kernel(std::size_t k) {
    if (k == 0 || k % 2 == 0) throw InvalidArgument("kernel size must be odd and positive");
}

double circular_distance(double a, double b) {
    const double d = std::fmod(std::fabs(a - b), 360.0);
    return std::min(d, 360.0 - d);
}

} // namespace

Tensor4::Tensor4(Dims dims, double fill) : dims_(dims), data_(dims[0] * dims[1] * dims[2] * dims[3], fill) {}

Tensor4::Tensor4(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims[0] * dims[1] * dims[2] * dims[3])
        throw InvalidArgument("Tensor4: data length does not match dims " + dims_str(dims));
    if (!all_finite()) throw InvalidArgument("Tensor4: non-finite entry");
}

std::span<double> Tensor4::plane(std::size_t a, std::size_t b) noexcept {
    const std::size_t n = dims_[2] * dims_[3];
    return {data_.data() + (a * dims_[1] + b) * n, n};
}

std::span<const double> Tensor4::plane(std::size_t a, std::size_t b) const noexcept {
    const std::size_t n = dims_[2] * dims_[3];
    return {data_.data() + (a * dims_[1] + b) * n, n};
}

bool Tensor4::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

LearnedFilter::LearnedFilter(std::size_t c_out_, std::size_t c_in_, std::size_t n_orient_, std::size_t width_, double fill)
    : c_out(c_out_), c_in(c_in_), n_orient(n_orient_), width(width_),
      weights(c_out_ * c_in_ * n_orient_ * width_ * width_, fill) {
    if (c_out == 0 || c_in == 0 || n_orient == 0) throw InvalidArgument("LearnedFilter: dims must be positive");
    require_odd_kernel(width);
}

bool LearnedFilter::same_shape(const LearnedFilter& o) const noexcept {
    return c_out == o.c_out && c_in == o.c_in && n_orient == o.n_orient && width == o.width &&
           weights.size() == o.weights.size();
}

Modulator build_modulator(const LandmarkBank& bank, std::size_t n_orient, std::uint32_t scale_index, std::size_t width) {
    if (n_orient == 0) throw InvalidArgument("build_modulator: n_orient must be positive");
    if (bank.coefficients.cols() == 0 || bank.landmarks.cols() == 0) throw InvalidArgument("build_modulator: empty bank");
    if (bank.spec.kernel_size != width || bank.landmarks.rows() != width * width)
        throw InvalidArgument("build_modulator: bank kernel size " + std::to_string(bank.spec.kernel_size) +
                              " does not match layer kernel size " + std::to_string(width));
    if (bank.scale_index != scale_index)
        throw InvalidArgument("build_modulator: bank holds scale " + std::to_string(bank.scale_index) + ", not " +
                              std::to_string(scale_index));
    if (bank.angles.size() != bank.coefficients.cols())
        throw InvalidArgument("build_modulator: one angle per coefficient column required");

    const Matrix rec = bank.reconstruction();
    Modulator mod{n_orient, width, std::vector<double>(n_orient * width * width)};
    for (std::size_t u = 0; u < n_orient; ++u) {
        const double target = 180.0 * static_cast<double>(u) / static_cast<double>(n_orient);
        std::size_t best = 0;
        for (std::size_t j = 1; j < bank.angles.size(); ++j)
            if (circular_distance(bank.angles[j], target) < circular_distance(bank.angles[best], target)) best = j;
        double peak = 0.0;
        for (std::size_t r = 0; r < rec.rows(); ++r) peak = std::max(peak, std::fabs(rec(r, best)));
        if (!(peak > 0.0) || !std::isfinite(peak))
            throw NumericalError("build_modulator: reconstructed filter at " + std::to_string(bank.angles[best]) +
                                 " degrees is zero");
        double* dst = mod.stack.data() + u * width * width;
        for (std::size_t r = 0; r < rec.rows(); ++r) dst[r] = rec(r, best) / peak;
    }
    return mod;
}

Modulator constant_modulator(std::size_t n_orient, std::size_t width, double value) {
    if (n_orient == 0) throw InvalidArgument("constant_modulator: n_orient must be positive");
    require_odd_kernel(width);
    return Modulator{n_orient, width, std::vector<double>(n_orient * width * width, value)};
}

OcnLayer::OcnLayer(LearnedFilter l, Modulator m) : learned(std::move(l)), modulator(std::move(m)) {
    if (modulator.n_orient == 0) throw InvalidArgument("OcnLayer: modulator has no orientations");
    if (modulator.width != learned.width || modulator.stack.size() != modulator.n_orient * modulator.width * modulator.width)
        throw InvalidArgument("OcnLayer: modulator kernel size does not match the learned filter");
}

ModulatedFilters modulate(const OcnLayer& layer) {
    const LearnedFilter& l = layer.learned;
    const Modulator& m = layer.modulator;
    const std::size_t w2 = l.width * l.width;
    const std::size_t per_i = l.c_in * l.n_orient; // slices per output filter
    ModulatedFilters f{l.c_out, m.n_orient, l.c_in, l.n_orient, l.width,
                       std::vector<double>(l.c_out * m.n_orient * per_i * w2)};
    const auto& k = simd::active();
    for (std::size_t i = 0; i < l.c_out; ++i)
        for (std::size_t u = 0; u < m.n_orient; ++u) {
            const double* lg = m.stack.data() + u * w2;
            for (std::size_t s = 0; s < per_i; ++s)
                k.multiply(l.weights.data() + (i * per_i + s) * w2, lg, f.values.data() + ((i * m.n_orient + u) * per_i + s) * w2,
                           w2);
        }
    return f;
}

Tensor4 conv2d(const Tensor4& input, std::span<const double> weights, std::size_t c_out, std::size_t kernel) {
    require_odd_kernel(kernel);
    const auto [batch, c_in, h, w] = input.dims();
    const std::size_t patch = c_in * kernel * kernel;
    if (weights.size() != c_out * patch)
        throw InvalidArgument("conv2d: weights do not match " + std::to_string(c_in) + " input channels");
    const std::size_t hw = h * w;
    Tensor4 out({batch, c_out, h, w});
    std::vector<double> cols(patch * hw);
    const auto& k = simd::active();
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(input.data() + b * c_in * hw, c_in, h, w, kernel, cols.data());
        k.gemm(Transpose::No, Transpose::No, c_out, hw, patch, 1.0, weights.data(), patch, cols.data(), hw,
               out.data() + b * c_out * hw, hw);
    }
    return out;
}

Tensor4 conv2d_backward(const Tensor4& input, std::span<const double> weights, std::size_t kernel,
                        const Tensor4& grad_out, std::span<double> grad_weights) {
    require_odd_kernel(kernel);
    const auto [batch, c_in, h, w] = input.dims();
    const std::size_t patch = c_in * kernel * kernel;
    const std::size_t c_out = grad_out.dim(1);
    if (grad_out.dim(0) != batch || grad_out.dim(2) != h || grad_out.dim(3) != w || weights.size() != c_out * patch)
        throw InvalidArgument("conv2d_backward: gradient shape " + dims_str(grad_out.dims()) +
                              " does not match the forward pass");
    if (grad_weights.size() != weights.size()) throw InvalidArgument("conv2d_backward: weight gradient size mismatch");
    const std::size_t hw = h * w;
    Tensor4 grad_in(input.dims());
    std::vector<double> cols(patch * hw), gcols(patch * hw);
    const auto& k = simd::active();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* go = grad_out.data() + b * c_out * hw;
        im2col(input.data() + b * c_in * hw, c_in, h, w, kernel, cols.data());
        k.gemm(Transpose::No, Transpose::Yes, c_out, patch, hw, 1.0, go, hw, cols.data(), hw, grad_weights.data(), patch);
        std::fill(gcols.begin(), gcols.end(), 0.0);
        k.gemm(Transpose::Yes, Transpose::No, patch, hw, c_out, 1.0, weights.data(), patch, go, hw, gcols.data(), hw);
        col2im_add(gcols.data(), c_in, h, w, kernel, grad_in.data() + b * c_in * hw);
    }
    return grad_in;
}

Tensor4 ocn_forward(OcnLayer& layer, const Tensor4& input) {
    if (input.dim(1) != layer.in_channels())
        throw InvalidArgument("ocn_forward: expected " + std::to_string(layer.in_channels()) + " input channels, got " +
                              std::to_string(input.dim(1)));
    const ModulatedFilters f = modulate(layer);
    Tensor4 out = conv2d(input, f.values, layer.out_channels(), layer.learned.width);
    layer.cached_input = input;
    return out;
}

OcnGrads ocn_backward(const OcnLayer& layer, const Tensor4& grad_out) {
    if (!layer.cached_input) throw InvalidArgument("ocn_backward: no cached input, run ocn_forward first");
    const Tensor4& input = *layer.cached_input;
    if (grad_out.dim(1) != layer.out_channels())
        throw InvalidArgument("ocn_backward: expected " + std::to_string(layer.out_channels()) + " gradient channels");
    const ModulatedFilters f = modulate(layer);
    std::vector<double> grad_mod(f.values.size(), 0.0);
    OcnGrads g;
    g.input = conv2d_backward(input, f.values, layer.learned.width, grad_out, grad_mod);

    const LearnedFilter& l = layer.learned;
    const std::size_t w2 = l.width * l.width;
    const std::size_t per_i = l.c_in * l.n_orient;
    const std::size_t n_out = layer.modulator.n_orient;
    g.learned = LearnedFilter(l.c_out, l.c_in, l.n_orient, l.width);
    for (std::size_t i = 0; i < l.c_out; ++i)
        for (std::size_t u = 0; u < n_out; ++u) {
            const double* lg = layer.modulator.stack.data() + u * w2;
            for (std::size_t s = 0; s < per_i; ++s) {
                const double* gm = grad_mod.data() + ((i * n_out + u) * per_i + s) * w2;
                double* dst = g.learned.weights.data() + (i * per_i + s) * w2;
                for (std::size_t t = 0; t < w2; ++t) dst[t] += gm[t] * lg[t];
            }
        }
    return g;
}

void sgd_step(OcnLayer& layer, const LearnedFilter& grad, double lr, double weight_decay) {
    if (!grad.same_shape(layer.learned)) throw InvalidArgument("sgd_step: gradient shape does not match the layer");
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw InvalidArgument("sgd_step: lr must be positive, weight_decay >= 0");
    auto& w = layer.learned.weights;
    for (std::size_t t = 0; t < w.size(); ++t) w[t] -= lr * (grad.weights[t] + weight_decay * w[t]);
}

Conv2d::Conv2d(std::size_t c_in_, std::size_t c_out_, std::size_t kernel_)
    : c_in(c_in_), c_out(c_out_), kernel(kernel_), weights(c_in_ * c_out_ * kernel_ * kernel_, 0.0) {
    if (c_in == 0 || c_out == 0) throw InvalidArgument("Conv2d: channel counts must be positive");
    require_odd_kernel(kernel);
}

Tensor4 conv_forward(Conv2d& layer, const Tensor4& input) {
    if (input.dim(1) != layer.c_in)
        throw InvalidArgument("conv_forward: expected " + std::to_string(layer.c_in) + " input channels, got " +
                              std::to_string(input.dim(1)));
    Tensor4 out = conv2d(input, layer.weights, layer.c_out, layer.kernel);
    layer.cached_input = input;
    return out;
}

ConvGrads conv_backward(const Conv2d& layer, const Tensor4& grad_out) {
    if (!layer.cached_input) throw InvalidArgument("conv_backward: no cached input, run conv_forward first");
    ConvGrads g;
    g.weights.assign(layer.weights.size(), 0.0);
    g.input = conv2d_backward(*layer.cached_input, layer.weights, layer.kernel, grad_out, g.weights);
    return g;
}

Tensor4 relu_forward(const Tensor4& x) {
    Tensor4 y(x.dims());
    auto src = x.values();
    auto dst = y.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    return y;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out) {
    if (x.dims() != grad_out.dims()) throw InvalidArgument("relu_backward: shape mismatch");
    Tensor4 g(x.dims());
    auto src = x.values();
    auto go = grad_out.values();
    auto dst = g.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? go[i] : 0.0;
    return g;
}

PoolResult maxpool2_forward(const Tensor4& x) {
    const auto [b, c, h, w] = x.dims();
    if (h < 2 || w < 2) throw InvalidArgument("maxpool2: spatial dims must be at least 2, got " + dims_str(x.dims()));
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult r{Tensor4({b, c, oh, ow}), std::vector<std::size_t>(b * c * oh * ow)};
    std::size_t o = 0;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (n * c + ch) * h * w;
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
                    std::size_t best = base + 2 * y * w + 2 * xx;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = base + (2 * y + dy) * w + 2 * xx + dx;
                            if (x.data()[idx] > x.data()[best]) best = idx;
                        }
                    r.argmax[o] = best;
                    r.output.data()[o] = x.data()[best];
                }
        }
    return r;
}

Tensor4 maxpool2_backward(const Tensor4::Dims& input_dims, std::span<const std::size_t> argmax, const Tensor4& grad_out) {
    if (argmax.size() != grad_out.size()) throw InvalidArgument("pool backward: argmax does not match the gradient");
    Tensor4 g(input_dims);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        if (argmax[o] >= g.size()) throw InvalidArgument("pool backward: argmax index out of range");
        g.data()[argmax[o]] += grad_out.data()[o];
    }
    return g;
}

PoolResult orientation_maxpool_forward(const Tensor4& x, std::size_t n_orient) {
    const auto [b, ch, h, w] = x.dims();
    if (n_orient == 0 || ch % n_orient != 0)
        throw InvalidArgument("orientation pool: " + std::to_string(ch) + " channels are not a multiple of " +
                              std::to_string(n_orient));
    const std::size_t groups = ch / n_orient, hw = h * w;
    PoolResult r{Tensor4({b, groups, h, w}), std::vector<std::size_t>(b * groups * hw)};
    std::size_t o = 0;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t p = 0; p < hw; ++p, ++o) {
                std::size_t best = (n * ch + g * n_orient) * hw + p;
                for (std::size_t u = 1; u < n_orient; ++u) {
                    const std::size_t idx = (n * ch + g * n_orient + u) * hw + p;
                    if (x.data()[idx] > x.data()[best]) best = idx;
                }
                r.argmax[o] = best;
                r.output.data()[o] = x.data()[best];
            }
    return r;
}

Tensor4 replicate_orientations(const Tensor4& x, std::size_t n_orient) {
    if (n_orient == 0) throw InvalidArgument("replicate_orientations: n_orient must be positive");
    const auto [b, c, h, w] = x.dims();
    Tensor4 y({b, c * n_orient, h, w});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const auto src = x.plane(n, ch);
            for (std::size_t u = 0; u < n_orient; ++u) std::ranges::copy(src, y.plane(n, ch * n_orient + u).begin());
        }
    return y;
}

Tensor4 replicate_orientations_backward(const Tensor4& grad_out, std::size_t n_orient) {
    const auto [b, cn, h, w] = grad_out.dims();
    if (n_orient == 0 || cn % n_orient != 0) throw InvalidArgument("replicate_orientations_backward: channel mismatch");
    Tensor4 g({b, cn / n_orient, h, w});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < cn / n_orient; ++ch) {
            auto dst = g.plane(n, ch);
            for (std::size_t u = 0; u < n_orient; ++u) {
                const auto src = grad_out.plane(n, ch * n_orient + u);
                for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += src[p];
            }
        }
    return g;
}

Linear::Linear(std::size_t in_, std::size_t out_) : in(in_), out(out_), weights(out_, in_), bias(out_, 0.0) {
    if (in == 0 || out == 0) throw InvalidArgument("Linear: sizes must be positive");
}

Matrix linear_forward(const Linear& layer, const Matrix& x) {
    if (x.cols() != layer.in)
        throw InvalidArgument("linear_forward: expected " + std::to_string(layer.in) + " features, got " +
                              std::to_string(x.cols()));
    Matrix y = matmul_nt(x, layer.weights);
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += layer.bias[c];
    return y;
}

LinearGrads linear_backward(const Linear& layer, const Matrix& x, const Matrix& grad_out) {
    if (x.cols() != layer.in || grad_out.cols() != layer.out || grad_out.rows() != x.rows())
        throw InvalidArgument("linear_backward: shape mismatch");
    LinearGrads g{matmul(grad_out, layer.weights), matmul_tn(grad_out, x), std::vector<double>(layer.out, 0.0)};
    for (std::size_t r = 0; r < grad_out.rows(); ++r)
        for (std::size_t c = 0; c < layer.out; ++c) g.bias[c] += grad_out(r, c);
    return g;
}

DropoutResult dropout_forward(const Matrix& x, double rate, std::mt19937_64& g) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
    const double keep = 1.0 / (1.0 - rate);
    DropoutResult r{x, std::vector<double>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.mask[i] = rng::unit(g) < rate ? 0.0 : keep;
        r.output.data()[i] *= r.mask[i];
    }
    return r;
}

Matrix dropout_backward(std::span<const double> mask, const Matrix& grad_out) {
    if (mask.size() != grad_out.size()) throw InvalidArgument("dropout_backward: mask size mismatch");
    Matrix g = grad_out;
    for (std::size_t i = 0; i < mask.size(); ++i) g.data()[i] *= mask[i];
    return g;
}

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows()) throw InvalidArgument("softmax_cross_entropy: one label per row required");
    if (logits.rows() == 0) throw InvalidArgument("softmax_cross_entropy: empty batch");
    const std::size_t classes = logits.cols();
    const double inv_batch = 1.0 / static_cast<double>(logits.rows());
    LossResult r{0.0, Matrix(logits.rows(), classes)};
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= classes)
            throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
        const auto row = logits.row(i);
        const double peak = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(row[c] - peak);
            r.grad(i, c) = e;
            sum += e;
        }
        r.loss += (std::log(sum) - (row[label] - peak)) * inv_batch;
        for (std::size_t c = 0; c < classes; ++c) r.grad(i, c) *= inv_batch / sum;
        r.grad(i, label) -= inv_batch;
    }
    return r;
}

Matrix flatten(const Tensor4& x) {
    Matrix m(x.dim(0), x.dim(1) * x.dim(2) * x.dim(3));
    std::ranges::copy(x.values(), m.data());
    return m;
}

Tensor4 unflatten(const Matrix& m, const Tensor4::Dims& dims) {
    if (m.rows() != dims[0] || m.cols() != dims[1] * dims[2] * dims[3]) throw InvalidArgument("unflatten: shape mismatch");
    Tensor4 t(dims);
    std::ranges::copy(m.values(), t.data());
    return t;
}

} // namespace lgf::nn
