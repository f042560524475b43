#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "lgf/error.hpp"
#include "lgf/gabor_bank.hpp"
#include "lgf/lgf_solver.hpp"
#include "lgf/ocn_layers.hpp"
#include "support.hpp"

using namespace lgf;
using namespace lgf::nn;
using lgf::test::random_matrix;

namespace {

Tensor4 random_tensor(std::mt19937_64& rng, Tensor4::Dims d) {
    std::normal_distribution<double> nd;
    Tensor4 t(d);
    for (double& v : t.values()) v = nd(rng);
    return t;
}

void fill_random(std::mt19937_64& rng, std::span<double> v) {
    std::normal_distribution<double> nd;
    for (double& x : v) x = nd(rng);
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d) / std::max({norm(a), norm(b), 1e-300});
}

// Central differences of f with respect to every entry of x (step 1e-5).
std::vector<double> numeric_grad(std::span<double> x, const std::function<double()>& f) {
    constexpr double h = 1e-5;
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

// L = ½ Σ r ⊙ y², so ∂L/∂y = r ⊙ y.
double weighted_loss(const Tensor4& y, const Tensor4& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += 0.5 * r.data()[i] * y.data()[i] * y.data()[i];
    return s;
}

Tensor4 weighted_loss_grad(const Tensor4& y, const Tensor4& r) {
    Tensor4 g(y.dims());
    for (std::size_t i = 0; i < y.size(); ++i) g.data()[i] = r.data()[i] * y.data()[i];
    return g;
}

OcnLayer random_ocn(std::mt19937_64& rng, std::size_t c_out, std::size_t c_in, std::size_t u, std::size_t w) {
    LearnedFilter l(c_out, c_in, u, w);
    fill_random(rng, l.weights);
    Modulator m = constant_modulator(u, w);
    fill_random(rng, m.stack);
    return OcnLayer(std::move(l), std::move(m));
}

// Direct nested-loop OCN forward.
Tensor4 oracle_ocn_forward(const OcnLayer& layer, const Tensor4& in) {
    const LearnedFilter& l = layer.learned;
    const std::size_t uo = layer.modulator.n_orient, w = l.width;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(w / 2);
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(in.dim(2)), wd = static_cast<std::ptrdiff_t>(in.dim(3));
    Tensor4 out({in.dim(0), l.c_out * uo, in.dim(2), in.dim(3)});
    for (std::size_t b = 0; b < in.dim(0); ++b)
        for (std::size_t i = 0; i < l.c_out; ++i)
            for (std::size_t k = 0; k < uo; ++k)
                for (std::ptrdiff_t y = 0; y < h; ++y)
                    for (std::ptrdiff_t x = 0; x < wd; ++x) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < l.c_in; ++c)
                            for (std::size_t n = 0; n < l.n_orient; ++n)
                                for (std::size_t ky = 0; ky < w; ++ky)
                                    for (std::size_t kx = 0; kx < w; ++kx) {
                                        const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
                                        const std::ptrdiff_t sx = x + static_cast<std::ptrdiff_t>(kx) - pad;
                                        if (sy < 0 || sx < 0 || sy >= h || sx >= wd) continue;
                                        s += in(b, c * l.n_orient + n, sy, sx) * l.at(i, c, n, ky, kx) *
                                             layer.modulator.stack[(k * w + ky) * w + kx];
                                    }
                        out(b, i * uo + k, y, x) = s;
                    }
    return out;
}

FilterMatrix five_degree_bank() { return build_filter_matrix(GaborBankSpec{}, 1, angle_lattice(5.0)); }

LandmarkBank perfect_bank(const FilterMatrix& fm) {
    const std::size_t n = fm.x.cols();
    return LandmarkBank{fm.x, Matrix::identity(n), fm.spec, fm.scale_index, fm.angles};
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

} // namespace

TEST_CASE("Tensor4") {
    Tensor4 t({2, 3, 4, 5});
    CHECK(t.size() == 120);
    t(1, 2, 3, 4) = 7.0;
    CHECK(t.values().back() == 7.0);
    CHECK(t.plane(1, 2).size() == 20);
    CHECK(t.plane(1, 2).back() == 7.0);
    CHECK_THROWS_AS(Tensor4({1, 1, 2, 2}, std::vector<double>(3)), InvalidArgument);
    CHECK_THROWS_AS(Tensor4({1, 1, 1, 1}, std::vector<double>{std::nan("")}), InvalidArgument);
}

TEST_CASE("build_modulator") {
    const FilterMatrix fm = five_degree_bank();
    const LandmarkBank bank = perfect_bank(fm);

    SUBCASE("single orientation is the normalized zero-degree filter") {
        const Modulator m = build_modulator(bank, 1, 1, 5);
        REQUIRE(m.stack.size() == 25);
        const Kernel2D k = gabor_kernel_at(fm.spec, 0.0, 1);
        const double peak = max_abs(k.values);
        for (std::size_t i = 0; i < 25; ++i) CHECK(m.stack[i] == doctest::Approx(k.values[i] / peak).epsilon(1e-12));
        CHECK(max_abs(m.stack) == doctest::Approx(1.0));
    }
    SUBCASE("exact reconstruction gives the normalized Gabor kernels") {
        const Modulator m = build_modulator(bank, 4, 1, 5);
        for (std::size_t u = 0; u < 4; ++u) {
            const Kernel2D k = gabor_kernel_at(fm.spec, 45.0 * u, 1);
            const double peak = max_abs(k.values);
            const auto s = m.slice(u);
            for (std::size_t i = 0; i < 25; ++i) CHECK(std::fabs(s[i] - k.values[i] / peak) < 1e-8);
        }
    }
    SUBCASE("nearest angle picks the matching columns") {
        // Scale every column differently so the choice is visible after normalization.
        LandmarkBank scaled = bank;
        for (std::size_t j = 0; j < scaled.coefficients.cols(); ++j) scaled.coefficients(j, j) = 1.0 + j;
        const Modulator m = build_modulator(scaled, 4, 1, 5);
        const Modulator ref = build_modulator(bank, 4, 1, 5);
        for (std::size_t i = 0; i < m.stack.size(); ++i) // normalization removes the per-column scale
            CHECK(std::fabs(m.stack[i] - ref.stack[i]) < 1e-14);
        const Matrix rec = scaled.reconstruction();
        for (std::size_t u = 0; u < 4; ++u) {
            const std::size_t col = 9 * u; // 0, 45, 90, 135 degrees on the 5-degree lattice
            double peak = 0.0;
            for (std::size_t r = 0; r < 25; ++r) peak = std::max(peak, std::fabs(rec(r, col)));
            for (std::size_t r = 0; r < 25; ++r) CHECK(m.slice(u)[r] == doctest::Approx(rec(r, col) / peak));
        }
    }
    SUBCASE("circular distance and ties") {
        GaborBankSpec spec;
        const FilterMatrix sparse = build_filter_matrix(spec, 1, std::vector<double>{10.0, 100.0, 350.0});
        const LandmarkBank b = perfect_bank(sparse);
        // target 0: 350 is 10 away, as is 10; the lower column index wins
        const Modulator m = build_modulator(b, 2, 1, 5);
        const Kernel2D k10 = gabor_kernel_at(spec, 10.0, 1);
        const Kernel2D k100 = gabor_kernel_at(spec, 100.0, 1);
        CHECK(m.slice(0)[3] == doctest::Approx(k10.values[3] / max_abs(k10.values)));
        CHECK(m.slice(1)[3] == doctest::Approx(k100.values[3] / max_abs(k100.values)));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(build_modulator(bank, 4, 1, 3), InvalidArgument);
        CHECK_THROWS_AS(build_modulator(bank, 4, 2, 5), InvalidArgument);
        CHECK_THROWS_AS(build_modulator(bank, 0, 1, 5), InvalidArgument);
        LandmarkBank empty = bank;
        empty.coefficients = Matrix();
        empty.angles.clear();
        CHECK_THROWS_AS(build_modulator(empty, 4, 1, 5), InvalidArgument);
        LandmarkBank zero = bank;
        zero.coefficients = Matrix(bank.coefficients.rows(), bank.coefficients.cols());
        CHECK_THROWS_AS(build_modulator(zero, 4, 1, 5), NumericalError);
    }
}

TEST_CASE("modulate") {
    std::mt19937_64 rng(1);
    SUBCASE("all-ones modulator replicates the learned weights") {
        LearnedFilter l(3, 2, 2, 3);
        fill_random(rng, l.weights);
        const OcnLayer layer(l, constant_modulator(2, 3));
        const ModulatedFilters f = modulate(layer);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t u = 0; u < 2; ++u)
                for (std::size_t c = 0; c < 2; ++c)
                    for (std::size_t n = 0; n < 2; ++n)
                        for (std::size_t y = 0; y < 3; ++y)
                            for (std::size_t x = 0; x < 3; ++x) CHECK(f.at(i, u, c, n, y, x) == l.at(i, c, n, y, x));
    }
    SUBCASE("zero learned weights") {
        OcnLayer layer = random_ocn(rng, 2, 2, 3, 3);
        std::ranges::fill(layer.learned.weights, 0.0);
        for (double v : modulate(layer).values) CHECK(v == 0.0);
    }
    SUBCASE("elementwise product oracle, U = 2") {
        const OcnLayer layer = random_ocn(rng, 3, 2, 2, 5);
        const ModulatedFilters f = modulate(layer);
        REQUIRE(f.values.size() == 3 * 2 * 2 * 2 * 25);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t u = 0; u < 2; ++u)
                for (std::size_t c = 0; c < 2; ++c)
                    for (std::size_t n = 0; n < 2; ++n)
                        for (std::size_t y = 0; y < 5; ++y)
                            for (std::size_t x = 0; x < 5; ++x)
                                CHECK(f.at(i, u, c, n, y, x) ==
                                      layer.learned.at(i, c, n, y, x) * layer.modulator.stack[(u * 5 + y) * 5 + x]);
    }
    SUBCASE("mismatched modulator") {
        CHECK_THROWS_AS(OcnLayer(LearnedFilter(2, 2, 3, 3), constant_modulator(3, 5)), InvalidArgument);
        CHECK_THROWS_AS(LearnedFilter(2, 2, 3, 4), InvalidArgument);
    }
}

TEST_CASE("ocn_forward") {
    std::mt19937_64 rng(2);
    SUBCASE("identity 1x1 filter") {
        OcnLayer layer(LearnedFilter(1, 1, 1, 1, 1.0), constant_modulator(1, 1));
        const Tensor4 in = random_tensor(rng, {2, 1, 6, 7});
        CHECK(ocn_forward(layer, in) == in);
    }
    SUBCASE("zero input") {
        OcnLayer layer = random_ocn(rng, 2, 1, 3, 3);
        const Tensor4 out = ocn_forward(layer, Tensor4({1, 3, 5, 5}));
        for (double v : out.values()) CHECK(v == 0.0);
    }
    SUBCASE("nested-loop oracle") {
        for (std::size_t w : {1u, 3u, 5u, 7u}) {
            OcnLayer layer = random_ocn(rng, 2, 2, 2, w);
            const Tensor4 in = random_tensor(rng, {2, 4, 5, 5});
            const Tensor4 out = ocn_forward(layer, in);
            REQUIRE(out.dims() == Tensor4::Dims{2, 4, 5, 5});
            const Tensor4 ref = oracle_ocn_forward(layer, in);
            CHECK(rel_error(out.values(), ref.values()) < 1e-13);
        }
        OcnLayer wide = random_ocn(rng, 3, 2, 4, 3);
        wide.modulator = constant_modulator(3, 3);
        fill_random(rng, wide.modulator.stack);
        const Tensor4 in = random_tensor(rng, {1, 8, 6, 9});
        CHECK(rel_error(ocn_forward(wide, in).values(), oracle_ocn_forward(wide, in).values()) < 1e-13);
    }
    SUBCASE("linear in the learned weights") {
        OcnLayer a = random_ocn(rng, 2, 2, 3, 3);
        OcnLayer b = a;
        fill_random(rng, b.learned.weights);
        OcnLayer mix = a;
        for (std::size_t i = 0; i < mix.learned.size(); ++i)
            mix.learned.weights[i] = 0.7 * a.learned.weights[i] - 1.9 * b.learned.weights[i];
        const Tensor4 in = random_tensor(rng, {2, 6, 7, 7});
        const Tensor4 ya = ocn_forward(a, in), yb = ocn_forward(b, in), ym = ocn_forward(mix, in);
        std::vector<double> combo(ya.size());
        for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = 0.7 * ya.data()[i] - 1.9 * yb.data()[i];
        CHECK(rel_error(ym.values(), combo) < 1e-13);
    }
    SUBCASE("channel mismatch") {
        OcnLayer layer = random_ocn(rng, 2, 2, 3, 3);
        CHECK_THROWS_AS(ocn_forward(layer, Tensor4({1, 5, 4, 4})), InvalidArgument);
    }
}

TEST_CASE("ocn_backward") {
    std::mt19937_64 rng(3);
    SUBCASE("zero upstream gradient") {
        OcnLayer layer = random_ocn(rng, 2, 1, 2, 3);
        const Tensor4 out = ocn_forward(layer, random_tensor(rng, {1, 2, 5, 5}));
        const OcnGrads g = ocn_backward(layer, Tensor4(out.dims()));
        for (double v : g.input.values()) CHECK(v == 0.0);
        for (double v : g.learned.weights) CHECK(v == 0.0);
    }
    SUBCASE("missing forward") {
        OcnLayer layer = random_ocn(rng, 2, 1, 2, 3);
        CHECK_THROWS_AS(ocn_backward(layer, Tensor4({1, 4, 5, 5})), InvalidArgument);
        ocn_forward(layer, Tensor4({1, 2, 5, 5}));
        CHECK_THROWS_AS(ocn_backward(layer, Tensor4({1, 3, 5, 5})), InvalidArgument);
        CHECK_THROWS_AS(ocn_backward(layer, Tensor4({1, 4, 4, 5})), InvalidArgument);
    }
    SUBCASE("U = 1 with unit modulator is plain convolution") {
        OcnLayer layer(LearnedFilter(3, 2, 1, 5), constant_modulator(1, 5));
        fill_random(rng, layer.learned.weights);
        Conv2d conv(2, 3, 5);
        conv.weights = layer.learned.weights;
        const Tensor4 in = random_tensor(rng, {2, 2, 6, 6});
        const Tensor4 a = ocn_forward(layer, in);
        const Tensor4 b = conv_forward(conv, in);
        CHECK(a == b);
        const Tensor4 go = random_tensor(rng, a.dims());
        const OcnGrads ga = ocn_backward(layer, go);
        const ConvGrads gb = conv_backward(conv, go);
        CHECK(ga.input == gb.input);
        CHECK(ga.learned.weights == gb.weights);
    }
    SUBCASE("two paths: fold of plain conv backprop through the modulation") {
        for (std::size_t u : {1u, 2u, 4u}) {
            OcnLayer layer = random_ocn(rng, 2, 2, u, 3);
            const Tensor4 in = random_tensor(rng, {2, 2 * u, 6, 6});
            const Tensor4 out = ocn_forward(layer, in);
            const Tensor4 go = random_tensor(rng, out.dims());
            const OcnGrads g = ocn_backward(layer, go);

            const ModulatedFilters f = modulate(layer);
            std::vector<double> grad_mod(f.values.size(), 0.0);
            const Tensor4 gin = conv2d_backward(in, f.values, 3, go, grad_mod);
            CHECK(rel_error(gin.values(), g.input.values()) < 1e-12);
            LearnedFilter folded(2, 2, u, 3);
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t k = 0; k < u; ++k)
                    for (std::size_t c = 0; c < 2; ++c)
                        for (std::size_t n = 0; n < u; ++n)
                            for (std::size_t y = 0; y < 3; ++y)
                                for (std::size_t x = 0; x < 3; ++x) {
                                    const std::size_t idx = ((((i * u + k) * 2 + c) * u + n) * 3 + y) * 3 + x;
                                    folded.at(i, c, n, y, x) += grad_mod[idx] * layer.modulator.stack[(k * 3 + y) * 3 + x];
                                }
            for (std::size_t t = 0; t < folded.size(); ++t)
                CHECK(std::fabs(folded.weights[t] - g.learned.weights[t]) <= 1e-12 * std::max(1.0, std::fabs(folded.weights[t])));
        }
    }
    SUBCASE("finite differences") {
        const std::size_t sizes[] = {3, 5, 7};
        const std::size_t orients[] = {1, 2, 4};
        for (int trial = 0; trial < 6; ++trial) {
            const std::size_t w = sizes[trial % 3], u = orients[(trial / 2) % 3];
            OcnLayer layer = random_ocn(rng, 2, 1 + trial % 2, u, w);
            if (trial == 5) {
                layer.modulator = constant_modulator(u + 1, w);
                fill_random(rng, layer.modulator.stack);
            }
            Tensor4 in = random_tensor(rng, {2, layer.in_channels(), 6, 5});
            const Tensor4 r = random_tensor(rng, {2, layer.out_channels(), 6, 5});
            const Tensor4 out = ocn_forward(layer, in);
            const OcnGrads g = ocn_backward(layer, weighted_loss_grad(out, r));
            OcnLayer probe = layer;
            auto loss = [&] { return weighted_loss(ocn_forward(probe, in), r); };
            CHECK(rel_error(g.learned.weights, numeric_grad(probe.learned.weights, loss)) < 1e-4);
            CHECK(rel_error(g.input.values(), numeric_grad(in.values(), loss)) < 1e-4);
        }
    }
}

TEST_CASE("sgd_step") {
    std::mt19937_64 rng(4);
    OcnLayer layer = random_ocn(rng, 2, 2, 2, 3);
    const auto w0 = layer.learned.weights;
    const auto lg0 = layer.modulator.stack;
    sgd_step(layer, LearnedFilter(2, 2, 2, 3), 0.1, 0.0);
    CHECK(layer.learned.weights == w0);

    LearnedFilter g(2, 2, 2, 3);
    fill_random(rng, g.weights);
    sgd_step(layer, g, 1.0, 0.0);
    for (std::size_t i = 0; i < w0.size(); ++i) CHECK(layer.learned.weights[i] == w0[i] - g.weights[i]);

    layer.learned.weights = w0;
    sgd_step(layer, g, 0.001, 0.00005);
    for (std::size_t i = 0; i < w0.size(); ++i)
        CHECK(layer.learned.weights[i] == doctest::Approx(w0[i] - 0.001 * (g.weights[i] + 0.00005 * w0[i])).epsilon(1e-15));
    CHECK(layer.modulator.stack == lg0);

    CHECK_THROWS_AS(sgd_step(layer, LearnedFilter(2, 2, 2, 5), 0.1, 0.0), InvalidArgument);
    CHECK_THROWS_AS(sgd_step(layer, g, 0.0, 0.0), InvalidArgument);
    CHECK_THROWS_AS(sgd_step(layer, g, 0.1, -1.0), InvalidArgument);
}

TEST_CASE("parameter count does not depend on the orientation count") {
    const OcnLayer two(LearnedFilter(10, 20, 4, 3), constant_modulator(2, 3));
    const OcnLayer seven(LearnedFilter(10, 20, 4, 3), constant_modulator(7, 3));
    CHECK(two.param_count() == 10 * 20 * 4 * 9);
    CHECK(seven.param_count() == two.param_count());
    CHECK(two.out_channels() == 20);
    CHECK(seven.out_channels() == 70);
    CHECK(modulate(seven).values.size() == 7 * seven.param_count());
}

TEST_CASE("plain conv gradients") {
    std::mt19937_64 rng(6);
    for (std::size_t k : {1u, 3u, 5u}) {
        Conv2d conv(2, 3, k);
        fill_random(rng, conv.weights);
        Tensor4 in = random_tensor(rng, {2, 2, 5, 6});
        const Tensor4 r = random_tensor(rng, {2, 3, 5, 6});
        const Tensor4 out = conv_forward(conv, in);
        const ConvGrads g = conv_backward(conv, weighted_loss_grad(out, r));
        Conv2d probe = conv;
        auto loss = [&] { return weighted_loss(conv_forward(probe, in), r); };
        CHECK(rel_error(g.weights, numeric_grad(probe.weights, loss)) < 1e-6);
        CHECK(rel_error(g.input.values(), numeric_grad(in.values(), loss)) < 1e-6);
    }
    Conv2d conv(2, 3, 3);
    CHECK_THROWS_AS(conv_forward(conv, Tensor4({1, 3, 4, 4})), InvalidArgument);
    CHECK_THROWS_AS(conv_backward(conv, Tensor4({1, 3, 4, 4})), InvalidArgument);
    CHECK_THROWS_AS(Conv2d(2, 3, 2), InvalidArgument);
}

TEST_CASE("relu") {
    const Tensor4 x({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
    CHECK(relu_forward(x) == Tensor4({1, 1, 1, 3}, {0.0, 0.0, 2.0}));
    const Tensor4 g({1, 1, 1, 3}, {5.0, 6.0, 7.0});
    CHECK(relu_backward(x, g) == Tensor4({1, 1, 1, 3}, {0.0, 0.0, 7.0}));
    CHECK_THROWS_AS(relu_backward(x, Tensor4({1, 1, 3, 1})), InvalidArgument);
}

TEST_CASE("maxpool2") {
    SUBCASE("routes to the maximum") {
        const Tensor4 x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
        const PoolResult p = maxpool2_forward(x);
        CHECK(p.output.size() == 1);
        CHECK(p.output.data()[0] == 4.0);
        const Tensor4 g = maxpool2_backward(x.dims(), p.argmax, Tensor4({1, 1, 1, 1}, {2.5}));
        CHECK(g == Tensor4({1, 1, 2, 2}, {0.0, 0.0, 0.0, 2.5}));
    }
    SUBCASE("odd sizes floor") {
        std::mt19937_64 rng(7);
        const Tensor4 x = random_tensor(rng, {2, 3, 7, 5});
        const PoolResult p = maxpool2_forward(x);
        CHECK(p.output.dims() == Tensor4::Dims{2, 3, 3, 2});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < 3; ++y)
                    for (std::size_t xx = 0; xx < 2; ++xx) {
                        const double m = std::max({x(b, c, 2 * y, 2 * xx), x(b, c, 2 * y, 2 * xx + 1),
                                                   x(b, c, 2 * y + 1, 2 * xx), x(b, c, 2 * y + 1, 2 * xx + 1)});
                        CHECK(p.output(b, c, y, xx) == m);
                    }
    }
    SUBCASE("finite differences") {
        std::mt19937_64 rng(8);
        for (int trial = 0; trial < 5; ++trial) {
            Tensor4 x = random_tensor(rng, {2, 2, 6, 5});
            const Tensor4 r = random_tensor(rng, {2, 2, 3, 2});
            const PoolResult p = maxpool2_forward(x);
            const Tensor4 g = maxpool2_backward(x.dims(), p.argmax, weighted_loss_grad(p.output, r));
            auto loss = [&] { return weighted_loss(maxpool2_forward(x).output, r); };
            CHECK(rel_error(g.values(), numeric_grad(x.values(), loss)) < 1e-6);
        }
    }
    SUBCASE("too small") { CHECK_THROWS_AS(maxpool2_forward(Tensor4({1, 1, 1, 4})), InvalidArgument); }
}

TEST_CASE("orientation pooling and replication") {
    std::mt19937_64 rng(9);
    const Tensor4 x = random_tensor(rng, {2, 6, 3, 3});
    const PoolResult p = orientation_maxpool_forward(x, 3);
    REQUIRE(p.output.dims() == Tensor4::Dims{2, 2, 3, 3});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t g = 0; g < 2; ++g)
            for (std::size_t y = 0; y < 3; ++y)
                for (std::size_t xx = 0; xx < 3; ++xx)
                    CHECK(p.output(b, g, y, xx) ==
                          std::max({x(b, 3 * g, y, xx), x(b, 3 * g + 1, y, xx), x(b, 3 * g + 2, y, xx)}));
    Tensor4 xv = x;
    const Tensor4 r = random_tensor(rng, p.output.dims());
    const Tensor4 g = maxpool2_backward(x.dims(), p.argmax, weighted_loss_grad(p.output, r));
    auto loss = [&] { return weighted_loss(orientation_maxpool_forward(xv, 3).output, r); };
    CHECK(rel_error(g.values(), numeric_grad(xv.values(), loss)) < 1e-6);
    CHECK_THROWS_AS(orientation_maxpool_forward(x, 4), InvalidArgument);

    const Tensor4 img = random_tensor(rng, {2, 1, 4, 4});
    const Tensor4 rep = replicate_orientations(img, 4);
    REQUIRE(rep.dims() == Tensor4::Dims{2, 4, 4, 4});
    for (std::size_t u = 0; u < 4; ++u) CHECK(std::ranges::equal(rep.plane(1, u), img.plane(1, 0)));
    const Tensor4 back = replicate_orientations_backward(rep, 4);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data()[i] == doctest::Approx(4.0 * img.data()[i]));
}

TEST_CASE("linear") {
    std::mt19937_64 rng(10);
    Linear lin(7, 4);
    lin.weights = random_matrix(rng, 4, 7);
    fill_random(rng, lin.bias);
    Matrix x = random_matrix(rng, 3, 7);
    const Matrix y = linear_forward(lin, x);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t o = 0; o < 4; ++o) {
            double s = lin.bias[o];
            for (std::size_t i = 0; i < 7; ++i) s += lin.weights(o, i) * x(b, i);
            CHECK(y(b, o) == doctest::Approx(s).epsilon(1e-14));
        }
    const Matrix r = random_matrix(rng, 3, 4);
    auto loss_of = [&](const Matrix& out) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += 0.5 * r.data()[i] * out.data()[i] * out.data()[i];
        return s;
    };
    Matrix go(3, 4);
    for (std::size_t i = 0; i < go.size(); ++i) go.data()[i] = r.data()[i] * y.data()[i];
    const LinearGrads g = linear_backward(lin, x, go);
    Linear probe = lin;
    auto loss = [&] { return loss_of(linear_forward(probe, x)); };
    CHECK(rel_error(g.weights.values(), numeric_grad(probe.weights.values(), loss)) < 1e-6);
    CHECK(rel_error(g.bias, numeric_grad(probe.bias, loss)) < 1e-6);
    CHECK(rel_error(g.input.values(), numeric_grad(x.values(), loss)) < 1e-6);
    CHECK(lin.param_count() == 32);
    CHECK_THROWS_AS(linear_forward(lin, Matrix(3, 6)), InvalidArgument);
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(11);
    const Matrix x(50, 40, 1.0);
    const DropoutResult d = dropout_forward(x, 0.5, rng);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK((d.mask[i] == 0.0 || d.mask[i] == 2.0));
        dropped += d.mask[i] == 0.0;
        CHECK(d.output.data()[i] == d.mask[i]);
    }
    CHECK(dropped > 900);
    CHECK(dropped < 1100);
    const Matrix g = dropout_backward(d.mask, Matrix(50, 40, 3.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g.data()[i] == 3.0 * d.mask[i]);
    std::mt19937_64 a(1), b(1);
    CHECK(dropout_forward(x, 0.3, a).mask == dropout_forward(x, 0.3, b).mask);
    CHECK(dropout_forward(x, 0.0, rng).output == x);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng), InvalidArgument);
}

TEST_CASE("softmax cross-entropy") {
    std::mt19937_64 rng(12);
    SUBCASE("uniform logits") {
        const LossResult r = softmax_cross_entropy(Matrix(2, 10, 3.0), std::vector<int>{1, 7});
        CHECK(r.loss == doctest::Approx(std::log(10.0)));
        CHECK(r.grad(0, 1) == doctest::Approx((0.1 - 1.0) / 2));
        CHECK(r.grad(0, 2) == doctest::Approx(0.1 / 2));
    }
    SUBCASE("large logits stay finite") {
        const Matrix logits{{1000.0, 0.0, -1000.0}};
        const LossResult r = softmax_cross_entropy(logits, std::vector<int>{2});
        CHECK(r.loss == doctest::Approx(2000.0));
        CHECK(r.grad.all_finite());
    }
    SUBCASE("finite differences") {
        for (int trial = 0; trial < 20; ++trial) {
            Matrix logits = random_matrix(rng, 4, 10, 2.0);
            std::vector<int> labels{trial % 10, 3, 9, 0};
            const LossResult r = softmax_cross_entropy(logits, labels);
            auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
            CHECK(rel_error(r.grad.values(), numeric_grad(logits.values(), loss)) < 1e-6);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(softmax_cross_entropy(Matrix(2, 10), std::vector<int>{1}), InvalidArgument);
        CHECK_THROWS_AS(softmax_cross_entropy(Matrix(1, 10), std::vector<int>{10}), InvalidArgument);
        CHECK_THROWS_AS(softmax_cross_entropy(Matrix(1, 10), std::vector<int>{-1}), InvalidArgument);
    }
}

TEST_CASE("flatten round trip") {
    std::mt19937_64 rng(13);
    const Tensor4 t = random_tensor(rng, {3, 2, 2, 4});
    const Matrix m = flatten(t);
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 16);
    CHECK(m(1, 5) == t(1, 0, 1, 1));
    CHECK(unflatten(m, t.dims()) == t);
    CHECK_THROWS_AS(unflatten(m, Tensor4::Dims{3, 2, 2, 3}), InvalidArgument);
}
