#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lgf/error.hpp"
#include "lgf/gabor_bank.hpp"
#include "lgf/linalg.hpp"

using namespace lgf;
namespace fs = std::filesystem;

namespace {

double sq_norm(const Kernel2D& k) {
    double s = 0.0;
    for (double v : k.values) s += v * v;
    return s;
}

fs::path temp_file(const char* name) { return fs::temp_directory_path() / (std::string("lgf_test_") + name); }

} // namespace

TEST_CASE("bank parameter validation") {
    GaborBankSpec s;
    CHECK_NOTHROW(s.validate());
    s.kernel_size = 4;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.kernel_size = 1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    s.n_orient = 73; // 73 * 5 > 360
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    CHECK_THROWS_AS(gabor_kernel(s, 36, 1), InvalidArgument);
    CHECK_THROWS_AS(gabor_kernel(s, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(gabor_kernel(s, 0, 2), InvalidArgument);
}

TEST_CASE("wave number law") {
    GaborBankSpec s;
    s.n_scale = 4;
    CHECK(s.wave_number_at(1) == doctest::Approx(M_PI / 2));
    CHECK(s.wave_number_at(3) == doctest::Approx(M_PI / 4));
    s.wave_number = 0.3;
    CHECK(s.wave_number_at(2) == 0.3);
}

TEST_CASE("kernel matches a direct complex evaluation at 30 degrees (W=7, v=1)") {
    // Real part of (k²/σ²)·exp(−k²|z|²/2σ²)·(exp(i k·z) − exp(−σ²/2)), k=π/2,
    // σ=2π, computed with complex arithmetic outside this code base.
    const double expected[49] = {
        0.035189664529170286, 0.014841947858670681, -0.038374097390587537, -0.033359512705874665, 0.024865510409300382, 0.038898643958281569, -0.0054645407198715915,
        0.033608489112309611, -0.019887468269582129, -0.052279651515693158, -1.4755831972835985e-10, 0.05227965122965629, 0.019887468009142567, -0.033608489335075362,
        0.0070166089301799128, -0.049946847803157481, -0.03192794767860533, 0.042834461878538496, 0.049273316077815051, -0.019057438569724246, -0.045184423904830018,
        -0.027845434701338077, -0.050342267506257136, 0.012654361454030401, 0.062499999832794501, 0.012654361454030401, -0.050342267506257136, -0.027845434701338077,
        -0.045184423904830018, -0.019057438569724246, 0.049273316077815051, 0.042834461878538496, -0.03192794767860533, -0.049946847803157481, 0.0070166089301799128,
        -0.033608489335075362, 0.019887468009142567, 0.05227965122965629, -1.4755831972835985e-10, -0.052279651515693158, -0.019887468269582129, 0.033608489112309611,
        -0.0054645407198715915, 0.038898643958281569, 0.024865510409300382, -0.033359512705874665, -0.038374097390587537, 0.014841947858670681, 0.035189664529170286};
    GaborBankSpec s;
    s.kernel_size = 7;
    const Kernel2D k = gabor_kernel_at(s, 30.0, 1);
    REQUIRE(k.values.size() == 49);
    for (int i = 0; i < 49; ++i) CHECK(k.values[i] == doctest::Approx(expected[i]).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("imaginary part is odd-symmetric") {
    GaborBankSpec s;
    s.part = GaborPart::Imaginary;
    const Kernel2D k = gabor_kernel_at(s, 20.0, 1);
    const std::size_t n = k.values.size();
    for (std::size_t i = 0; i < n; ++i) CHECK(k.values[i] == doctest::Approx(-k.values[n - 1 - i]));
}

TEST_CASE("DC compensation makes a fully supported kernel zero-mean") {
    // The window must cover the Gaussian envelope (std σ/k = 4 px at v=1).
    GaborBankSpec s;
    s.kernel_size = 41;
    const Kernel2D k = gabor_kernel(s, 0, 1);
    double sum = 0.0, l1 = 0.0;
    for (double v : k.values) {
        sum += v;
        l1 += std::fabs(v);
    }
    CHECK(std::fabs(sum) <= 1e-3 * l1);

    // A 5×5 window truncates the envelope, so the same kernel is far from
    // zero-mean there.
    s.kernel_size = 5;
    const Kernel2D small = gabor_kernel(s, 0, 1);
    sum = l1 = 0.0;
    for (double v : small.values) {
        sum += v;
        l1 += std::fabs(v);
    }
    CHECK(std::fabs(sum) / l1 == doctest::Approx(0.2767).epsilon(1e-3));
}

TEST_CASE("quarter-turn orientations are exact grid rotations") {
    for (std::uint32_t w : {3u, 5u, 7u}) {
        GaborBankSpec s;
        s.kernel_size = w;
        const Kernel2D k0 = gabor_kernel(s, 0, 1);
        const Kernel2D k90 = gabor_kernel(s, s.n_orient / 2, 1);
        const int h = static_cast<int>(w / 2);
        auto at = [&](const Kernel2D& k, int x, int y) { return k.values[(y + h) * w + (x + h)]; };
        for (int y = -h; y <= h; ++y)
            for (int x = -h; x <= h; ++x) CHECK(std::fabs(at(k90, x, y) - at(k0, y, -x)) < 1e-10);
        CHECK(std::fabs(sq_norm(k0) - sq_norm(k90)) <= 1e-10 * sq_norm(k0));
    }
}

TEST_CASE("kernels at one scale have near-equal energy across orientations") {
    GaborBankSpec s;
    s.kernel_size = 7;
    double lo = 1e300, hi = 0.0;
    for (double a : angle_lattice(5.0)) {
        const double n = std::sqrt(sq_norm(gabor_kernel_at(s, a, 1)));
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    CHECK((hi - lo) / hi <= 5e-2);
}

TEST_CASE("kernel generation is deterministic") {
    GaborBankSpec s;
    CHECK(gabor_kernel_at(s, 17.5, 1).values == gabor_kernel_at(s, 17.5, 1).values);
}

TEST_CASE("build_filter_matrix") {
    GaborBankSpec s;
    const FilterMatrix one = build_filter_matrix(s, 1, {0.0});
    CHECK(one.x.cols() == 1);
    CHECK(one.x.col(0) == gabor_kernel(s, 0, 1).values);

    const auto angles = angle_lattice(5.0);
    CHECK(angles.size() == 36);
    const FilterMatrix fm = build_filter_matrix(s, 1, angles);
    CHECK(fm.x.rows() == 25);
    CHECK(fm.x.cols() == 36);
    double energy = 0.0;
    for (std::size_t j = 0; j < angles.size(); ++j) {
        const Kernel2D k = gabor_kernel_at(s, angles[j], 1);
        energy += sq_norm(k);
        CHECK(fm.x.col(j) == k.values); // column order follows the angle list
    }
    CHECK(frobenius_norm_sq(fm.x) == doctest::Approx(energy).epsilon(1e-14));

    const FilterMatrix reversed = build_filter_matrix(s, 1, {90.0, 0.0});
    CHECK(reversed.x.col(0) == gabor_kernel_at(s, 90.0, 1).values);

    CHECK_THROWS_AS(build_filter_matrix(s, 1, {}), InvalidArgument);
    CHECK_THROWS_AS(build_filter_matrix(s, 1, {10.0, 10.0}), InvalidArgument);
    CHECK_THROWS_AS(build_filter_matrix(s, 1, {360.0}), InvalidArgument);
    CHECK_THROWS_AS(build_filter_matrix(s, 1, {-1.0}), InvalidArgument);

    const auto full = angle_lattice(5.0, 360.0);
    CHECK(full.size() == 72);
}

TEST_CASE("bank file round trip is bit exact") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd;
    GaborBankSpec s;
    s.n_scale = 3;
    FilterMatrix fm = build_filter_matrix(s, 2, angle_lattice(5.0));
    for (double& v : fm.x.values()) v = nd(rng) * 1e-3;

    const auto path = temp_file("roundtrip.lgfb");
    serialize_bank(fm, path);
    CHECK(fs::file_size(path) == 4 + 7 * 4 + 25 * 36 * 8);
    const FilterMatrix back = deserialize_bank(path);
    CHECK(back.x == fm.x);
    CHECK(back.scale_index == 2);
    CHECK(back.spec.n_scale == 3);
    CHECK(back.spec.kernel_size == 5);
    CHECK(back.angles == fm.angles);
    fs::remove(path);
}

TEST_CASE("bank file header layout") {
    GaborBankSpec s;
    s.kernel_size = 3;
    s.n_orient = 4;
    s.orientation_step = 45.0;
    const FilterMatrix fm = build_filter_matrix(s, 1, angle_lattice(45.0));
    const auto path = temp_file("header.lgfb");
    serialize_bank(fm, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(b.size() == 32 + 9 * 4 * 8);
    CHECK(std::string(b.begin(), b.begin() + 4) == "LGFB");
    const unsigned char header[] = {1, 0, 0, 0, 9, 0, 0, 0, 4, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
    CHECK(std::equal(std::begin(header), std::end(header), b.begin() + 4));
    fs::remove(path);
}

TEST_CASE("bank file errors") {
    GaborBankSpec s;
    const FilterMatrix fm = build_filter_matrix(s, 1, angle_lattice(5.0));
    const auto path = temp_file("bad.lgfb");
    serialize_bank(fm, path);

    // truncated
    fs::resize_file(path, fs::file_size(path) - 3);
    CHECK_THROWS_AS(deserialize_bank(path), IoError);

    // wrong magic
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "XXXX0000";
    }
    CHECK_THROWS_AS(deserialize_bank(path), IoError);

    // huge dimensions that cannot fit in the file
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write("LGFB", 4);
        const std::uint32_t h[] = {1, 65025u, 0xFFFFFFFFu, 255u, 36u, 1u, 1u};
        out.write(reinterpret_cast<const char*>(h), sizeof(h));
    }
    CHECK_THROWS_AS(deserialize_bank(path), IoError);

    CHECK_THROWS_AS(deserialize_bank(""), IoError);
    CHECK_THROWS_AS(serialize_bank(fm, ""), IoError);
    CHECK_THROWS_AS(deserialize_bank(temp_file("does_not_exist.lgfb")), IoError);

    // angles off the lattice cannot be represented in the file
    const FilterMatrix odd = build_filter_matrix(s, 1, {0.0, 7.0});
    CHECK_THROWS_AS(serialize_bank(odd, path), InvalidArgument);
    fs::remove(path);
}
