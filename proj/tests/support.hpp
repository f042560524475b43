#pragma once

// Test-only helpers: seeded generators and independent oracles that do not
// share code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lgf/matrix.hpp"

namespace lgf::test {

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> d(r * c);
    for (double& x : d) x = nd(rng);
    return Matrix(r, c, std::move(d));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

inline double frob(const Matrix& a) {
    double s = 0.0;
    for (double x : a.values()) s += x * x;
    return std::sqrt(s);
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline Matrix naive_transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Eigenvalues of a symmetric matrix by the classical two-sided cyclic Jacobi
/// method, sorted descending.
inline std::vector<double> symmetric_eigenvalues(Matrix s) {
    const std::size_t n = s.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += s(i, j) * s(i, j);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(s(p, q)) < 1e-300) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
            }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = s(i, i);
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

/// Singular values from the eigenvalues of MᵀM (or MMᵀ for wide M).
inline std::vector<double> singular_values_via_gram(const Matrix& m) {
    const Matrix g = m.rows() >= m.cols() ? naive_matmul(naive_transpose(m), m) : naive_matmul(m, naive_transpose(m));
    auto ev = symmetric_eigenvalues(g);
    for (double& e : ev) e = std::sqrt(std::max(e, 0.0));
    return ev;
}

/// Scalar minimizer of f on [lo, hi] by golden-section search (f convex).
template <class F>
double golden_min(F f, double lo, double hi, double tol = 1e-14) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol * (1.0 + std::fabs(a) + std::fabs(b))) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Numerical minimizer of tau‖X‖_* + ½‖X − M‖_F² using the variational form
/// ‖X‖_* = min_{X = A·Bᵀ} ½(‖A‖² + ‖B‖²): gradient descent on the smooth
/// factorized objective with full-width factors, no SVD involved.
inline Matrix nuclear_prox_by_factorization(const Matrix& mt, double tau, std::uint64_t seed) {
    const std::size_t r = mt.rows(), c = mt.cols(), k = std::min(r, c);
    std::mt19937_64 rng(seed);
    Matrix a = random_matrix(rng, r, k, 0.5), b = random_matrix(rng, c, k, 0.5);
    auto residual = [&](const Matrix& aa, const Matrix& bb) {
        Matrix x = naive_matmul(aa, naive_transpose(bb));
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] -= mt.data()[i];
        return x;
    };
    double lip = 0.0;
    for (double v : mt.values()) lip += v * v;
    double step = 0.25 / (std::sqrt(lip) + tau + 1.0);
    for (int it = 0; it < 400000; ++it) {
        const Matrix e = residual(a, b);
        Matrix ga = naive_matmul(e, b), gb = naive_matmul(naive_transpose(e), a);
        double gn = 0.0;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga.data()[i] += tau * a.data()[i];
            gn += ga.data()[i] * ga.data()[i];
        }
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb.data()[i] += tau * b.data()[i];
            gn += gb.data()[i] * gb.data()[i];
        }
        if (gn < 1e-26) break;
        for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] -= step * ga.data()[i];
        for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] -= step * gb.data()[i];
    }
    return naive_matmul(a, naive_transpose(b));
}

} // namespace lgf::test
