#include "lgf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lgf/error.hpp"
#include "lgf/simd.hpp"

namespace lgf {

namespace {

constexpr int kMaxSweeps = 80;

void rotate(std::span<double> x, std::span<double> y, double c, double s) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// Fill zero columns of q (given as rows of `cols`) with unit vectors orthogonal
// to the rest, so the left factor stays orthonormal for rank-deficient input.
void complete_basis(Matrix& cols, const std::vector<bool>& filled) {
    const auto& k = simd::active();
    const std::size_t r = cols.rows();
    const std::size_t len = cols.cols();
    std::size_t candidate = 0;
    for (std::size_t j = 0; j < r; ++j) {
        if (filled[j]) continue;
        while (candidate < len) {
            std::vector<double> e(len, 0.0);
            e[candidate++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t i = 0; i < r; ++i) {
                    if (i == j || (!filled[i] && i > j)) continue;
                    const auto qi = cols.row(i);
                    k.axpy(-k.dot(qi.data(), e.data(), len), qi.data(), e.data(), len);
                }
            }
            const double nrm = std::sqrt(k.sum_squares(e.data(), len));
            if (nrm > 0.5) {
                auto row = cols.row(j);
                for (std::size_t t = 0; t < len; ++t) row[t] = e[t] / nrm;
                break;
            }
        }
    }
}

} // namespace

Matrix SvdResult::reconstruct() const {
    Matrix scaled = left;
    for (std::size_t i = 0; i < scaled.rows(); ++i)
        for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= singular_values[j];
    return matmul_nt(scaled, right);
}

double frobenius_norm_sq(const Matrix& m) { return simd::active().sum_squares(m.data(), m.size()); }

double l1_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.values()) s += std::fabs(x);
    return s;
}

SvdResult svd(const Matrix& a) {
    const auto& k = simd::active();
    const bool tall = a.rows() >= a.cols();
    // Rows of `work` are the columns of B, where B = a (tall) or aᵀ (wide).
    Matrix work = tall ? transpose(a) : a;
    const std::size_t n = work.rows();
    const std::size_t m = work.cols();
    Matrix vwork = Matrix::identity(n);

    const double eps = std::numeric_limits<double>::epsilon();
    const double tol = eps * static_cast<double>(std::max<std::size_t>(m, 1));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += k.sum_squares(work.row(j).data(), m);
    // Columns below eps·‖A‖_F are treated as exact zeros.
    const double negligible = eps * eps * total;
    bool converged = n < 2;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                auto wp = work.row(p);
                auto wq = work.row(q);
                const double app = k.sum_squares(wp.data(), m);
                const double aqq = k.sum_squares(wq.data(), m);
                const double apq = k.dot(wp.data(), wq.data(), m);
                if (app <= negligible || aqq <= negligible) continue;
                if (std::fabs(apq) <= tol * std::sqrt(app * aqq)) continue;
                converged = false;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(wp, wq, c, s);
                rotate(vwork.row(p), vwork.row(q), c, s);
            }
        }
    }
    if (!converged) throw NumericalError("svd: Jacobi sweeps did not converge");

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double sq = k.sum_squares(work.row(j).data(), m);
        norms[j] = sq <= negligible ? 0.0 : std::sqrt(sq);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    // Columns stored as rows until the final transpose.
    Matrix ucols(n, m), vcols(n, n);
    std::vector<double> sv(n);
    std::vector<bool> filled(n, false);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const std::size_t j = order[idx];
        sv[idx] = norms[j];
        const auto src = work.row(j);
        auto dst = ucols.row(idx);
        if (norms[j] > 0.0) {
            for (std::size_t t = 0; t < m; ++t) dst[t] = src[t] / norms[j];
            filled[idx] = true;
        }
        const auto vs = vwork.row(j);
        std::copy(vs.begin(), vs.end(), vcols.row(idx).begin());
    }
    complete_basis(ucols, filled);

    SvdResult r;
    r.singular_values = std::move(sv);
    if (tall) {
        r.left = transpose(ucols);
        r.right = transpose(vcols);
    } else {
        r.left = transpose(vcols);
        r.right = transpose(ucols);
    }
    return r;
}

double nuclear_norm(const Matrix& m) {
    if (m.empty()) return 0.0;
    const auto s = svd(m).singular_values;
    return std::accumulate(s.begin(), s.end(), 0.0);
}

double spectral_norm(const Matrix& m) {
    if (m.empty()) return 0.0;
    const auto s = svd(m).singular_values;
    return s.empty() ? 0.0 : s.front();
}

Matrix soft_threshold(const Matrix& m, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("soft_threshold: tau must be positive");
    Matrix out(m.rows(), m.cols());
    simd::active().soft_threshold(m.data(), tau, out.data(), m.size());
    return out;
}

Matrix svt(const Matrix& m, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("svt: tau must be positive");
    if (m.empty()) return m;
    SvdResult r = svd(m);
    for (double& s : r.singular_values) s = std::max(s - tau, 0.0);
    return r.reconstruct();
}

Matrix solve_least_squares(const Matrix& a, const Matrix& b, double ridge) {
    if (a.cols() != b.cols()) throw InvalidArgument("solve_least_squares: a and b need equal column counts");
    if (!(ridge >= 0.0)) throw InvalidArgument("solve_least_squares: ridge must be non-negative");
    Matrix gram = matmul_nt(a, a);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += ridge;
    const Matrix rhs = matmul_nt(b, a);

    // gram is symmetric PSD, so its SVD doubles as an eigendecomposition and
    // gives a pseudo-inverse that degrades gracefully near singularity.
    const SvdResult g = svd(gram);
    const double smax = g.singular_values.empty() ? 0.0 : g.singular_values.front();
    const double smin = g.singular_values.empty() ? 0.0 : g.singular_values.back();
    const double cutoff = ridge > 0.0 ? 0.0 : 1e-13 * smax;
    if (smax == 0.0 || smin <= cutoff) throw NumericalError("solve_least_squares: normal matrix is rank deficient");

    // x = rhs · right · diag(1/s) · leftᵀ
    Matrix t = matmul(rhs, g.right);
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) t(i, j) /= g.singular_values[j];
    return matmul_nt(t, g.left);
}

} // namespace lgf
