#include "lgf/simd.hpp"

#include <algorithm>
#include <cmath>

namespace lgf::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_squares(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void multiply(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void soft_threshold(const double* a, double tau, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::copysign(std::max(std::fabs(a[i]) - tau, 0.0), a[i]);
}

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc) {
    const bool at = ta == Transpose::Yes;
    const bool bt = tb == Transpose::Yes;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = alpha * (at ? a[p * lda + i] : a[i * lda + p]);
            if (aip == 0.0) continue;
            if (!bt) {
                const double* brow = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * ldb + p];
            }
        }
    }
}

} // namespace

const Kernels& scalar_kernels() {
    static const Kernels k{"scalar", dot, sum_squares, axpy, multiply, soft_threshold, gemm};
    return k;
}

} // namespace lgf::simd
