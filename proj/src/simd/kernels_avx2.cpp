// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include "lgf/simd.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

namespace lgf::simd {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4)
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_squares(const double* a, std::size_t n) { return dot(a, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void multiply(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void soft_threshold(const double* a, double tau, double* out, std::size_t n) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d vt = _mm256_set1_pd(tau);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(a + i);
        __m256d mag = _mm256_max_pd(_mm256_sub_pd(_mm256_andnot_pd(sign, v), vt), zero);
        _mm256_storeu_pd(out + i, _mm256_or_pd(mag, _mm256_and_pd(sign, v)));
    }
    for (; i < n; ++i) out[i] = std::copysign(std::max(std::fabs(a[i]) - tau, 0.0), a[i]);
}

// Blocked GEMM: op(B) is packed into 8-column strips and op(A) into 4-row
// panels, both zero padded, so the 4×8 register kernel never branches.
constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 128;

inline void micro_kernel(std::size_t kb, const double* ap, const double* bp, double alpha, double* c,
                         std::size_t ldc, std::size_t mr, std::size_t nr) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < kb; ++p) {
        const __m256d b0 = _mm256_load_pd(bp);
        const __m256d b1 = _mm256_load_pd(bp + 4);
        __m256d a = _mm256_broadcast_sd(ap);
        c00 = _mm256_fmadd_pd(a, b0, c00);
        c01 = _mm256_fmadd_pd(a, b1, c01);
        a = _mm256_broadcast_sd(ap + 1);
        c10 = _mm256_fmadd_pd(a, b0, c10);
        c11 = _mm256_fmadd_pd(a, b1, c11);
        a = _mm256_broadcast_sd(ap + 2);
        c20 = _mm256_fmadd_pd(a, b0, c20);
        c21 = _mm256_fmadd_pd(a, b1, c21);
        a = _mm256_broadcast_sd(ap + 3);
        c30 = _mm256_fmadd_pd(a, b0, c30);
        c31 = _mm256_fmadd_pd(a, b1, c31);
        ap += kMr;
        bp += kNr;
    }
    alignas(32) double acc[kMr][kNr];
    _mm256_store_pd(acc[0], c00);
    _mm256_store_pd(acc[0] + 4, c01);
    _mm256_store_pd(acc[1], c10);
    _mm256_store_pd(acc[1] + 4, c11);
    _mm256_store_pd(acc[2], c20);
    _mm256_store_pd(acc[2] + 4, c21);
    _mm256_store_pd(acc[3], c30);
    _mm256_store_pd(acc[3] + 4, c31);
    if (mr == kMr && nr == kNr) {
        const __m256d va = _mm256_set1_pd(alpha);
        for (std::size_t r = 0; r < kMr; ++r) {
            double* cr = c + r * ldc;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(va, _mm256_load_pd(acc[r]), _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(va, _mm256_load_pd(acc[r] + 4), _mm256_loadu_pd(cr + 4)));
        }
        return;
    }
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += alpha * acc[r][j];
}

struct AlignedBuffer {
    double* ptr = nullptr;
    std::size_t cap = 0;
    ~AlignedBuffer() { std::free(ptr); }
    double* get(std::size_t n) {
        if (n > cap) {
            std::free(ptr);
            cap = (n + 7) & ~std::size_t{7};
            ptr = static_cast<double*>(std::aligned_alloc(32, cap * sizeof(double)));
        }
        return ptr;
    }
};

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
    thread_local AlignedBuffer abuf, bbuf;
    const bool at = ta == Transpose::Yes;
    const bool bt = tb == Transpose::Yes;
    const std::size_t strips = (n + kNr - 1) / kNr;

    for (std::size_t pc = 0; pc < k; pc += kKc) {
        const std::size_t kb = std::min(kKc, k - pc);
        double* bp = bbuf.get(strips * kb * kNr);
        for (std::size_t s = 0; s < strips; ++s) {
            double* dst = bp + s * kb * kNr;
            const std::size_t j0 = s * kNr;
            const std::size_t nr = std::min(kNr, n - j0);
            for (std::size_t p = 0; p < kb; ++p) {
                for (std::size_t j = 0; j < nr; ++j)
                    dst[p * kNr + j] = bt ? b[(j0 + j) * ldb + pc + p] : b[(pc + p) * ldb + j0 + j];
                for (std::size_t j = nr; j < kNr; ++j) dst[p * kNr + j] = 0.0;
            }
        }
        for (std::size_t ic = 0; ic < m; ic += kMc) {
            const std::size_t mb = std::min(kMc, m - ic);
            const std::size_t panels = (mb + kMr - 1) / kMr;
            double* ap = abuf.get(panels * kb * kMr);
            for (std::size_t q = 0; q < panels; ++q) {
                double* dst = ap + q * kb * kMr;
                const std::size_t i0 = ic + q * kMr;
                const std::size_t mr = std::min(kMr, m - i0);
                for (std::size_t p = 0; p < kb; ++p) {
                    for (std::size_t r = 0; r < mr; ++r)
                        dst[p * kMr + r] = at ? a[(pc + p) * lda + i0 + r] : a[(i0 + r) * lda + pc + p];
                    for (std::size_t r = mr; r < kMr; ++r) dst[p * kMr + r] = 0.0;
                }
            }
            for (std::size_t s = 0; s < strips; ++s) {
                const std::size_t j0 = s * kNr;
                const std::size_t nr = std::min(kNr, n - j0);
                for (std::size_t q = 0; q < panels; ++q) {
                    const std::size_t i0 = ic + q * kMr;
                    const std::size_t mr = std::min(kMr, m - i0);
                    micro_kernel(kb, ap + q * kb * kMr, bp + s * kb * kNr, alpha, c + i0 * ldc + j0, ldc,
                                 mr, nr);
                }
            }
        }
    }
}

} // namespace

const Kernels* avx2_kernels() {
    static const Kernels k{"avx2", dot, sum_squares, axpy, multiply, soft_threshold, gemm};
    return &k;
}

} // namespace lgf::simd
