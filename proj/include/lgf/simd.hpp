#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops. Each kernel has a scalar reference and, on x86-64,
// an AVX2+FMA variant; the active table is picked once at startup from CPUID.
// Setting LGF_SIMD=scalar in the environment forces the reference kernels.

namespace lgf::simd {

enum class Transpose { No, Yes };

struct Kernels {
    std::string_view name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum_squares)(const double* a, std::size_t n);
    /// y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    /// out = a ⊙ b
    void (*multiply)(const double* a, const double* b, double* out, std::size_t n);
    /// out = sign(a)·max(|a| − tau, 0)
    void (*soft_threshold)(const double* a, double tau, double* out, std::size_t n);

    /// C(m×n) += alpha · op(A) · op(B), all row-major with leading dimensions.
    /// op(A) is m×k, op(B) is k×n.
    void (*gemm)(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
                 double* c, std::size_t ldc);
};

const Kernels& scalar_kernels();
/// nullptr when the AVX2 variant is not compiled in.
const Kernels* avx2_kernels();
bool cpu_has_avx2();

/// Kernel table selected for this process.
const Kernels& active();

} // namespace lgf::simd
