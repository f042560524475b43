#pragma once

#include <vector>

#include "lgf/matrix.hpp"

namespace lgf {

/// Thin SVD m = left · diag(singular_values) · rightᵀ, r = min(rows, cols).
struct SvdResult {
    Matrix left;                 // m×r, orthonormal columns
    std::vector<double> singular_values; // non-increasing, ≥ 0
    Matrix right;                // n×r, orthonormal columns

    Matrix reconstruct() const;
};

double frobenius_norm_sq(const Matrix& m);
double l1_norm(const Matrix& m);

/// One-sided (Hestenes) Jacobi SVD. Deterministic for a fixed input.
/// Throws NumericalError if the sweep cap is reached before convergence.
SvdResult svd(const Matrix& m);

double nuclear_norm(const Matrix& m);
/// Largest singular value (0 for an empty or zero matrix).
double spectral_norm(const Matrix& m);

/// Entrywise sign(m)·max(0, |m| − tau): the minimizer of
/// tau‖X‖₁ + ½‖X − m‖_F².
Matrix soft_threshold(const Matrix& m, double tau);

/// Singular value thresholding, the minimizer of tau‖X‖_* + ½‖X − m‖_F².
Matrix svt(const Matrix& m, double tau);

/// x minimizing ‖b − x·a‖_F² + ridge‖x‖_F², i.e. x = b·aᵀ·(a·aᵀ + ridge·I)⁻¹.
/// With ridge = 0 a rank-deficient a·aᵀ throws NumericalError.
Matrix solve_least_squares(const Matrix& a, const Matrix& b, double ridge);

} // namespace lgf
