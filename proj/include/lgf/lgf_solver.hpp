#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lgf/gabor_bank.hpp"
#include "lgf/matrix.hpp"

namespace lgf {

/// Tradeoff weights of the relaxed objective
///   ‖X − UV‖_F² + λ‖U‖_* + μ‖V‖_* + γ‖Z‖₁ + ρ‖V − YZ‖_F².
struct Penalties {
    double rho = 0.05;
    double mu = 0.05;
    double gamma = 0.05;
    double lambda = 0.05;
};

struct SolverConfig {
    std::size_t p = 10; // inner rank, columns of U
    std::size_t q = 5;  // number of landmarks, columns of Y
    double lambda = 0.05;
    double mu = 0.05;
    double gamma = 0.05;
    double rho = 0.05;
    int max_iters = 500;
    double rel_tol = 1e-6;
    std::uint64_t seed = 0;

    void set_penalties(const Penalties& pen);
    /// Throws InvalidArgument unless q ≤ p ≤ min(m, n), penalties > 0 and
    /// rel_tol ∈ (0, 1).
    void validate(std::size_t m, std::size_t n) const;
};

/// Default inner rank: 2q, capped by min(m, n).
std::size_t default_inner_rank(std::size_t q, std::size_t m, std::size_t n);

struct FactorizationState {
    Matrix u; // m×p
    Matrix v; // p×n
    Matrix y; // p×q
    Matrix z; // q×n
    std::vector<double> objective_history;
    int iters_run = 0;
};

double objective(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg);

// Single block updates. Each is a descent step on the objective restricted to
// one factor; the others are read from `s`.

/// Ridge least squares V·Zᵀ·(Z·Zᵀ + 1e-10·I)⁻¹.
Matrix update_y(const FactorizationState& s, const SolverConfig& cfg);
/// Proximal gradient step with step 1/(2σ_max(V)² + δ) and SVT.
Matrix update_u(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg);
/// Proximal gradient step with step 1/(2σ_max(U)² + 2ρ) and SVT (weight μ).
Matrix update_v(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg);
/// One iterative shrinkage-thresholding step with step 1/(2ρσ_max(Y)² + δ).
Matrix update_z(const FactorizationState& s, const SolverConfig& cfg);

/// Extra factor on the initial Z.
inline constexpr double kInitialZScale = 0.01;

/// Seeded uniform entries in [−0.5, 0.5] scaled by 1/√max(rows, cols) of each
/// factor (Z additionally by kInitialZScale), drawn in the order U, V, Y, Z.
FactorizationState initialize(std::size_t m, std::size_t n, const SolverConfig& cfg);

/// Alternates Y → U → V → Z until the relative objective change drops below
/// rel_tol or max_iters is reached. objective_history[0] is the value at the
/// initial point. Throws NumericalError on a non-finite objective.
FactorizationState fit(const Matrix& x, const SolverConfig& cfg);
FactorizationState fit_from(const Matrix& x, const SolverConfig& cfg, FactorizationState init);

enum class Reconstruction {
    Landmarks, // X̂ = U·Y·Z
    Direct,    // X̂ = U·V
};

/// D = ‖X̂‖_F² / ‖X‖_F².
double approximation_degree(const Matrix& x, const FactorizationState& s,
                            Reconstruction which = Reconstruction::Landmarks);

/// Fraction of Σ|z_ij| lying in the block assigned to each row. A row is
/// assigned to the label whose columns carry most of its mass (ties go to the
/// lowest label). Labels must be 0..B−1.
double block_diagonality_score(const Matrix& z, std::span<const int> labels);

/// Landmark filters L = U·Y (m×q) with coefficients Z (q×n).
struct LandmarkBank {
    Matrix landmarks;
    Matrix coefficients;
    GaborBankSpec spec;
    std::uint32_t scale_index = 1;
    std::vector<double> angles;

    Matrix reconstruction() const;
};

LandmarkBank make_landmark_bank(const FilterMatrix& fm, const FactorizationState& s);

// Landmark file: an LGFB section holding the landmarks (rows = W², cols = q),
// followed by "LGFZ", u32 version, u32 q, u32 n, n column angles (f64) and the
// q×n coefficients (f64, row-major).
void serialize_landmarks(const LandmarkBank& bank, const std::filesystem::path& path);
LandmarkBank deserialize_landmarks(const std::filesystem::path& path);

struct SweepRow {
    Penalties penalties;
    double degree = 0.0;
    int iters = 0;
    double objective = 0.0;
    std::string error; // empty on success
};

/// The tied grid: ρ = μ = γ = a and λ = b for a, b in
/// {0.001, 0.005, 0.01, 0.05, 0.1, 0.5}; 36 tuples.
std::vector<Penalties> builtin_sweep_grid();

/// Runs one fit per tuple with the template's seed. Failing tuples produce a
/// row with `error` set. Rows come back sorted by D descending (ties by grid
/// order, failures last) regardless of how many jobs ran.
std::vector<SweepRow> parameter_sweep(const Matrix& x, std::span<const Penalties> grid, const SolverConfig& tmpl,
                                      unsigned jobs = 1);

} // namespace lgf
