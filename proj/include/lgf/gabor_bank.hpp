#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "lgf/matrix.hpp"

namespace lgf {

enum class GaborPart { Real, Imaginary };

/// Parameters of an oriented Gabor filter bank.
///
/// The wave number at scale v follows k_v = (π/2) / (√2)^(v−1) unless
/// `wave_number` overrides it. Kernels are sampled on the centered integer
/// grid x, y ∈ [−(W−1)/2, (W−1)/2].
struct GaborBankSpec {
    std::uint32_t n_orient = 36;
    std::uint32_t n_scale = 1;
    std::uint32_t kernel_size = 5;
    double sigma = 6.283185307179586; // 2π
    double orientation_step = 5.0;    // degrees
    std::optional<double> wave_number;
    GaborPart part = GaborPart::Real;

    /// Throws InvalidArgument when the invariants do not hold.
    void validate() const;
    double wave_number_at(std::uint32_t scale) const;
};

/// W×W kernel stored row-major (row = y, column = x).
struct Kernel2D {
    std::uint32_t size = 0;
    std::vector<double> values;
};

/// Kernel at lattice orientation u (angle u·π/n_orient) and scale v ≥ 1.
Kernel2D gabor_kernel(const GaborBankSpec& spec, std::uint32_t u, std::uint32_t v);
/// Kernel at an arbitrary orientation in degrees.
Kernel2D gabor_kernel_at(const GaborBankSpec& spec, double angle_degrees, std::uint32_t v);

/// Columns are flattened oriented kernels at one scale.
struct FilterMatrix {
    Matrix x;
    GaborBankSpec spec;
    std::uint32_t scale_index = 1;
    std::vector<double> angles; // degrees, one per column
};

FilterMatrix build_filter_matrix(const GaborBankSpec& spec, std::uint32_t v, const std::vector<double>& angles);

/// Angles j·step for j = 0.. while below `range` degrees (180 or 360).
std::vector<double> angle_lattice(double step_degrees, double range_degrees = 180.0);

// LGFB bank file: "LGFB", u32 version, u32 rows, cols, W, n_orient, n_scale,
// scale_index, then rows·cols little-endian f64 in row-major order. Column
// angles are not stored: on load they are the lattice j·180/n_orient, and
// serialization refuses banks whose angles differ from that lattice.
inline constexpr std::uint32_t kBankFormatVersion = 1;

void serialize_bank(const FilterMatrix& fm, const std::filesystem::path& path);
FilterMatrix deserialize_bank(const std::filesystem::path& path);

} // namespace lgf
