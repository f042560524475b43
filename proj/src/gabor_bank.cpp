#include "lgf/gabor_bank.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "binary_io.hpp"
#include "lgf/error.hpp"

namespace lgf {

void GaborBankSpec::validate() const {
    if (kernel_size < 3 || kernel_size % 2 == 0) throw InvalidArgument("kernel_size must be odd and >= 3");
    if (n_orient == 0) throw InvalidArgument("n_orient must be positive");
    if (n_scale == 0) throw InvalidArgument("n_scale must be positive");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be positive");
    if (!(orientation_step > 0.0)) throw InvalidArgument("orientation_step must be positive");
    if (static_cast<double>(n_orient) * orientation_step > 360.0 + 1e-9)
        throw InvalidArgument("n_orient * orientation_step exceeds 360 degrees");
    if (wave_number && !(*wave_number > 0.0)) throw InvalidArgument("wave_number must be positive");
}

double GaborBankSpec::wave_number_at(std::uint32_t scale) const {
    if (wave_number) return *wave_number;
    return (std::numbers::pi / 2.0) / std::pow(std::numbers::sqrt2, static_cast<double>(scale) - 1.0);
}

namespace {

Kernel2D evaluate(const GaborBankSpec& spec, double theta, std::uint32_t v) {
    const double k = spec.wave_number_at(v);
    const double s2 = spec.sigma * spec.sigma;
    const double amp = k * k / s2;
    const double dc = std::exp(-s2 / 2.0);
    const double kx = k * std::cos(theta);
    const double ky = k * std::sin(theta);
    const int half = static_cast<int>(spec.kernel_size / 2);

    Kernel2D out{spec.kernel_size, std::vector<double>(std::size_t{spec.kernel_size} * spec.kernel_size)};
    std::size_t idx = 0;
    for (int y = -half; y <= half; ++y) {
        for (int x = -half; x <= half; ++x) {
            const double r2 = static_cast<double>(x * x + y * y);
            const double envelope = amp * std::exp(-k * k * r2 / (2.0 * s2));
            const double phase = kx * x + ky * y;
            // Re/Im of e^{i k·z} − e^{−σ²/2}
            const double carrier = spec.part == GaborPart::Real ? std::cos(phase) - dc : std::sin(phase);
            out.values[idx++] = envelope * carrier;
        }
    }
    return out;
}

void check_scale(const GaborBankSpec& spec, std::uint32_t v) {
    if (v < 1 || v > spec.n_scale)
        throw InvalidArgument("scale index " + std::to_string(v) + " outside [1, " + std::to_string(spec.n_scale) + "]");
}

} // namespace

Kernel2D gabor_kernel(const GaborBankSpec& spec, std::uint32_t u, std::uint32_t v) {
    spec.validate();
    check_scale(spec, v);
    if (u >= spec.n_orient) throw InvalidArgument("orientation index out of range");
    return evaluate(spec, static_cast<double>(u) * std::numbers::pi / spec.n_orient, v);
}

Kernel2D gabor_kernel_at(const GaborBankSpec& spec, double angle_degrees, std::uint32_t v) {
    spec.validate();
    check_scale(spec, v);
    if (!std::isfinite(angle_degrees)) throw InvalidArgument("angle must be finite");
    return evaluate(spec, angle_degrees * std::numbers::pi / 180.0, v);
}

std::vector<double> angle_lattice(double step_degrees, double range_degrees) {
    if (!(step_degrees > 0.0)) throw InvalidArgument("angle step must be positive");
    std::vector<double> out;
    for (std::size_t j = 0;; ++j) {
        const double a = static_cast<double>(j) * step_degrees;
        if (a >= range_degrees - 1e-9) break;
        out.push_back(a);
    }
    return out;
}

FilterMatrix build_filter_matrix(const GaborBankSpec& spec, std::uint32_t v, const std::vector<double>& angles) {
    spec.validate();
    check_scale(spec, v);
    if (angles.empty()) throw InvalidArgument("angle list is empty");
    std::set<double> seen;
    for (double a : angles) {
        if (!(a >= 0.0 && a < 360.0)) throw InvalidArgument("angle outside [0, 360)");
        if (!seen.insert(a).second) throw InvalidArgument("duplicate angle " + std::to_string(a));
    }
    const std::size_t m = std::size_t{spec.kernel_size} * spec.kernel_size;
    FilterMatrix fm{Matrix(m, angles.size()), spec, v, angles};
    for (std::size_t j = 0; j < angles.size(); ++j) fm.x.set_col(j, gabor_kernel_at(spec, angles[j], v).values);
    return fm;
}

void serialize_bank(const FilterMatrix& fm, const std::filesystem::path& path) {
    const auto lattice_step = 180.0 / fm.spec.n_orient;
    for (std::size_t j = 0; j < fm.angles.size(); ++j)
        if (std::fabs(fm.angles[j] - static_cast<double>(j) * lattice_step) > 1e-9)
            throw InvalidArgument("serialize_bank: column angles are not the lattice j*180/n_orient");
    if (fm.x.rows() != std::size_t{fm.spec.kernel_size} * fm.spec.kernel_size)
        throw InvalidArgument("serialize_bank: rows != kernel_size^2");

    detail::ByteWriter w;
    w.magic("LGFB");
    w.u32(kBankFormatVersion);
    w.u32(static_cast<std::uint32_t>(fm.x.rows()));
    w.u32(static_cast<std::uint32_t>(fm.x.cols()));
    w.u32(fm.spec.kernel_size);
    w.u32(fm.spec.n_orient);
    w.u32(fm.spec.n_scale);
    w.u32(fm.scale_index);
    w.f64s(fm.x.values());
    w.save(path);
}

namespace detail {

// Shared with the landmark file reader.
FilterMatrix read_bank_section(ByteReader& r) {
    r.expect_magic("LGFB");
    const std::uint32_t version = r.u32();
    if (version != kBankFormatVersion) throw IoError(r.name() + ": unsupported bank format version");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    FilterMatrix fm;
    fm.spec.kernel_size = r.u32();
    fm.spec.n_orient = r.u32();
    fm.spec.n_scale = r.u32();
    fm.scale_index = r.u32();
    if (rows == 0 || cols == 0 || fm.spec.n_orient == 0)
        throw IoError(r.name() + ": zero dimension in header");
    if (std::uint64_t{fm.spec.kernel_size} * fm.spec.kernel_size != rows)
        throw IoError(r.name() + ": rows != kernel_size^2");
    auto data = r.f64s(std::uint64_t{rows} * cols);
    try {
        fm.x = Matrix(rows, cols, std::move(data));
    } catch (const InvalidArgument& e) {
        throw IoError(r.name() + ": " + e.what());
    }
    fm.spec.orientation_step = 180.0 / fm.spec.n_orient;
    for (std::uint32_t j = 0; j < cols; ++j) fm.angles.push_back(j * fm.spec.orientation_step);
    return fm;
}

} // namespace detail

FilterMatrix deserialize_bank(const std::filesystem::path& path) {
    auto r = detail::ByteReader::load(path);
    FilterMatrix fm = detail::read_bank_section(r);
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after bank payload");
    return fm;
}

} // namespace lgf
