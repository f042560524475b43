#include "lgf/lgf_solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "lgf/error.hpp"
#include "lgf/linalg.hpp"

namespace lgf {

namespace detail {
FilterMatrix read_bank_section(ByteReader& r);
}

namespace {

constexpr double kRidge = 1e-10;
constexpr double kStepGuard = 1e-12;
constexpr std::uint32_t kLandmarkSectionVersion = 1;

void require_shapes(const Matrix& x, const FactorizationState& s) {
    const std::size_t m = x.rows(), n = x.cols(), p = s.u.cols(), q = s.y.cols();
    if (s.u.rows() != m || s.v.rows() != p || s.v.cols() != n || s.y.rows() != p || s.z.rows() != q ||
        s.z.cols() != n)
        throw InvalidArgument("factorization state does not conform to X");
}

Matrix random_factor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double extra = 1.0) {
    const double scale = extra / std::sqrt(static_cast<double>(std::max(rows, cols)));
    std::vector<double> d(rows * cols);
    for (double& v : d) {
        const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53; // [0, 1)
        v = (unit - 0.5) * scale;
    }
    return Matrix(rows, cols, std::move(d));
}

std::string describe(const SolverConfig& c) {
    std::ostringstream os;
    os << "p=" << c.p << " q=" << c.q << " lambda=" << c.lambda << " mu=" << c.mu << " gamma=" << c.gamma
       << " rho=" << c.rho;
    return os.str();
}

} // namespace

void SolverConfig::set_penalties(const Penalties& pen) {
    rho = pen.rho;
    mu = pen.mu;
    gamma = pen.gamma;
    lambda = pen.lambda;
}

void SolverConfig::validate(std::size_t m, std::size_t n) const {
    if (q == 0) throw InvalidArgument("q must be positive");
    if (q > p) throw InvalidArgument("q must not exceed p");
    if (p > std::min(m, n)) throw InvalidArgument("p must not exceed min(m, n)");
    for (double w : {lambda, mu, gamma, rho})
        if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("tradeoff parameters must be positive: " + describe(*this));
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw InvalidArgument("rel_tol must lie in (0, 1)");
    if (max_iters <= 0) throw InvalidArgument("max_iters must be positive");
}

std::size_t default_inner_rank(std::size_t q, std::size_t m, std::size_t n) {
    return std::min({2 * q, m, n});
}

double objective(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg) {
    require_shapes(x, s);
    const double fit_term = frobenius_norm_sq(x - matmul(s.u, s.v));
    const double coupling = frobenius_norm_sq(s.v - matmul(s.y, s.z));
    return fit_term + cfg.lambda * nuclear_norm(s.u) + cfg.mu * nuclear_norm(s.v) + cfg.gamma * l1_norm(s.z) +
           cfg.rho * coupling;
}

Matrix update_y(const FactorizationState& s, const SolverConfig&) {
    // argmin_Y ‖V − YZ‖² is independent of ρ > 0.
    return solve_least_squares(s.z, s.v, kRidge);
}

Matrix update_u(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg) {
    const double sv = spectral_norm(s.v);
    const double t = 1.0 / (2.0 * sv * sv + kStepGuard);
    Matrix grad = matmul_nt(matmul(s.u, s.v) - x, s.v);
    grad *= 2.0 * t;
    return svt(s.u - grad, cfg.lambda * t);
}

Matrix update_v(const Matrix& x, const FactorizationState& s, const SolverConfig& cfg) {
    const double su = spectral_norm(s.u);
    const double t = 1.0 / (2.0 * su * su + 2.0 * cfg.rho);
    Matrix grad = matmul_tn(s.u, matmul(s.u, s.v) - x);
    grad += cfg.rho * (s.v - matmul(s.y, s.z));
    grad *= 2.0 * t;
    return svt(s.v - grad, cfg.mu * t);
}

Matrix update_z(const FactorizationState& s, const SolverConfig& cfg) {
    const double sy = spectral_norm(s.y);
    const double t = 1.0 / (2.0 * cfg.rho * sy * sy + kStepGuard);
    Matrix grad = matmul_tn(s.y, matmul(s.y, s.z) - s.v);
    grad *= 2.0 * cfg.rho * t;
    return soft_threshold(s.z - grad, cfg.gamma * t);
}

FactorizationState initialize(std::size_t m, std::size_t n, const SolverConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    FactorizationState s;
    s.u = random_factor(rng, m, cfg.p);
    s.v = random_factor(rng, cfg.p, n);
    s.y = random_factor(rng, cfg.p, cfg.q);
    s.z = random_factor(rng, cfg.q, n, kInitialZScale);
    return s;
}

FactorizationState fit(const Matrix& x, const SolverConfig& cfg) {
    cfg.validate(x.rows(), x.cols());
    return fit_from(x, cfg, initialize(x.rows(), x.cols(), cfg));
}

FactorizationState fit_from(const Matrix& x, const SolverConfig& cfg, FactorizationState s) {
    cfg.validate(x.rows(), x.cols());
    require_shapes(x, s);
    if (!x.all_finite()) throw NumericalError("fit: X has non-finite entries");

    s.objective_history.clear();
    s.iters_run = 0;
    double prev = objective(x, s, cfg);
    s.objective_history.push_back(prev);
    for (int it = 1; it <= cfg.max_iters; ++it) {
        s.y = update_y(s, cfg);
        s.u = update_u(x, s, cfg);
        s.v = update_v(x, s, cfg);
        s.z = update_z(s, cfg);
        const double f = objective(x, s, cfg);
        if (!std::isfinite(f)) {
            std::ostringstream os;
            os << "fit: objective became non-finite at iteration " << it << " (" << describe(cfg)
               << ", previous objective " << prev << ")";
            throw NumericalError(os.str());
        }
        s.objective_history.push_back(f);
        s.iters_run = it;
        const double change = std::fabs(f - prev) / std::max(prev, 1e-12);
        prev = f;
        if (change < cfg.rel_tol) break;
    }
    return s;
}

double approximation_degree(const Matrix& x, const FactorizationState& s, Reconstruction which) {
    const double denom = frobenius_norm_sq(x);
    if (denom == 0.0) throw InvalidArgument("approximation_degree: X has zero norm");
    const Matrix xhat = which == Reconstruction::Landmarks ? matmul(s.u, matmul(s.y, s.z)) : matmul(s.u, s.v);
    if (xhat.rows() != x.rows() || xhat.cols() != x.cols()) throw InvalidArgument("approximation_degree: shape mismatch");
    return frobenius_norm_sq(xhat) / denom;
}

double block_diagonality_score(const Matrix& z, std::span<const int> labels) {
    if (labels.size() != z.cols()) throw InvalidArgument("block_diagonality_score: one label per column required");
    int blocks = 0;
    for (int l : labels) {
        if (l < 0) throw InvalidArgument("block_diagonality_score: labels must be non-negative");
        blocks = std::max(blocks, l + 1);
    }
    double total = 0.0, inside = 0.0;
    std::vector<double> mass(blocks);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::fill(mass.begin(), mass.end(), 0.0);
        for (std::size_t j = 0; j < z.cols(); ++j) mass[labels[j]] += std::fabs(z(i, j));
        const auto best = std::max_element(mass.begin(), mass.end()); // first maximum wins ties
        inside += *best;
        total += std::accumulate(mass.begin(), mass.end(), 0.0);
    }
    if (total == 0.0) throw InvalidArgument("block_diagonality_score: Z is all zero");
    return inside / total;
}

Matrix LandmarkBank::reconstruction() const { return matmul(landmarks, coefficients); }

LandmarkBank make_landmark_bank(const FilterMatrix& fm, const FactorizationState& s) {
    require_shapes(fm.x, s);
    return LandmarkBank{matmul(s.u, s.y), s.z, fm.spec, fm.scale_index, fm.angles};
}

void serialize_landmarks(const LandmarkBank& bank, const std::filesystem::path& path) {
    const std::size_t q = bank.landmarks.cols();
    const std::size_t n = bank.coefficients.cols();
    if (bank.coefficients.rows() != q) throw InvalidArgument("serialize_landmarks: coefficients must have q rows");
    if (bank.angles.size() != n) throw InvalidArgument("serialize_landmarks: one angle per coefficient column");
    if (bank.landmarks.rows() != std::size_t{bank.spec.kernel_size} * bank.spec.kernel_size)
        throw InvalidArgument("serialize_landmarks: landmark rows != kernel_size^2");

    detail::ByteWriter w;
    w.magic("LGFB");
    w.u32(kBankFormatVersion);
    w.u32(static_cast<std::uint32_t>(bank.landmarks.rows()));
    w.u32(static_cast<std::uint32_t>(q));
    w.u32(bank.spec.kernel_size);
    w.u32(bank.spec.n_orient);
    w.u32(bank.spec.n_scale);
    w.u32(bank.scale_index);
    w.f64s(bank.landmarks.values());
    w.magic("LGFZ");
    w.u32(kLandmarkSectionVersion);
    w.u32(static_cast<std::uint32_t>(q));
    w.u32(static_cast<std::uint32_t>(n));
    w.f64s(bank.angles);
    w.f64s(bank.coefficients.values());
    w.save(path);
}

LandmarkBank deserialize_landmarks(const std::filesystem::path& path) {
    auto r = detail::ByteReader::load(path);
    FilterMatrix head = detail::read_bank_section(r);
    r.expect_magic("LGFZ");
    if (r.u32() != kLandmarkSectionVersion) throw IoError(path.string() + ": unsupported landmark section version");
    const std::uint32_t q = r.u32();
    const std::uint32_t n = r.u32();
    if (q != head.x.cols()) throw IoError(path.string() + ": coefficient rows do not match landmark count");
    if (n == 0) throw IoError(path.string() + ": empty coefficient matrix");
    LandmarkBank bank;
    bank.angles = r.f64s(n);
    auto coeffs = r.f64s(std::uint64_t{q} * n);
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
    try {
        bank.coefficients = Matrix(q, n, std::move(coeffs));
    } catch (const InvalidArgument& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    bank.landmarks = std::move(head.x);
    bank.spec = head.spec;
    bank.scale_index = head.scale_index;
    return bank;
}

std::vector<Penalties> builtin_sweep_grid() {
    const double values[] = {0.001, 0.005, 0.01, 0.05, 0.1, 0.5};
    std::vector<Penalties> grid;
    for (double tied : values)
        for (double lam : values) grid.push_back(Penalties{tied, tied, tied, lam});
    return grid;
}

std::vector<SweepRow> parameter_sweep(const Matrix& x, std::span<const Penalties> grid, const SolverConfig& tmpl,
                                      unsigned jobs) {
    if (grid.empty()) throw InvalidArgument("parameter_sweep: empty grid");
    std::vector<SweepRow> rows(grid.size());
    auto run_one = [&](std::size_t i) {
        SweepRow& row = rows[i];
        row.penalties = grid[i];
        try {
            SolverConfig cfg = tmpl;
            cfg.set_penalties(grid[i]);
            const FactorizationState s = fit(x, cfg);
            row.degree = approximation_degree(x, s);
            row.iters = s.iters_run;
            row.objective = s.objective_history.back();
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    };

    jobs = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(grid.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < jobs; ++w)
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < grid.size(); i = next++) run_one(i);
            });
    }

    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const bool fa = rows[a].error.empty(), fb = rows[b].error.empty();
        if (fa != fb) return fa;
        return fa && rows[a].degree > rows[b].degree;
    });
    std::vector<SweepRow> sorted;
    sorted.reserve(rows.size());
    for (std::size_t i : order) sorted.push_back(std::move(rows[i]));
    return sorted;
}

} // namespace lgf
