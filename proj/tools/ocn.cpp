// ocn: filter banks, landmark fitting, sweeps and network training from one binary.
//
// Exit codes: 0 success, 2 usage, 3 data/IO, 4 numerical failure, 1 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lgf/dataset_io.hpp"
#include "lgf/error.hpp"
#include "lgf/gabor_bank.hpp"
#include "lgf/lgf_solver.hpp"
#include "lgf/network_trainer.hpp"
#include "lgf/simd.hpp"

#ifndef LGF_GIT_DESCRIBE
#define LGF_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lgf;

namespace {

constexpr int kManifestSchema = 1;
constexpr int kEvalSchema = 1;

enum Exit { Ok = 0, Internal = 1, Usage = 2, Data = 3, Numerical = 4 };

struct BankOptions {
    std::uint32_t size = 5;
    double angles_step = 5.0;
    std::uint32_t scale = 1;
    std::string part = "real";
    bool full_range = false;
    std::string out;
};

struct SolverOptions {
    std::size_t q = 5;
    std::size_t p = 0; // 0: default_inner_rank
    double lambda = 0.05, mu = 0.05, gamma = 0.05, rho = 0.05;
    int max_iters = 500;
    double tol = 1e-6;
    std::uint64_t seed = 0;
};

struct FitOptions {
    std::string bank, out, history;
    SolverOptions solver;
};

struct SweepOptions {
    std::string bank;
    std::uint32_t size = 5;
    std::string grid = "builtin";
    std::string out;
    unsigned jobs = 1;
    SolverOptions solver;
};

struct DataOptions {
    std::string dir;
    std::size_t train_size = 2000;
    std::size_t test_size = 1000;
    bool rotated = false;
    bool rotate_train = false;
    std::uint64_t data_seed = 0;
};

struct TrainOptions {
    std::string arch = "ocn";
    std::string widths = "10-20-40-80";
    std::size_t kernel = 3;
    std::size_t orientations = 4;
    std::size_t scales = 1;
    std::size_t hidden = 1024;
    double dropout = 0.5;
    std::vector<std::string> landmarks;
    DataOptions data;
    std::size_t epochs = 10;
    std::size_t batch = 128;
    double lr = 0.001;
    double weight_decay = 0.00005;
    std::size_t lr_period = 10;
    std::uint64_t seed = 0;
    std::string out, metrics, report;
};

struct EvalOptions {
    std::string checkpoint, out;
    DataOptions data;
};

struct Manifest {
    json command_line = json::array();
    std::string subcommand;
    json config = json::object();
    std::optional<std::uint64_t> seed;
    json outputs = json::object();
    json results = json::object();
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void require_writable(const fs::path& p) {
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("output directory does not exist: " + dir.string());
}

void write_text(const fs::path& p, const std::string& text) {
    require_writable(p);
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    out << text;
    if (!out) throw IoError("write failed: " + p.string());
}

json solver_json(const SolverOptions& s) {
    return {{"q", s.q},         {"p", s.p},       {"lambda", s.lambda},       {"mu", s.mu},
            {"gamma", s.gamma}, {"rho", s.rho},   {"max_iters", s.max_iters}, {"tol", s.tol},
            {"seed", s.seed}};
}

json data_json(const DataOptions& d) {
    return {{"data", d.dir},         {"train_size", d.train_size},     {"test_size", d.test_size},
            {"rotated", d.rotated}, {"rotate_train", d.rotate_train}, {"data_seed", d.data_seed}};
}

SolverConfig solver_config(const SolverOptions& o, const Matrix& x) {
    if (o.q == 0) throw InvalidArgument("--q must be positive");
    SolverConfig cfg;
    cfg.q = o.q;
    cfg.p = o.p ? o.p : default_inner_rank(o.q, x.rows(), x.cols());
    cfg.set_penalties({o.rho, o.mu, o.gamma, o.lambda});
    cfg.max_iters = o.max_iters;
    cfg.rel_tol = o.tol;
    cfg.seed = o.seed;
    cfg.validate(x.rows(), x.cols());
    return cfg;
}

FilterMatrix make_bank(std::uint32_t size, double step, std::uint32_t scale, const std::string& part,
                       bool full_range = false) {
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("--angles-step must be positive");
    const double count = 180.0 / step;
    if (std::fabs(count - std::round(count)) > 1e-9)
        throw InvalidArgument("--angles-step must divide 180 degrees, got " + fmt(step));
    GaborBankSpec spec;
    spec.kernel_size = size;
    spec.orientation_step = step;
    spec.n_orient = static_cast<std::uint32_t>(std::lround(count));
    spec.n_scale = std::max<std::uint32_t>(scale, 1);
    if (part == "real")
        spec.part = GaborPart::Real;
    else if (part == "imag")
        spec.part = GaborPart::Imaginary;
    else
        throw InvalidArgument("--part must be real or imag");
    spec.validate();
    return build_filter_matrix(spec, scale, angle_lattice(step, full_range ? 360.0 : 180.0));
}

FilterMatrix bank_for_sweep(const SweepOptions& o) {
    if (!o.bank.empty()) return deserialize_bank(o.bank);
    return make_bank(o.size, 5.0, 1, "real");
}

std::vector<Penalties> read_grid(const std::string& spec) {
    if (spec == "builtin") return builtin_sweep_grid();
    std::ifstream in(spec);
    if (!in) throw IoError("cannot open grid file: " + spec);
    std::vector<Penalties> grid;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (grid.empty() && line.find("rho") != std::string::npos) continue;
        std::stringstream ss(line);
        std::vector<double> v;
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw InvalidArgument(spec + ":" + std::to_string(no) + ": not a number: '" + cell + "'");
            }
        }
        if (v.size() != 4) throw InvalidArgument(spec + ":" + std::to_string(no) + ": expected rho,mu,gamma,lambda");
        grid.push_back({v[0], v[1], v[2], v[3]});
    }
    if (grid.empty()) throw InvalidArgument("grid file has no rows: " + spec);
    return grid;
}

std::string data_dir(const DataOptions& d) {
    if (!d.dir.empty()) return d.dir;
    if (const char* env = std::getenv("OCN_DATA_DIR"); env && *env) return env;
    throw InvalidArgument("no data directory: pass --data or set OCN_DATA_DIR");
}

data::LabeledImages load_split(const DataOptions& d, data::Split split, std::size_t n) {
    data::LabeledImages all = data::load_mnist(data_dir(d), split);
    if (n == 0 || n == all.size()) return all;
    if (n > all.size())
        throw InvalidArgument("requested " + std::to_string(n) + " images but the split holds " + std::to_string(all.size()));
    return data::subset(all, n, d.data_seed);
}

std::optional<nn::Rotation> test_rotation(const DataOptions& d) {
    if (!d.rotated) return std::nullopt;
    return nn::Rotation{data::whole_degree_angles(), d.data_seed};
}

json eval_json(const nn::EvalReport& r, const nn::NetworkConfig& nc, bool rotated) {
    return {{"schema", kEvalSchema},
            {"arch", nc.use_ocn ? "ocn" : "cnn"},
            {"widths", nn::format_widths(nc.stage_widths)},
            {"kernel", nc.kernel_size},
            {"orientations", nc.use_ocn ? nc.n_orient : 0},
            {"rotated", rotated},
            {"count", r.count},
            {"error_rate", r.error_rate},
            {"per_class_errors", r.per_class_errors},
            {"param_count", r.param_count}};
}

// Subcommands ---------------------------------------------------------------

void run_gen_bank(const BankOptions& o, Manifest& m) {
    m.config = {{"size", o.size}, {"angles_step", o.angles_step}, {"scale", o.scale}, {"part", o.part},
                {"full_range", o.full_range}, {"out", o.out}};
    if (o.size < 3 || o.size % 2 == 0) throw InvalidArgument("--size must be odd and >= 3, got " + std::to_string(o.size));
    if (o.scale == 0) throw InvalidArgument("--scale must be >= 1");
    const FilterMatrix fm = make_bank(o.size, o.angles_step, o.scale, o.part, o.full_range);
    require_writable(o.out);
    serialize_bank(fm, o.out);
    m.outputs["bank"] = o.out;
    m.results = {{"columns", fm.x.cols()}, {"rows", fm.x.rows()}};
    std::cout << "bank: " << fm.x.cols() << " columns of " << o.size << "x" << o.size << " kernels (step " << fmt(o.angles_step)
              << " deg, scale " << o.scale << ") -> " << o.out << "\n";
}

void run_fit(const FitOptions& o, Manifest& m) {
    m.config = solver_json(o.solver);
    m.config["bank"] = o.bank;
    m.config["out"] = o.out;
    m.seed = o.solver.seed;
    if (o.solver.q == 0) throw InvalidArgument("--q must be positive");
    const FilterMatrix fm = deserialize_bank(o.bank);
    const SolverConfig cfg = solver_config(o.solver, fm.x);
    m.config["p"] = cfg.p;
    const fs::path history = o.history.empty() ? fs::path(o.out + ".convergence.csv") : fs::path(o.history);
    require_writable(o.out);
    require_writable(history);

    const FactorizationState st = fit(fm.x, cfg);
    const double degree = approximation_degree(fm.x, st, Reconstruction::Landmarks);
    serialize_landmarks(make_landmark_bank(fm, st), o.out);
    std::string csv = "iteration,objective\n";
    for (std::size_t i = 0; i < st.objective_history.size(); ++i)
        csv += std::to_string(i) + "," + fmt(st.objective_history[i]) + "\n";
    write_text(history, csv);

    m.outputs["landmarks"] = o.out;
    m.outputs["convergence"] = history.string();
    m.results = {{"D", degree}, {"iterations", st.iters_run}, {"objective", st.objective_history.back()}};
    std::cout << "D = " << fmt(degree) << "\niterations = " << st.iters_run << "\nobjective = "
              << fmt(st.objective_history.back()) << "\n";
}

void run_sweep(const SweepOptions& o, Manifest& m) {
    m.config = solver_json(o.solver);
    m.config["bank"] = o.bank.empty() ? json("builtin-5deg-W" + std::to_string(o.size)) : json(o.bank);
    m.config["grid"] = o.grid;
    m.config["jobs"] = o.jobs;
    m.config["out"] = o.out;
    m.seed = o.solver.seed;
    if (o.jobs == 0) throw InvalidArgument("--jobs must be positive");
    const std::vector<Penalties> grid = read_grid(o.grid);
    const FilterMatrix fm = bank_for_sweep(o);
    SolverOptions base = o.solver;
    const SolverConfig tmpl = solver_config(base, fm.x);
    require_writable(o.out);

    const auto rows = parameter_sweep(fm.x, grid, tmpl, o.jobs);
    std::string csv = "rho,mu,gamma,lambda,D,iters,objective,error\n";
    for (const SweepRow& r : rows) {
        std::string err = r.error;
        for (char& c : err)
            if (c == ',' || c == '\n' || c == '"') c = ' ';
        csv += fmt(r.penalties.rho) + "," + fmt(r.penalties.mu) + "," + fmt(r.penalties.gamma) + "," +
               fmt(r.penalties.lambda) + "," + (r.error.empty() ? fmt(r.degree) : "") + "," +
               (r.error.empty() ? std::to_string(r.iters) : "") + "," + (r.error.empty() ? fmt(r.objective) : "") + "," +
               err + "\n";
    }
    write_text(o.out, csv);
    std::size_t failed = 0;
    for (const SweepRow& r : rows) failed += r.error.empty() ? 0 : 1;
    m.outputs["sweep"] = o.out;
    m.results = {{"rows", rows.size()}, {"failed_rows", failed}};
    if (!rows.empty() && rows.front().error.empty()) {
        const Penalties& b = rows.front().penalties;
        m.results["best"] = {{"rho", b.rho}, {"mu", b.mu}, {"gamma", b.gamma}, {"lambda", b.lambda}, {"D", rows.front().degree}};
        std::cout << "best: rho=" << fmt(b.rho) << " mu=" << fmt(b.mu) << " gamma=" << fmt(b.gamma)
                  << " lambda=" << fmt(b.lambda) << " D=" << fmt(rows.front().degree) << "\n";
    }
    std::cout << rows.size() << " rows (" << failed << " failed) -> " << o.out << "\n";
}

nn::NetworkConfig network_config(const TrainOptions& o) {
    nn::NetworkConfig nc;
    if (o.arch != "ocn" && o.arch != "cnn") throw InvalidArgument("--arch must be ocn or cnn");
    nc.use_ocn = o.arch == "ocn";
    nc.stage_widths = nn::parse_widths(o.widths);
    nc.kernel_size = o.kernel;
    nc.n_orient = o.orientations;
    nc.n_scale = o.scales;
    nc.hidden_units = o.hidden;
    nc.dropout = o.dropout;
    nc.validate();
    return nc;
}

void run_train(const TrainOptions& o, Manifest& m) {
    m.config = {{"arch", o.arch},       {"widths", o.widths},         {"kernel", o.kernel},
                {"orientations", o.orientations}, {"scales", o.scales}, {"hidden", o.hidden},
                {"dropout", o.dropout}, {"landmarks", o.landmarks},   {"epochs", o.epochs},
                {"batch", o.batch},     {"lr", o.lr},                 {"weight_decay", o.weight_decay},
                {"lr_period", o.lr_period}, {"seed", o.seed},         {"out", o.out}};
    m.config.update(data_json(o.data));
    m.seed = o.seed;

    const nn::NetworkConfig nc = network_config(o);
    nn::TrainConfig tc;
    tc.batch_size = o.batch;
    tc.lr = o.lr;
    tc.weight_decay = o.weight_decay;
    tc.lr_halving_period_epochs = o.lr_period;
    tc.epochs = o.epochs;
    tc.seed = o.seed;
    tc.validate();
    if (nc.use_ocn && o.landmarks.empty()) throw InvalidArgument("--landmarks is required for --arch ocn");
    if (!nc.use_ocn && !o.landmarks.empty()) throw InvalidArgument("--landmarks only applies to --arch ocn");

    const fs::path metrics = o.metrics.empty() ? fs::path(o.out + ".csv") : fs::path(o.metrics);
    require_writable(o.out);
    require_writable(metrics);
    if (!o.report.empty()) require_writable(o.report);

    std::vector<LandmarkBank> banks;
    for (const std::string& p : o.landmarks) banks.push_back(deserialize_landmarks(p));
    nn::Network net = nn::build_network(nc, banks, o.seed);

    data::LabeledImages train_set = load_split(o.data, data::Split::Train, o.data.train_size);
    if (o.data.rotate_train) train_set = data::rotate_dataset(train_set, data::whole_degree_angles(), o.data.data_seed + 1);
    const data::LabeledImages test_set = load_split(o.data, data::Split::Test, o.data.test_size);
    const auto rotation = test_rotation(o.data);

    std::cout << (nc.use_ocn ? "OCN" : "CNN") << " " << nn::format_widths(nc.stage_widths) << " k=" << nc.kernel_size
              << ": " << net.param_count() << " parameters, " << train_set.size() << " train / " << test_set.size()
              << " test images\n";
    const nn::TrainResult result = nn::train(net, train_set, tc, &test_set, rotation, [&](const nn::EpochRecord& e) {
        std::cout << "epoch " << e.epoch << "/" << tc.epochs << "  loss " << fmt(e.train_loss) << "  test error "
                  << fmt(e.test_error.value_or(NAN)) << "%  lr " << fmt(e.lr) << "  " << fmt(e.seconds) << " s\n"
                  << std::flush;
    });
    nn::save_checkpoint(net, o.out);
    nn::write_epoch_csv(result.epochs, metrics);
    const nn::EvalReport report = nn::evaluate(net, test_set, rotation);
    if (!o.report.empty()) write_text(o.report, eval_json(report, nc, rotation.has_value()).dump(2) + "\n");

    m.outputs["checkpoint"] = o.out;
    m.outputs["metrics"] = metrics.string();
    if (!o.report.empty()) m.outputs["report"] = o.report;
    double train_seconds = 0.0;
    for (const auto& e : result.epochs) train_seconds += e.seconds;
    m.results = {{"param_count", net.param_count()},
                 {"error_rate", report.error_rate},
                 {"final_train_loss", result.epochs.empty() ? json(nullptr) : json(result.epochs.back().train_loss)},
                 {"train_seconds", train_seconds},
                 {"eval_wall_time_s", report.wall_time_s}};
    std::cout << "test error " << fmt(report.error_rate) << "% on " << report.count << (rotation ? " rotated" : "")
              << " images -> " << o.out << "\n";
}

void run_eval(const EvalOptions& o, Manifest& m) {
    m.config = {{"checkpoint", o.checkpoint}, {"out", o.out}};
    m.config.update(data_json(o.data));
    m.seed = o.data.data_seed;
    require_writable(o.out);
    nn::Network net = nn::load_checkpoint(o.checkpoint);
    const data::LabeledImages test_set = load_split(o.data, data::Split::Test, o.data.test_size);
    const auto rotation = test_rotation(o.data);
    const nn::EvalReport r = nn::evaluate(net, test_set, rotation);
    write_text(o.out, eval_json(r, net.config(), rotation.has_value()).dump(2) + "\n");
    m.outputs["report"] = o.out;
    m.results = {{"error_rate", r.error_rate}, {"count", r.count}, {"param_count", r.param_count},
                 {"wall_time_s", r.wall_time_s}};
    std::cout << "error " << fmt(r.error_rate) << "% on " << r.count << (rotation ? " rotated" : "") << " images ("
              << r.param_count << " parameters) -> " << o.out << "\n";
}

// CLI wiring ----------------------------------------------------------------

void add_solver_flags(CLI::App* app, SolverOptions& s) {
    app->add_option("--q", s.q, "Number of landmark filters")->capture_default_str();
    app->add_option("--p", s.p, "Inner rank (0: 2q capped by the bank size)")->capture_default_str();
    app->add_option("--lambda", s.lambda, "Nuclear-norm weight on U")->capture_default_str();
    app->add_option("--mu", s.mu, "Nuclear-norm weight on V")->capture_default_str();
    app->add_option("--gamma", s.gamma, "Sparsity weight on Z")->capture_default_str();
    app->add_option("--rho", s.rho, "Coupling weight on V - YZ")->capture_default_str();
    app->add_option("--max-iters", s.max_iters, "Iteration cap")->capture_default_str();
    app->add_option("--tol", s.tol, "Relative objective change that stops the solver")->capture_default_str();
    app->add_option("--seed", s.seed, "Initialization seed")->capture_default_str();
}

void add_data_flags(CLI::App* app, DataOptions& d, bool with_train) {
    app->add_option("--data", d.dir, "Directory with the IDX files (default: $OCN_DATA_DIR)");
    if (with_train) app->add_option("--train-size", d.train_size, "Stratified training subset, 0 for all")->capture_default_str();
    app->add_option("--test-size", d.test_size, "Stratified test subset, 0 for all")->capture_default_str();
    app->add_flag("--rotated", d.rotated, "Rotate each test image by a seeded whole-degree angle");
    if (with_train) app->add_flag("--rotate-train", d.rotate_train, "Rotate the training images the same way");
    app->add_option("--data-seed", d.data_seed, "Seed for subsets and rotations")->capture_default_str();
}

fs::path manifest_path(const std::string& flag, const std::string& primary) {
    if (!flag.empty()) return flag;
    if (!primary.empty()) return primary + ".manifest.json";
    return "ocn-manifest.json";
}

} // namespace

int main(int argc, char** argv) {
    const auto t0 = std::chrono::steady_clock::now();
    Manifest m;
    for (int i = 0; i < argc; ++i) m.command_line.push_back(argv[i]);

    CLI::App app{"Landmark Gabor filters and orientation-modulated networks"};
    app.set_config("--config", "", "Read flags from a TOML/INI file; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();
    std::string manifest_flag;
    app.add_option("--manifest", manifest_flag, "Run manifest path (default: <primary output>.manifest.json)");

    BankOptions bank_opts;
    auto* gen = app.add_subcommand("gen-bank", "Write an oriented Gabor filter bank");
    gen->add_option("--size", bank_opts.size, "Kernel width W (odd)")->capture_default_str();
    gen->add_option("--angles-step", bank_opts.angles_step, "Orientation step in degrees (divides 180)")->capture_default_str();
    gen->add_option("--scale", bank_opts.scale, "Scale index v >= 1")->capture_default_str();
    gen->add_option("--part", bank_opts.part, "real or imag")->capture_default_str();
    gen->add_flag("--full-range", bank_opts.full_range, "Cover [0, 360) instead of [0, 180)");
    gen->add_option("--out", bank_opts.out, "Output bank file")->required();

    FitOptions fit_opts;
    auto* fitc = app.add_subcommand("fit-lgf", "Fit landmark filters to a bank");
    fitc->add_option("--bank", fit_opts.bank, "Input bank file")->required();
    add_solver_flags(fitc, fit_opts.solver);
    fitc->add_option("--out", fit_opts.out, "Output landmark file")->required();
    fitc->add_option("--history", fit_opts.history, "Convergence CSV (default: <out>.convergence.csv)");

    SweepOptions sweep_opts;
    auto* sweep = app.add_subcommand("sweep", "Fit once per penalty tuple and rank by approximation degree");
    sweep->add_option("--grid", sweep_opts.grid, "'builtin' or a CSV of rho,mu,gamma,lambda rows")->capture_default_str();
    sweep->add_option("--bank", sweep_opts.bank, "Input bank file (default: the 5-degree bank at --size)");
    sweep->add_option("--size", sweep_opts.size, "Kernel width of the default bank")->capture_default_str();
    sweep->add_option("--jobs", sweep_opts.jobs, "Parallel fits")->capture_default_str();
    add_solver_flags(sweep, sweep_opts.solver);
    sweep->add_option("--out", sweep_opts.out, "Output CSV")->required();

    TrainOptions train_opts;
    auto* trainc = app.add_subcommand("train", "Train an OCN or a plain CNN");
    trainc->add_option("--arch", train_opts.arch, "ocn or cnn")->capture_default_str();
    trainc->add_option("--widths", train_opts.widths, "Stage widths a-b-c-d")->capture_default_str();
    trainc->add_option("--kernel", train_opts.kernel, "Kernel size 3, 5 or 7")->capture_default_str();
    trainc->add_option("--orientations", train_opts.orientations, "Orientations U")->capture_default_str();
    trainc->add_option("--scales", train_opts.scales, "Scales V (one --landmarks file each)")->capture_default_str();
    trainc->add_option("--hidden", train_opts.hidden, "Hidden classifier units, 0 for none")->capture_default_str();
    trainc->add_option("--dropout", train_opts.dropout, "Dropout rate on the classifier input")->capture_default_str();
    trainc->add_option("--landmarks", train_opts.landmarks, "Landmark file(s), required for ocn");
    add_data_flags(trainc, train_opts.data, true);
    trainc->add_option("--epochs", train_opts.epochs, "Epochs, 0 evaluates the initial network")->capture_default_str();
    trainc->add_option("--batch", train_opts.batch, "Mini-batch size")->capture_default_str();
    trainc->add_option("--lr", train_opts.lr, "Initial learning rate")->capture_default_str();
    trainc->add_option("--weight-decay", train_opts.weight_decay, "Weight decay")->capture_default_str();
    trainc->add_option("--lr-period", train_opts.lr_period, "Epochs between learning-rate halvings")->capture_default_str();
    trainc->add_option("--seed", train_opts.seed, "Initialization and shuffling seed")->capture_default_str();
    trainc->add_option("--out", train_opts.out, "Output checkpoint")->required();
    trainc->add_option("--metrics", train_opts.metrics, "Per-epoch CSV (default: <out>.csv)");
    trainc->add_option("--report", train_opts.report, "Also write the final evaluation JSON here");

    EvalOptions eval_opts;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    evalc->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required();
    add_data_flags(evalc, eval_opts.data, false);
    evalc->add_option("--out", eval_opts.out, "Output report JSON")->required();

    int code = Ok;
    std::string error;
    std::string primary;
    try {
        app.parse(argc, argv);
        if (gen->parsed()) {
            m.subcommand = "gen-bank";
            primary = bank_opts.out;
            run_gen_bank(bank_opts, m);
        } else if (fitc->parsed()) {
            m.subcommand = "fit-lgf";
            primary = fit_opts.out;
            run_fit(fit_opts, m);
        } else if (sweep->parsed()) {
            m.subcommand = "sweep";
            primary = sweep_opts.out;
            run_sweep(sweep_opts, m);
        } else if (trainc->parsed()) {
            m.subcommand = "train";
            primary = train_opts.out;
            run_train(train_opts, m);
        } else if (evalc->parsed()) {
            m.subcommand = "eval";
            primary = eval_opts.out;
            run_eval(eval_opts, m);
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        code = Usage;
        error = e.what();
        for (const auto* sub : app.get_subcommands()) m.subcommand = sub->get_name();
    } catch (const InvalidArgument& e) {
        code = Usage;
        error = e.what();
    } catch (const IoError& e) {
        code = Data;
        error = e.what();
    } catch (const NumericalError& e) {
        code = Numerical;
        error = e.what();
    } catch (const std::exception& e) {
        code = Internal;
        error = e.what();
    }
    if (code != Ok) std::cerr << "error: " << error << "\n";

    json out = {{"schema", kManifestSchema},
                {"command_line", m.command_line},
                {"subcommand", m.subcommand},
                {"config", m.config},
                {"seed", m.seed ? json(*m.seed) : json(nullptr)},
                {"git_describe", LGF_GIT_DESCRIBE},
                {"simd", std::string(simd::active().name)},
                {"outputs", m.outputs},
                {"results", m.results},
                {"status", code == Ok ? "ok" : "error"},
                {"exit_code", code},
                {"error", code == Ok ? json(nullptr) : json(error)},
                {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
    const fs::path mpath = manifest_path(manifest_flag, primary);
    std::ofstream mf(mpath, std::ios::trunc);
    mf << out.dump(2) << "\n";
    if (!mf) {
        std::cerr << "error: cannot write manifest " << mpath.string() << "\n";
        if (code == Ok) code = Data;
    }
    return code;
}
