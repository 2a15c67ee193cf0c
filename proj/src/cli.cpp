#include "cdbm/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

#include "cdbm/ais.hpp"
#include "cdbm/conditioning.hpp"
#include "cdbm/io.hpp"
#include "cdbm/kpca.hpp"
#include "cdbm/sampler.hpp"
#include "cdbm/trainer.hpp"

namespace cdbm {

namespace fs = std::filesystem;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    const double mag = std::abs(v);
    const auto fmt = v == 0.0 || (mag >= 1e-5 && mag < 1e15) ? std::chars_format::fixed : std::chars_format::scientific;
    const auto res = std::to_chars(buf, buf + sizeof buf, v, fmt);
    return {buf, res.ptr};
}

std::string GridCell::name() const {
    return "b" + format_double(bias) + "_s" + format_double(offset_logit);
}

std::vector<GridCell> experiment_grid() {
    std::vector<GridCell> cells;
    for (double b : {2.0, 0.0, -2.0}) {
        for (double s : {2.0, 0.0, -2.0}) cells.push_back({b, s});
    }
    return cells;
}

double parse_offset(const std::string& text) {
    std::string t;
    for (char ch : text) {
        if (!std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    }
    double v = 0.0;
    std::size_t used = 0;
    try {
        if (t.rfind("sigm(", 0) == 0 && t.size() > 6 && t.back() == ')') {
            const std::string inner = t.substr(5, t.size() - 6);
            v = sigm(std::stod(inner, &used));
            if (used != inner.size()) throw std::invalid_argument("");
        } else {
            v = std::stod(t, &used);
            if (used != t.size()) throw std::invalid_argument("");
        }
    } catch (const std::exception&) {
        throw std::invalid_argument("offset must be a probability or sigm(x), got '" + text + "'");
    }
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("offset must lie in (0,1), got '" + text + "'");
    return v;
}

namespace {

struct Options {
    std::string command;
    std::string data_dir;
    std::string out = ".";
    std::uint64_t seed = 1;
    double bias = 0.0;
    std::string offset = "0.5";
    double epochs = 10.0;
    double lr = 0.0005;
    int minibatch = 25;
    int particles = 25;
    int hidden1 = 400;
    int hidden2 = 100;
    int ais_k = 2500;
    int ais_runs = 500;
    int jobs = 1;
    bool grid = false;
    int subset_n = -1;
    std::string checkpoint;
    std::string config;
    std::vector<double> sigma_grid = kDefaultSigmaGrid;
    int gibbs_steps = 100;
    int n_units = 50;
    int n_dirs = 20;
    std::int64_t mc_samples = 100000;
    std::string directions = "krylov";
    int n = 100;
    int burn_in = 1000;
    int thin = 50;
    int n_filters = 100;
};

class InputError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::mutex log_mutex;

void log_line(const std::string& s) {
    std::lock_guard lock(log_mutex);
    std::cerr << s << '\n';
}

fs::path require_data_dir(const Options& o) {
    if (o.data_dir.empty()) throw InputError("no data directory: pass --data-dir or set CDBM_DATA_DIR");
    return o.data_dir;
}

fs::path prepare_out(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

Dbm2Params require_checkpoint(const Options& o) {
    if (o.checkpoint.empty()) throw InputError("--checkpoint is required");
    try {
        return load_checkpoint(o.checkpoint);
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
}

BinarizedDataset load_split(const Options& o, const std::string& prefix) {
    try {
        return load_mnist(require_data_dir(o), prefix);
    } catch (const IdxError& e) {
        throw InputError(e.what());
    }
}

/// Every resolved setting as `key = value`, readable back through --config.
std::string manifest(const Options& o, const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ostringstream s;
    s << "command = " << o.command << '\n'
      << "data-dir = " << o.data_dir << '\n'
      << "seed = " << o.seed << '\n'
      << "bias = " << format_double(o.bias) << '\n'
      << "offset = " << o.offset << '\n'
      << "epochs = " << format_double(o.epochs) << '\n'
      << "lr = " << format_double(o.lr) << '\n'
      << "minibatch = " << o.minibatch << '\n'
      << "particles = " << o.particles << '\n'
      << "hidden1 = " << o.hidden1 << '\n'
      << "hidden2 = " << o.hidden2 << '\n'
      << "ais-k = " << o.ais_k << '\n'
      << "ais-runs = " << o.ais_runs << '\n'
      << "jobs = " << o.jobs << '\n'
      << "grid = " << (o.grid ? "true" : "false") << '\n'
      << "subset-n = " << o.subset_n << '\n'
      << "checkpoint = " << o.checkpoint << '\n'
      << "sigma-grid = [";
    for (std::size_t i = 0; i < o.sigma_grid.size(); ++i) s << (i ? "," : "") << format_double(o.sigma_grid[i]);
    s << "]\n"
      << "gibbs-steps = " << o.gibbs_steps << '\n'
      << "n-units = " << o.n_units << '\n'
      << "n-dirs = " << o.n_dirs << '\n'
      << "mc-samples = " << o.mc_samples << '\n'
      << "directions = " << o.directions << '\n'
      << "n = " << o.n << '\n'
      << "burn-in = " << o.burn_in << '\n'
      << "thin = " << o.thin << '\n'
      << "n-filters = " << o.n_filters << '\n';
    for (const auto& [k, v] : extra) s << k << " = " << v << '\n';
    return s.str();
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ------------------------------------------------------------------- train

struct CellOutcome {
    bool diverged = false;
    std::string message;
};

CellOutcome train_cell(const Options& o, const BinarizedDataset& data, double bias, double offset,
                       const fs::path& dir) {
    TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.minibatch_size = o.minibatch;
    cfg.n_particles = o.particles;
    cfg.epochs = o.epochs;
    cfg.b0 = cfg.c0 = bias;
    cfg.beta0 = cfg.gamma0 = offset;
    cfg.seed = o.seed;
    cfg.n_hidden1 = o.hidden1;
    cfg.n_hidden2 = o.hidden2;
    cfg.validate();

    prepare_out(dir);
    TrainOptions topts;
    topts.on_snapshot = [&](const Snapshot& s, const TrainState& st) {
        save_checkpoint(st.theta_avg, dir / ("ckpt_e" + s.tag + ".cdbm"));
        log_line(dir.string() + ": epoch " + s.tag + " (update " + std::to_string(s.update) + ")");
    };

    std::vector<std::pair<std::string, std::string>> extra{
        {"cell-bias", format_double(bias)},
        {"cell-offset", format_double(offset)},
        {"train-samples", std::to_string(data.x.rows())},
        {"data-checksum", hex64(data.checksum)},
    };
    CellOutcome outcome;
    try {
        const TrainResult r = train(data.x, cfg, topts);
        std::ostringstream csv;
        csv << "update,epoch,mean_abs_dW,mean_abs_dV,free_energy_proxy\n";
        for (const MetricsRow& m : r.metrics) {
            csv << m.update << ',' << format_double(m.epoch) << ',' << format_double(m.stats.mean_abs_dW) << ','
                << format_double(m.stats.mean_abs_dV) << ',' << format_double(m.stats.free_energy_proxy) << '\n';
        }
        write_text_atomic(dir / "metrics.csv", csv.str());
        extra.emplace_back("status", "ok");
    } catch (const DivergenceError& e) {
        outcome = {true, e.what()};
        extra.emplace_back("status", "diverged");
        extra.emplace_back("diverged-at-update", std::to_string(e.update()));
        log_line(dir.string() + ": divergence: " + e.what());
    }
    Options cell = o;
    cell.bias = bias;
    cell.offset = format_double(offset);
    cell.grid = false;
    write_text_atomic(dir / "run_manifest", manifest(cell, extra));
    return outcome;
}

int cmd_train(const Options& o) {
    BinarizedDataset data = load_split(o, "train");
    if (o.subset_n > 0) data = subset(data, o.subset_n, o.seed);
    const fs::path out = prepare_out(o.out);

    struct Job {
        double bias;
        double offset;
        fs::path dir;
    };
    std::vector<Job> jobs;
    if (o.grid) {
        for (const GridCell& c : experiment_grid()) jobs.push_back({c.bias, c.offset(), out / c.name()});
    } else {
        jobs.push_back({o.bias, parse_offset(o.offset), out});
    }

    std::vector<CellOutcome> outcomes(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                outcomes[i] = train_cell(o, data, jobs[i].bias, jobs[i].offset, jobs[i].dir);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        const int workers = std::max(1, std::min<int>(o.jobs, static_cast<int>(jobs.size())));
        std::vector<std::jthread> pool;
        for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
        worker();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    bool diverged = false;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        std::cout << jobs[i].dir.string() << ": " << (outcomes[i].diverged ? "diverged" : "ok") << '\n';
        diverged = diverged || outcomes[i].diverged;
    }
    return diverged ? kExitDivergence : kExitOk;
}

// ---------------------------------------------------------------- analyses

BinarizedDataset eval_points(const Options& o, Index mx) {
    BinarizedDataset test = load_split(o, "t10k");
    if (test.x.cols() != mx) throw InputError("checkpoint visible size does not match the data");
    const Index n = o.subset_n > 0 ? o.subset_n : 500;
    if (n > test.x.rows()) throw InputError("--subset-n exceeds the held-out set size");
    return subset(test, n, o.seed);
}

int cmd_eval_gen(const Options& o) {
    const Dbm2Params m = require_checkpoint(o);
    const BinarizedDataset test = eval_points(o, m.mx());
    const fs::path out = prepare_out(o.out);

    AisConfig cfg;
    cfg.K = o.ais_k;
    cfg.n_free_runs = o.ais_runs;
    cfg.seed = o.seed;
    cfg.jobs = o.jobs;
    const AisResult r = estimate_loglik(m, test.x, cfg);

    std::ostringstream csv;
    csv << "run_id,kind,point_id,log_weight\n";
    std::size_t run = 0;
    for (double w : r.log_weights_free) csv << run++ << ",free,-1," << format_double(w) << '\n';
    for (std::size_t p = 0; p < r.log_weights_clamped.size(); ++p) {
        for (double w : r.log_weights_clamped[p]) csv << run++ << ",clamped," << p << ',' << format_double(w) << '\n';
    }
    write_text_atomic(out / "ais.csv", csv.str());

    std::ostringstream summary;
    summary << "loglik_estimate,log_z_ratio_estimate,K,n_free_runs,n_points,seed\n"
            << format_double(r.loglik_estimate) << ',' << format_double(r.log_z_ratio_estimate) << ',' << r.K << ','
            << r.log_weights_free.size() << ',' << r.log_weights_clamped.size() << ',' << r.seed << '\n';
    write_text_atomic(out / "ais_summary.csv", summary.str());
    write_text_atomic(out / "run_manifest", manifest(o, {{"data-checksum", hex64(test.checksum)}}));

    std::cout << "loglik_estimate=" << format_double(r.loglik_estimate) << '\n';
    return kExitOk;
}

int cmd_eval_disc(const Options& o) {
    const Dbm2Params m = require_checkpoint(o);
    const BinarizedDataset test = eval_points(o, m.mx());
    const fs::path out = prepare_out(o.out);
    if (o.sigma_grid.empty()) throw InputError("--sigma-grid must not be empty");
    for (double s : o.sigma_grid) {
        if (!(s > 0.0)) throw InputError("--sigma-grid entries must be > 0");
    }

    const Matrix labels = one_hot(test.labels);
    const std::vector<Matrix> features = layer_features(m, test.x, o.gibbs_steps, o.seed);
    const ResidualCurves rc = residual_curves_from_features(features, labels, o.sigma_grid);

    std::ostringstream res;
    res << "layer,d,sigma2,residual\n";
    for (std::size_t l = 0; l < rc.residual.size(); ++l) {
        for (Index d = 0; d < rc.residual[l].rows(); ++d) {
            for (std::size_t s = 0; s < o.sigma_grid.size(); ++s) {
                res << l << ',' << d << ',' << format_double(o.sigma_grid[s]) << ','
                    << format_double(rc.residual[l](d, static_cast<Index>(s))) << '\n';
            }
        }
    }
    write_text_atomic(out / "residuals.csv", res.str());

    std::ostringstream auc;
    auc << "layer,auc\n";
    for (Index l = 0; l < rc.auc.size(); ++l) auc << l << ',' << format_double(rc.auc(l)) << '\n';
    write_text_atomic(out / "auc.csv", auc.str());

    const std::size_t top = features.size() - 1;
    const double sigma2 = o.sigma_grid[static_cast<std::size_t>(rc.argmin_sigma(static_cast<Index>(top), 2))];
    const Matrix pcs = kpca_projection_2d(rbf_kernel_matrix(features[top], sigma2));
    std::ostringstream scatter;
    scatter << "sample_id,label,pc1,pc2\n";
    for (Index i = 0; i < pcs.rows(); ++i) {
        scatter << i << ',' << test.labels[static_cast<std::size_t>(i)] << ',' << format_double(pcs(i, 0)) << ','
                << format_double(pcs(i, 1)) << '\n';
    }
    write_text_atomic(out / "scatter.csv", scatter.str());
    write_text_atomic(out / "run_manifest", manifest(o, {{"data-checksum", hex64(test.checksum)},
                                                         {"scatter-sigma2", format_double(sigma2)}}));

    for (Index l = 0; l < rc.auc.size(); ++l) std::cout << "auc[" << l << "]=" << format_double(rc.auc(l)) << '\n';
    return kExitOk;
}

int cmd_conditioning(const Options& o) {
    const fs::path out = prepare_out(o.out);
    const SubspaceKind kind = o.directions == "random" ? SubspaceKind::Random : SubspaceKind::Krylov;
    std::ostringstream csv;
    csv << "bias,offset,lambda_ratio,n_dirs,n_samples,seed\n";
    for (const GridCell& c : experiment_grid()) {
        const ConditioningResult r = condition_number(decoupled_machine(o.n_units, c.bias, c.offset()), o.n_dirs,
                                                      o.mc_samples, o.seed, kind);
        csv << format_double(c.bias) << ',' << format_double(c.offset()) << ','
            << format_double(r.condition_number) << ',' << o.n_dirs << ',' << r.n_mc_samples << ',' << r.seed
            << '\n';
        std::cout << c.name() << ": " << format_double(r.condition_number) << '\n';
    }
    write_text_atomic(out / "conditioning.csv", csv.str());
    write_text_atomic(out / "run_manifest", manifest(o, {}));
    return kExitOk;
}

int grid_side(Index n) { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))); }

void require_square_visible(const Dbm2Params& m) {
    if (m.mx() != 784) throw InputError("image output needs 784 visible units");
}

int cmd_sample(const Options& o) {
    const Dbm2Params m = require_checkpoint(o);
    require_square_visible(m);
    if (o.n < 1 || o.burn_in < 0 || o.thin < 1) throw InputError("need --n >= 1, --burn-in >= 0, --thin >= 1");
    const fs::path out = prepare_out(o.out);
    Rng rng(o.seed);
    const Matrix digits = generate_digits(m, o.n, o.burn_in, o.thin, rng);
    const int side = grid_side(o.n);
    write_filter_grid(digits, (o.n + side - 1) / side, side, out / "samples.pgm");
    write_text_atomic(out / "run_manifest", manifest(o, {}));
    std::cout << (out / "samples.pgm").string() << '\n';
    return kExitOk;
}

int cmd_filters(const Options& o) {
    const Dbm2Params m = require_checkpoint(o);
    require_square_visible(m);
    if (o.n_filters < 1) throw InputError("--n-filters must be >= 1");
    const fs::path out = prepare_out(o.out);
    auto emit = [&](const Matrix& rows, const std::string& file) {
        const Index n = std::min<Index>(o.n_filters, rows.rows());
        const int side = grid_side(n);
        write_filter_grid(rows.topRows(n), static_cast<int>((n + side - 1) / side), side, out / file);
        std::cout << (out / file).string() << '\n';
    };
    emit(m.W, "filters_layer1.pgm");
    emit(backproject_layer2(m), "filters_layer2.pgm");
    write_text_atomic(out / "run_manifest", manifest(o, {}));
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
    Options o;
    CLI::App app{"Centered deep Boltzmann machines: training and analysis", "cdbm"};
    app.set_config("--config", "", "Read `key = value` settings; command-line flags take precedence");
    app.allow_config_extras(true);
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    app.add_option("--data-dir", o.data_dir, "Directory holding the MNIST IDX files")->envname("CDBM_DATA_DIR");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--seed", o.seed);
    app.add_option("--bias", o.bias, "Initial hidden biases b0 = c0");
    app.add_option("--offset", o.offset, "Hidden offsets beta = gamma, as p or sigm(x)");
    app.add_option("--epochs", o.epochs)->check(CLI::NonNegativeNumber);
    app.add_option("--lr", o.lr)->check(CLI::NonNegativeNumber);
    app.add_option("--minibatch", o.minibatch)->check(CLI::PositiveNumber);
    app.add_option("--particles", o.particles)->check(CLI::PositiveNumber);
    app.add_option("--hidden1", o.hidden1)->check(CLI::PositiveNumber);
    app.add_option("--hidden2", o.hidden2)->check(CLI::PositiveNumber);
    app.add_option("--ais-k", o.ais_k)->check(CLI::PositiveNumber);
    app.add_option("--ais-runs", o.ais_runs)->check(CLI::PositiveNumber);
    app.add_option("--jobs", o.jobs)->check(CLI::PositiveNumber);
    app.add_flag("--grid", o.grid, "Train all nine (b0, beta) cells");
    app.add_option("--subset-n", o.subset_n, "Training subset size, or number of held-out evaluation points");
    app.add_option("--checkpoint", o.checkpoint);
    app.add_option("--sigma-grid", o.sigma_grid, "Kernel widths sigma^2")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app.add_option("--gibbs-steps", o.gibbs_steps, "Clamped sweeps for mean representations")
        ->check(CLI::PositiveNumber);
    app.add_option("--n-units", o.n_units)->check(CLI::PositiveNumber);
    app.add_option("--n-dirs", o.n_dirs)->check(CLI::PositiveNumber);
    app.add_option("--mc-samples", o.mc_samples)->check(CLI::PositiveNumber);
    app.add_option("--directions", o.directions, "Projection subspace for conditioning")
        ->check(CLI::IsMember({"krylov", "random"}));
    app.add_option("--n", o.n, "Generated digits");
    app.add_option("--burn-in", o.burn_in);
    app.add_option("--thin", o.thin);
    app.add_option("--n-filters", o.n_filters);

    const std::vector<std::pair<std::string, std::string>> commands{
        {"train", "Train one cell or the full grid with PCD"},
        {"eval-gen", "AIS log-likelihood of a checkpoint"},
        {"eval-disc", "Kernel-PCA residual curves of a checkpoint"},
        {"conditioning", "Hessian condition numbers over the grid"},
        {"sample", "Generate digits from a checkpoint"},
        {"filters", "Render layer-1 and layer-2 filters"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInputError;
    }
    o.command = app.get_subcommands().front()->get_name();

    try {
        if (o.command == "train") return cmd_train(o);
        if (o.command == "eval-gen") return cmd_eval_gen(o);
        if (o.command == "eval-disc") return cmd_eval_disc(o);
        if (o.command == "conditioning") return cmd_conditioning(o);
        if (o.command == "sample") return cmd_sample(o);
        if (o.command == "filters") return cmd_filters(o);
    } catch (const DivergenceError& e) {
        std::cerr << "cdbm: divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "cdbm: " << e.what() << '\n';
        return kExitInputError;
    }
    return kExitInputError;
}

}  // namespace cdbm
