#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cdbm/cli.hpp"
#include "cdbm/io.hpp"

using namespace cdbm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("cdbm_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_split(const fs::path& dir, const std::string& prefix, std::uint32_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> px(0, 255);
    IdxTensor img;
    img.dims = {n, 28, 28};
    for (std::uint32_t i = 0; i < n * 784; ++i) img.values.push_back(static_cast<double>(px(gen)));
    IdxTensor lab;
    lab.dims = {n};
    for (std::uint32_t i = 0; i < n; ++i) lab.values.push_back(static_cast<double>(i % 10));
    write_file_atomic(dir / (prefix + "-images-idx3-ubyte"), serialize_idx(img));
    write_file_atomic(dir / (prefix + "-labels-idx1-ubyte"), serialize_idx(lab));
}

/// A synthetic 784-pixel data directory shared by the tests below.
const fs::path& data_dir() {
    static TempDir dir;
    static bool ready = false;
    if (!ready) {
        write_split(dir.path, "train", 60, 1);
        write_split(dir.path, "t10k", 40, 2);
        ready = true;
    }
    return dir.path;
}

std::string slurp(const fs::path& p) {
    const auto b = read_file(p);
    return {b.begin(), b.end()};
}

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> tiny_train(const fs::path& out) {
    return {"train",        "--data-dir",  data_dir().string(), "--out",       out.string(),
            "--hidden1",    "6",           "--hidden2",         "3",           "--minibatch",
            "10",           "--particles", "10",                "--epochs",    "1",
            "--subset-n",   "50",          "--seed",            "7"};
}

void save_zero_model(const fs::path& path, Index my = 5, Index mz = 3) {
    save_checkpoint(Dbm2Params::zeros(784, my, mz), path);
}

}  // namespace

TEST_CASE("parse_offset") {
    CHECK(parse_offset("0.5") == 0.5);
    CHECK(parse_offset("sigm(-2)") == sigm(-2.0));
    CHECK(parse_offset("sigm(2)") == sigm(2.0));
    CHECK(parse_offset("0.119") == 0.119);
    CHECK_THROWS(parse_offset("1"));
    CHECK_THROWS(parse_offset("0"));
    CHECK_THROWS(parse_offset("1.5"));
    CHECK_THROWS(parse_offset("abc"));
    CHECK_THROWS(parse_offset("sigm(2"));
    CHECK_THROWS(parse_offset("0.5x"));
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.0, 1.0, -2.0, 0.1, sigm(-2.0), 1e-300, -543.4273895434101, 3.0e20}) {
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(2.0) == "2");
}

TEST_CASE("experiment grid") {
    const auto g = experiment_grid();
    REQUIRE(g.size() == 9);
    std::set<std::string> names;
    int centered = 0;
    for (const GridCell& c : g) {
        names.insert(c.name());
        centered += c.centered();
    }
    CHECK(names.size() == 9);
    CHECK(centered == 3);
    CHECK(g[0].name() == "b2_s2");
    CHECK(g[2].name() == "b2_s-2");
    CHECK(g[0].centered());
    CHECK_FALSE(g[2].centered());
    CHECK(g[4].centered());
    CHECK(g[4].offset() == 0.5);
    CHECK(g[8].name() == "b-2_s-2");
    CHECK(g[8].centered());
}

TEST_CASE("argument and input errors exit with code 1") {
    TempDir out;
    CHECK(run_cli({}) == kExitInputError);
    CHECK(run_cli({"bogus"}) == kExitInputError);
    CHECK(run_cli({"train", "--no-such-flag"}) == kExitInputError);
    CHECK(run_cli({"--help"}) == kExitOk);
    CHECK(run_cli({"train", "--data-dir", (out.path / "missing").string(), "--out", out.path.string()}) ==
          kExitInputError);
    CHECK(run_cli({"train", "--data-dir", data_dir().string(), "--out", out.path.string(), "--offset", "2"}) ==
          kExitInputError);
    CHECK(run_cli({"eval-gen", "--data-dir", data_dir().string(), "--out", out.path.string()}) ==
          kExitInputError);

    std::ofstream(out.path / "bad.cdbm") << "garbage";
    CHECK(run_cli({"eval-gen", "--data-dir", data_dir().string(), "--out", out.path.string(), "--checkpoint",
                   (out.path / "bad.cdbm").string()}) == kExitInputError);
    CHECK(run_cli({"filters", "--out", out.path.string(), "--checkpoint", (out.path / "bad.cdbm").string()}) ==
          kExitInputError);
}

TEST_CASE("train with zero epochs writes only the initial checkpoint") {
    TempDir out;
    auto args = tiny_train(out.path);
    args[14] = "0";
    REQUIRE(run_cli(args) == kExitOk);
    std::vector<std::string> ckpts;
    for (const auto& e : fs::directory_iterator(out.path)) {
        if (e.path().extension() == ".cdbm") ckpts.push_back(e.path().filename().string());
    }
    REQUIRE(ckpts.size() == 1);
    CHECK(ckpts[0] == "ckpt_e0.00.cdbm");
    const Dbm2Params m = load_checkpoint(out.path / ckpts[0]);
    CHECK(m.W.isZero(0.0));
    CHECK(m.my() == 6);
    CHECK(m.mz() == 3);
}

TEST_CASE("train is deterministic and records its settings") {
    TempDir a, b;
    REQUIRE(run_cli(tiny_train(a.path)) == kExitOk);
    REQUIRE(run_cli(tiny_train(b.path)) == kExitOk);
    CHECK(fs::exists(a.path / "ckpt_e1.00.cdbm"));
    CHECK(read_file(a.path / "ckpt_e1.00.cdbm") == read_file(b.path / "ckpt_e1.00.cdbm"));
    CHECK(slurp(a.path / "metrics.csv") == slurp(b.path / "metrics.csv"));
    CHECK(lines(a.path / "metrics.csv").front() == "update,epoch,mean_abs_dW,mean_abs_dV,free_energy_proxy");

    const std::string manifest = slurp(a.path / "run_manifest");
    CHECK(manifest.find("seed = 7\n") != std::string::npos);
    CHECK(manifest.find("hidden1 = 6\n") != std::string::npos);
    CHECK(manifest.find("lr = 0.0005\n") != std::string::npos);
    CHECK(manifest.find("status = ok\n") != std::string::npos);
    CHECK(manifest.find("train-samples = 50\n") != std::string::npos);

    TempDir c;
    auto args = tiny_train(c.path);
    args.back() = "8";
    REQUIRE(run_cli(args) == kExitOk);
    CHECK(read_file(a.path / "ckpt_e1.00.cdbm") != read_file(c.path / "ckpt_e1.00.cdbm"));
}

TEST_CASE("grid training writes one directory per cell") {
    TempDir out;
    auto args = tiny_train(out.path);
    args.insert(args.end(), {"--grid", "--jobs", "2"});
    REQUIRE(run_cli(args) == kExitOk);
    for (const GridCell& c : experiment_grid()) {
        const fs::path dir = out.path / c.name();
        CHECK(fs::exists(dir / "ckpt_e1.00.cdbm"));
        const Dbm2Params m = load_checkpoint(dir / "ckpt_e1.00.cdbm");
        CHECK(m.beta(0) == c.offset());
        CHECK(slurp(dir / "run_manifest").find("cell-bias = " + format_double(c.bias)) != std::string::npos);
    }
}

TEST_CASE("divergence exits with code 2") {
    TempDir out;
    auto args = tiny_train(out.path);
    args.insert(args.end(), {"--lr", "1.7e308", "--epochs", "20"});
    CHECK(run_cli(args) == kExitDivergence);
    CHECK(slurp(out.path / "run_manifest").find("status = diverged") != std::string::npos);
}

TEST_CASE("config file values apply unless overridden on the command line") {
    TempDir out;
    std::ofstream(out.path / "run.cfg") << "epochs = 0\nseed = 3\nhidden1 = 5\n";
    auto args = tiny_train(out.path / "o");
    args.insert(args.end(), {"--config", (out.path / "run.cfg").string(), "--seed", "11"});
    // Drop the explicit --epochs and --hidden1 so the file supplies them.
    for (const std::string flag : {"--epochs", "--hidden1"}) {
        const auto it = std::find(args.begin(), args.end(), flag);
        args.erase(it, it + 2);
    }
    REQUIRE(run_cli(args) == kExitOk);
    const std::string manifest = slurp(out.path / "o" / "run_manifest");
    CHECK(manifest.find("seed = 11\n") != std::string::npos);
    CHECK(manifest.find("epochs = 0\n") != std::string::npos);
    CHECK(manifest.find("hidden1 = 5\n") != std::string::npos);
}

TEST_CASE("data directory falls back to the environment") {
    TempDir out;
    auto args = tiny_train(out.path);
    args.erase(args.begin() + 1, args.begin() + 3);
    args[12] = "0";
    ::setenv("CDBM_DATA_DIR", data_dir().c_str(), 1);
    CHECK(run_cli(args) == kExitOk);
    ::unsetenv("CDBM_DATA_DIR");
    CHECK(run_cli(args) == kExitInputError);
}

TEST_CASE("eval-gen on the zero model gives -784 log 2") {
    TempDir out;
    save_zero_model(out.path / "zero.cdbm");
    REQUIRE(run_cli({"eval-gen", "--data-dir", data_dir().string(), "--out", out.path.string(), "--checkpoint",
                     (out.path / "zero.cdbm").string(), "--ais-k", "20", "--ais-runs", "12", "--subset-n", "5"}) ==
            kExitOk);
    const auto summary = lines(out.path / "ais_summary.csv");
    REQUIRE(summary.size() == 2);
    CHECK(summary[0] == "loglik_estimate,log_z_ratio_estimate,K,n_free_runs,n_points,seed");
    const double ll = std::stod(summary[1].substr(0, summary[1].find(',')));
    CHECK(ll == -784.0 * std::log(2.0));
    CHECK(ll == doctest::Approx(-543.43).epsilon(1e-5));

    const auto ais = lines(out.path / "ais.csv");
    REQUIRE(ais.size() == 1 + 12 + 5);
    CHECK(ais[0] == "run_id,kind,point_id,log_weight");
    CHECK(ais[1] == "0,free,-1,0");
    CHECK(ais[13] == "12,clamped,0,0");

    CHECK(run_cli({"eval-gen", "--data-dir", data_dir().string(), "--out", out.path.string(), "--checkpoint",
                   (out.path / "zero.cdbm").string(), "--subset-n", "41"}) == kExitInputError);
}

TEST_CASE("eval-disc writes residual curves, areas and the scatter") {
    TempDir out;
    TempDir run;
    auto args = tiny_train(run.path);
    REQUIRE(run_cli(args) == kExitOk);
    REQUIRE(run_cli({"eval-disc", "--data-dir", data_dir().string(), "--out", out.path.string(), "--checkpoint",
                     (run.path / "ckpt_e1.00.cdbm").string(), "--subset-n", "20", "--gibbs-steps", "5"}) == kExitOk);
    const auto res = lines(out.path / "residuals.csv");
    REQUIRE(res.size() == 1 + 3 * 21 * 5);
    CHECK(res[0] == "layer,d,sigma2,residual");
    CHECK(res[1] == "0,0,1,20");
    const auto auc = lines(out.path / "auc.csv");
    REQUIRE(auc.size() == 4);
    CHECK(auc[0] == "layer,auc");
    const auto sc = lines(out.path / "scatter.csv");
    REQUIRE(sc.size() == 21);
    CHECK(sc[0] == "sample_id,label,pc1,pc2");

    TempDir again;
    REQUIRE(run_cli({"eval-disc", "--data-dir", data_dir().string(), "--out", again.path.string(), "--checkpoint",
                     (run.path / "ckpt_e1.00.cdbm").string(), "--subset-n", "20", "--gibbs-steps", "5"}) == kExitOk);
    CHECK(slurp(again.path / "residuals.csv") == slurp(out.path / "residuals.csv"));

    CHECK(run_cli({"eval-disc", "--data-dir", data_dir().string(), "--out", out.path.string(), "--checkpoint",
                   (run.path / "ckpt_e1.00.cdbm").string(), "--sigma-grid", "1,-3"}) == kExitInputError);
}

TEST_CASE("conditioning writes the grid table") {
    TempDir out;
    REQUIRE(run_cli({"conditioning", "--out", out.path.string(), "--n-units", "8", "--n-dirs", "4", "--mc-samples",
                     "2000"}) == kExitOk);
    const auto rows = lines(out.path / "conditioning.csv");
    REQUIRE(rows.size() == 10);
    CHECK(rows[0] == "bias,offset,lambda_ratio,n_dirs,n_samples,seed");
    CHECK(rows[1].rfind("2," + format_double(sigm(2.0)) + ",", 0) == 0);
    CHECK(rows[1].find(",4,2000,1") != std::string::npos);
    CHECK(run_cli({"conditioning", "--out", out.path.string(), "--directions", "diagonal"}) == kExitInputError);
}

TEST_CASE("sample and filters render PGM grids") {
    TempDir out;
    save_zero_model(out.path / "zero.cdbm");
    REQUIRE(run_cli({"sample", "--out", out.path.string(), "--checkpoint", (out.path / "zero.cdbm").string(), "--n",
                     "4", "--burn-in", "3", "--thin", "2"}) == kExitOk);
    const GrayImage s = decode_pgm(read_file(out.path / "samples.pgm"));
    CHECK(s.width == 2 * 29 + 1);
    CHECK(s.height == 2 * 29 + 1);
    // Zero model: independent fair coins, so tiles are pure black and white.
    int white = 0;
    for (std::uint8_t p : s.pixels) {
        CHECK((p == 0 || p == 255));
        white += p == 255;
    }
    CHECK(white > 4 * 784 / 3);
    CHECK(white < 2 * 4 * 784 / 3);

    Dbm2Params m = Dbm2Params::zeros(784, 10, 4);
    std::mt19937_64 gen(3);
    std::normal_distribution<double> g;
    for (Index i = 0; i < m.W.size(); ++i) m.W.data()[i] = g(gen);
    for (Index i = 0; i < m.V.size(); ++i) m.V.data()[i] = g(gen);
    save_checkpoint(m, out.path / "m.cdbm");
    REQUIRE(run_cli({"filters", "--out", out.path.string(), "--checkpoint", (out.path / "m.cdbm").string(),
                     "--n-filters", "9"}) == kExitOk);
    const GrayImage f1 = decode_pgm(read_file(out.path / "filters_layer1.pgm"));
    const GrayImage f2 = decode_pgm(read_file(out.path / "filters_layer2.pgm"));
    CHECK(f1.width == 3 * 29 + 1);
    CHECK(f2.width == 2 * 29 + 1);
    CHECK(f1.pixels == filter_grid(m.W.topRows(9), 3, 3).pixels);
    CHECK(f2.pixels == filter_grid(backproject_layer2(m), 2, 2).pixels);

    save_checkpoint(Dbm2Params::zeros(10, 2, 2), out.path / "small.cdbm");
    CHECK(run_cli({"sample", "--out", out.path.string(), "--checkpoint", (out.path / "small.cdbm").string()}) ==
          kExitInputError);
}
