#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cdbm/io.hpp"
#include "oracles.hpp"

using namespace cdbm;
using namespace cdbm::testing;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> idx_header(std::uint8_t dtype, std::vector<std::uint32_t> dims) {
    std::vector<std::uint8_t> b{0, 0, dtype, static_cast<std::uint8_t>(dims.size())};
    for (std::uint32_t d : dims) {
        for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(d >> s));
    }
    return b;
}

IdxErrorCode error_code(const std::vector<std::uint8_t>& bytes) {
    try {
        parse_idx(bytes);
    } catch (const IdxError& e) {
        return e.code();
    }
    FAIL("no IdxError thrown");
    return IdxErrorCode::Io;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("cdbm_io_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

BinarizedDataset toy_dataset(Index n) {
    BinarizedDataset ds;
    ds.x = Matrix::Zero(n, 784);
    for (Index i = 0; i < n; ++i) {
        ds.x(i, i % 784) = 1.0;
        ds.labels.push_back(static_cast<int>(i % 10));
        ++ds.label_counts[static_cast<std::size_t>(i % 10)];
    }
    ds.checksum = 42;
    return ds;
}

}  // namespace

TEST_CASE("parse_idx: images and labels") {
    std::vector<std::uint8_t> img = idx_header(0x08, {2, 28, 28});
    for (int i = 0; i < 1568; ++i) img.push_back(static_cast<std::uint8_t>(i % 256));
    const IdxTensor t = parse_idx(img);
    CHECK(t.dtype == IdxType::UInt8);
    CHECK(t.dims == std::vector<std::uint32_t>{2, 28, 28});
    CHECK(t.element_count() == 1568);
    CHECK(t.values[300] == 44.0);

    std::vector<std::uint8_t> lab = idx_header(0x08, {5});
    for (std::uint8_t v : {7, 2, 1, 0, 4}) lab.push_back(v);
    const IdxTensor l = parse_idx(lab);
    CHECK(l.dims == std::vector<std::uint32_t>{5});
    CHECK(l.values == std::vector<double>{7, 2, 1, 0, 4});
}

TEST_CASE("parse_idx: malformed input") {
    std::vector<std::uint8_t> lab = idx_header(0x08, {5});
    for (int i = 0; i < 5; ++i) lab.push_back(1);

    std::vector<std::uint8_t> truncated(lab.begin(), lab.end() - 1);
    CHECK(error_code(truncated) == IdxErrorCode::Truncated);
    CHECK(error_code({0, 0, 8}) == IdxErrorCode::Truncated);
    std::vector<std::uint8_t> short_dims = idx_header(0x08, {2, 3});
    short_dims.resize(9);
    CHECK(error_code(short_dims) == IdxErrorCode::Truncated);

    std::vector<std::uint8_t> bad = lab;
    bad[0] = 1;
    CHECK(error_code(bad) == IdxErrorCode::BadMagic);

    std::vector<std::uint8_t> weird = lab;
    weird[2] = 0x0A;
    CHECK(error_code(weird) == IdxErrorCode::UnsupportedType);

    std::vector<std::uint8_t> extra = lab;
    extra.push_back(0);
    CHECK(error_code(extra) == IdxErrorCode::TrailingBytes);
}

TEST_CASE("parse and serialize round trip for every dtype") {
    const IdxType types[] = {IdxType::UInt8, IdxType::Int8, IdxType::Int16,
                             IdxType::Int32, IdxType::Float32, IdxType::Float64};
    for (IdxType ty : types) {
        IdxTensor t;
        t.dtype = ty;
        t.dims = {2, 3};
        t.values = {0, 1, 2, 3, 4, 5};
        if (ty == IdxType::Int8 || ty == IdxType::Int16 || ty == IdxType::Int32) t.values[1] = -7;
        if (ty == IdxType::Float32) t.values[2] = 0.25;
        if (ty == IdxType::Float64) t.values[2] = 0.1;
        const auto bytes = serialize_idx(t);
        const IdxTensor back = parse_idx(bytes);
        CHECK(back.dtype == t.dtype);
        CHECK(back.dims == t.dims);
        CHECK(back.values == t.values);
        CHECK(serialize_idx(back) == bytes);
    }
}

TEST_CASE("binarize") {
    IdxTensor img;
    img.dims = {2, 2, 2};
    img.values = {127, 128, 0, 255, 0, 0, 0, 0};
    IdxTensor lab;
    lab.dims = {2};
    lab.values = {3, 9};
    const BinarizedDataset ds = binarize(img, lab);
    REQUIRE(ds.x.rows() == 2);
    REQUIRE(ds.x.cols() == 4);
    CHECK(ds.x(0, 0) == 0.0);
    CHECK(ds.x(0, 1) == 1.0);
    CHECK(ds.x(0, 2) == 0.0);
    CHECK(ds.x(0, 3) == 1.0);
    CHECK(ds.x.row(1).isZero(0.0));
    CHECK(ds.labels == std::vector<int>{3, 9});
    CHECK(ds.label_counts[3] == 1);
    CHECK(binarize(img, lab).checksum == ds.checksum);

    // Already-binary data expressed as 0/255 stays the same.
    IdxTensor again = img;
    for (Index i = 0; i < 8; ++i) again.values[static_cast<std::size_t>(i)] = 255.0 * ds.x(i / 4, i % 4);
    CHECK(binarize(again, lab).x == ds.x);

    IdxTensor bad_lab = lab;
    bad_lab.values[1] = 11;
    CHECK_THROWS(binarize(img, bad_lab));
    IdxTensor short_lab = lab;
    short_lab.dims = {1};
    short_lab.values = {3};
    CHECK_THROWS(binarize(img, short_lab));
}

TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64({}) == 0xcbf29ce484222325ull);
    const std::uint8_t a[] = {'a'};
    CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cull);
    const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
    CHECK(fnv1a64(foobar) == 0x85944171f73967e8ull);
}

TEST_CASE("load_mnist from IDX files") {
    TempDir dir;
    IdxTensor img;
    img.dims = {3, 28, 28};
    img.values.assign(3 * 784, 0.0);
    img.values[5] = 200;
    img.values[784 + 10] = 128;
    IdxTensor lab;
    lab.dims = {3};
    lab.values = {1, 2, 3};
    write_file_atomic(dir.path / "t10k-images-idx3-ubyte", serialize_idx(img));
    write_file_atomic(dir.path / "t10k-labels-idx1-ubyte", serialize_idx(lab));
    const BinarizedDataset ds = load_mnist(dir.path, "t10k");
    CHECK(ds.x.rows() == 3);
    CHECK(ds.x(0, 5) == 1.0);
    CHECK(ds.x(1, 10) == 1.0);
    CHECK(ds.x.sum() == 2.0);
    CHECK(ds.labels == std::vector<int>{1, 2, 3});
    CHECK(load_mnist(dir.path, "t10k").checksum == ds.checksum);
    CHECK_THROWS(load_mnist(dir.path, "train"));
}

TEST_CASE("subset") {
    const BinarizedDataset ds = toy_dataset(700);
    const BinarizedDataset s = subset(ds, 500, 7);
    CHECK(s.x.rows() == 500);
    // Each toy row has its own hot pixel, so pixels identify source rows.
    std::set<Index> seen;
    for (Index i = 0; i < 500; ++i) {
        Index col = 0;
        s.x.row(i).maxCoeff(&col);
        seen.insert(col);
        CHECK(s.labels[static_cast<std::size_t>(i)] == static_cast<int>(col % 10));
    }
    CHECK(seen.size() == 500);
    CHECK(s.x == subset(ds, 500, 7).x);
    CHECK(s.x != subset(ds, 500, 8).x);
    int total = 0;
    for (int c : s.label_counts) total += c;
    CHECK(total == 500);
    CHECK(s.checksum != ds.checksum);

    const BinarizedDataset small = toy_dataset(50);
    const BinarizedDataset all = subset(small, 50, 1);
    std::multiset<int> a(small.labels.begin(), small.labels.end()), b(all.labels.begin(), all.labels.end());
    CHECK(a == b);
    std::set<Index> cols;
    for (Index i = 0; i < 50; ++i) {
        Index col = 0;
        all.x.row(i).maxCoeff(&col);
        cols.insert(col);
    }
    CHECK(cols.size() == 50);
    CHECK_THROWS_AS(subset(small, 51, 1), std::invalid_argument);
}

TEST_CASE("gray images and PGM encoding") {
    Matrix v(2, 2);
    v << 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0;
    const GrayImage g = to_gray(v);
    CHECK(g.width == 2);
    CHECK(g.height == 2);
    CHECK(g.pixels == std::vector<std::uint8_t>{0, 85, 170, 255});

    const GrayImage c = to_gray(Matrix::Constant(3, 4, 0.7));
    CHECK(c.pixels == std::vector<std::uint8_t>(12, 128));

    const auto bytes = encode_pgm(g);
    const std::string head(bytes.begin(), bytes.begin() + 2);
    CHECK(head == "P5");
    const GrayImage back = decode_pgm(bytes);
    CHECK(back.width == 2);
    CHECK(back.pixels == g.pixels);

    TempDir dir;
    write_pgm(v, dir.path / "a.pgm");
    CHECK(read_file(dir.path / "a.pgm") == bytes);
    CHECK(encode_pgm(decode_pgm(read_file(dir.path / "a.pgm"))) == bytes);
    CHECK_THROWS(write_pgm(v, dir.path / "missing" / "a.pgm"));

    Matrix bad = v;
    bad(0, 0) = std::nan("");
    CHECK_THROWS(to_gray(bad));
}

TEST_CASE("filter grid layout") {
    Matrix f(3, 4);
    f << 0, 1, 2, 3, 5, 5, 5, 5, 4, 3, 2, 1;
    const GrayImage g = filter_grid(f, 2, 2, 2, 2);
    // Tiles sit inside a 1-pixel black frame; the unused fourth cell stays black.
    CHECK(g.width == 7);
    CHECK(g.height == 7);
    auto at = [&](int r, int c) { return g.pixels[static_cast<std::size_t>(r * g.width + c)]; };
    CHECK(at(0, 0) == 0);
    CHECK(at(1, 1) == 0);
    CHECK(at(1, 2) == 85);
    CHECK(at(2, 1) == 170);
    CHECK(at(2, 2) == 255);
    CHECK(at(1, 3) == 0);
    CHECK(at(1, 4) == 128);
    CHECK(at(2, 5) == 128);
    CHECK(at(3, 1) == 0);
    CHECK(at(4, 1) == 255);
    CHECK(at(5, 2) == 0);
    CHECK(at(4, 4) == 0);
    CHECK(at(5, 5) == 0);
    CHECK(filter_grid(f, 1, 2, 2, 2).width == 7);
    CHECK_THROWS(filter_grid(f, 0, 2, 2, 2));
    CHECK_THROWS(filter_grid(f, 2, 2, 3, 2));
}

TEST_CASE("layer-2 backprojection") {
    std::mt19937_64 gen(3);
    const Dbm2Params m = random_dbm(6, 4, 2, gen, 1.0);
    const Matrix p = backproject_layer2(m);
    CHECK(p.rows() == 2);
    CHECK(p.cols() == 6);
    CHECK((p - m.V * m.W).norm() < 1e-14);
}

TEST_CASE("checkpoint round trip and corruption") {
    std::mt19937_64 gen(4);
    const Dbm2Params m = random_dbm(5, 3, 2, gen, 1.0);
    const auto bytes = encode_checkpoint(m);
    CHECK(bytes.size() == 8 + 12 + 8 * (15 + 6 + 5 + 3 + 2 + 5 + 3 + 2));
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "CDBM0001");
    const Dbm2Params back = decode_checkpoint(bytes);
    CHECK(back.W == m.W);
    CHECK(back.V == m.V);
    CHECK(back.c == m.c);
    CHECK(back.gamma == m.gamma);

    auto bad_magic = bytes;
    bad_magic[3] = 'X';
    CHECK_THROWS(decode_checkpoint(bad_magic));
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS(decode_checkpoint(cut));
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS(decode_checkpoint(extra));
    Dbm2Params off = m;
    off.alpha(0) = 1.5;
    CHECK_THROWS(decode_checkpoint(encode_checkpoint(off)));

    TempDir dir;
    save_checkpoint(m, dir.path / "m.cdbm");
    CHECK(load_checkpoint(dir.path / "m.cdbm").W == m.W);
    std::ofstream(dir.path / "junk.cdbm") << "not a checkpoint";
    try {
        load_checkpoint(dir.path / "junk.cdbm");
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("junk.cdbm") != std::string::npos);
    }
    CHECK_THROWS(load_checkpoint(dir.path / "absent.cdbm"));
}

TEST_CASE("atomic writes leave no temporary files") {
    TempDir dir;
    write_text_atomic(dir.path / "a.csv", "x,y\n1,2\n");
    write_text_atomic(dir.path / "a.csv", "x,y\n3,4\n");
    const auto bytes = read_file(dir.path / "a.csv");
    CHECK(std::string(bytes.begin(), bytes.end()) == "x,y\n3,4\n");
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
    CHECK(files == 1);
}
