#include "cdbm/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cdbm/sampler.hpp"

namespace cdbm {

namespace fs = std::filesystem;

namespace {

std::size_t element_size(IdxType t) {
    switch (t) {
        case IdxType::UInt8:
        case IdxType::Int8: return 1;
        case IdxType::Int16: return 2;
        case IdxType::Int32:
        case IdxType::Float32: return 4;
        case IdxType::Float64: return 8;
    }
    return 0;
}

bool supported(std::uint8_t code) {
    switch (code) {
        case 0x08: case 0x09: case 0x0B: case 0x0C: case 0x0D: case 0x0E: return true;
        default: return false;
    }
}

std::uint64_t read_be(const std::uint8_t* p, std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v = (v << 8) | p[i];
    return v;
}

void write_be(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t n) {
    for (std::size_t i = n; i-- > 0;) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
void append_le(std::vector<std::uint8_t>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

}  // namespace

std::size_t IdxTensor::element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
}

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw IdxError(IdxErrorCode::Truncated, "IDX: header shorter than 4 bytes");
    if (bytes[0] != 0 || bytes[1] != 0) throw IdxError(IdxErrorCode::BadMagic, "IDX: magic must start with two zero bytes");
    if (!supported(bytes[2])) throw IdxError(IdxErrorCode::UnsupportedType, "IDX: unsupported dtype code");
    const int ndim = bytes[3];
    if (ndim == 0) throw IdxError(IdxErrorCode::BadMagic, "IDX: zero dimensions");

    IdxTensor t;
    t.dtype = static_cast<IdxType>(bytes[2]);
    const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
    if (bytes.size() < header) throw IdxError(IdxErrorCode::Truncated, "IDX: truncated dimension list");
    for (int d = 0; d < ndim; ++d) {
        t.dims.push_back(static_cast<std::uint32_t>(read_be(bytes.data() + 4 + 4 * d, 4)));
    }

    const std::size_t count = t.element_count();
    const std::size_t width = element_size(t.dtype);
    const std::size_t need = header + count * width;
    if (bytes.size() < need) throw IdxError(IdxErrorCode::Truncated, "IDX: truncated payload");
    if (bytes.size() > need) throw IdxError(IdxErrorCode::TrailingBytes, "IDX: trailing bytes after payload");

    t.values.resize(count);
    const std::uint8_t* p = bytes.data() + header;
    for (std::size_t i = 0; i < count; ++i, p += width) {
        const std::uint64_t raw = read_be(p, width);
        switch (t.dtype) {
            case IdxType::UInt8: t.values[i] = static_cast<double>(raw); break;
            case IdxType::Int8: t.values[i] = static_cast<std::int8_t>(raw); break;
            case IdxType::Int16: t.values[i] = static_cast<std::int16_t>(raw); break;
            case IdxType::Int32: t.values[i] = static_cast<std::int32_t>(raw); break;
            case IdxType::Float32: t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(raw)); break;
            case IdxType::Float64: t.values[i] = std::bit_cast<double>(raw); break;
        }
    }
    return t;
}

std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
    if (t.dims.empty() || t.dims.size() > 255) throw std::invalid_argument("serialize_idx: bad dimension count");
    if (t.values.size() != t.element_count()) throw std::invalid_argument("serialize_idx: value count != product of dims");
    std::vector<std::uint8_t> out{0, 0, static_cast<std::uint8_t>(t.dtype), static_cast<std::uint8_t>(t.dims.size())};
    for (std::uint32_t d : t.dims) write_be(out, d, 4);
    const std::size_t width = element_size(t.dtype);
    for (double v : t.values) {
        std::uint64_t raw = 0;
        switch (t.dtype) {
            case IdxType::UInt8: raw = static_cast<std::uint8_t>(v); break;
            case IdxType::Int8: raw = static_cast<std::uint8_t>(static_cast<std::int8_t>(v)); break;
            case IdxType::Int16: raw = static_cast<std::uint16_t>(static_cast<std::int16_t>(v)); break;
            case IdxType::Int32: raw = static_cast<std::uint32_t>(static_cast<std::int32_t>(v)); break;
            case IdxType::Float32: raw = std::bit_cast<std::uint32_t>(static_cast<float>(v)); break;
            case IdxType::Float64: raw = std::bit_cast<std::uint64_t>(v); break;
        }
        write_be(out, raw, width);
    }
    return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

IdxTensor read_idx_file(const fs::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw IdxError(IdxErrorCode::Io, e.what());
    }
    try {
        return parse_idx(bytes);
    } catch (const IdxError& e) {
        throw IdxError(e.code(), path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

BinarizedDataset binarize(const IdxTensor& images, const IdxTensor& labels, double threshold) {
    if (images.dims.size() != 3 && images.dims.size() != 2) {
        throw std::invalid_argument("binarize: images must be n x rows x cols or n x pixels");
    }
    const Index n = images.dims[0];
    if (n == 0) throw std::invalid_argument("binarize: empty image set");
    const Index pixels = static_cast<Index>(images.element_count()) / n;
    if (labels.dims.size() != 1 || static_cast<Index>(labels.dims[0]) != n) {
        throw std::invalid_argument("binarize: label count does not match image count");
    }

    BinarizedDataset ds;
    ds.x.resize(n, pixels);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(n * pixels));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < pixels; ++j) {
            const double v = images.values[static_cast<std::size_t>(i * pixels + j)];
            const bool on = v / 255.0 > threshold;
            ds.x(i, j) = on ? 1.0 : 0.0;
            bits[static_cast<std::size_t>(i * pixels + j)] = on ? 1 : 0;
        }
    }
    ds.labels.resize(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> label_bytes(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const int l = static_cast<int>(labels.values[static_cast<std::size_t>(i)]);
        if (l < 0 || l > 9) throw std::invalid_argument("binarize: label outside 0..9");
        ds.labels[static_cast<std::size_t>(i)] = l;
        label_bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(l);
        ++ds.label_counts[static_cast<std::size_t>(l)];
    }
    ds.checksum = fnv1a64(label_bytes, fnv1a64(bits));
    return ds;
}

BinarizedDataset load_mnist(const fs::path& dir, const std::string& prefix) {
    const IdxTensor images = read_idx_file(dir / (prefix + "-images-idx3-ubyte"));
    const IdxTensor labels = read_idx_file(dir / (prefix + "-labels-idx1-ubyte"));
    return binarize(images, labels);
}

BinarizedDataset subset(const BinarizedDataset& ds, Index n, std::uint64_t seed) {
    const auto total = static_cast<Index>(ds.labels.size());
    if (n < 0 || n > total) throw std::invalid_argument("subset: n exceeds dataset size");
    std::vector<Index> idx(static_cast<std::size_t>(total));
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed);
    // Partial Fisher-Yates: the first n slots are a uniform sample.
    for (Index i = 0; i < n; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(total - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    BinarizedDataset out;
    out.x.resize(n, ds.x.cols());
    out.labels.resize(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> id_bytes;
    for (Index i = 0; i < n; ++i) {
        const Index src = idx[static_cast<std::size_t>(i)];
        out.x.row(i) = ds.x.row(src);
        out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
        ++out.label_counts[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
        for (int b = 0; b < 8; ++b) id_bytes.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(src) >> (8 * b)));
    }
    out.checksum = fnv1a64(id_bytes, ds.checksum);
    return out;
}

// ---------------------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

GrayImage to_gray(const Matrix& values) {
    if (!values.allFinite()) throw std::invalid_argument("to_gray: non-finite values");
    GrayImage img{static_cast<int>(values.cols()), static_cast<int>(values.rows()), {}};
    img.pixels.resize(static_cast<std::size_t>(values.size()));
    const double lo = values.size() ? values.minCoeff() : 0.0;
    const double hi = values.size() ? values.maxCoeff() : 0.0;
    for (Index r = 0; r < values.rows(); ++r) {
        for (Index c = 0; c < values.cols(); ++c) {
            const double v = hi > lo ? std::round(255.0 * (values(r, c) - lo) / (hi - lo)) : 128.0;
            img.pixels[static_cast<std::size_t>(r * values.cols() + c)] = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
    const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
    // Header: magic, width, height, maxval separated by single whitespace runs.
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "P5") throw std::runtime_error("decode_pgm: not a binary PGM");
    GrayImage img;
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw std::runtime_error("decode_pgm: only maxval 255 supported");
    ++pos;
    const auto count = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    if (bytes.size() - pos != count) throw std::runtime_error("decode_pgm: payload size mismatch");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

void write_pgm(const Matrix& values, const fs::path& path) { write_file_atomic(path, encode_pgm(to_gray(values))); }

GrayImage filter_grid(const Matrix& filters, int grid_rows, int grid_cols, int tile_h, int tile_w) {
    if (grid_rows < 1 || grid_cols < 1) throw std::invalid_argument("filter_grid: grid must be at least 1x1");
    if (filters.cols() != static_cast<Index>(tile_h) * tile_w) {
        throw std::invalid_argument("filter_grid: filter length != tile_h * tile_w");
    }
    GrayImage img;
    img.width = grid_cols * (tile_w + 1) + 1;
    img.height = grid_rows * (tile_h + 1) + 1;
    img.pixels.assign(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height), 0);
    const Index n = std::min<Index>(filters.rows(), static_cast<Index>(grid_rows) * grid_cols);
    for (Index f = 0; f < n; ++f) {
        Matrix tile(tile_h, tile_w);
        for (int r = 0; r < tile_h; ++r) {
            for (int c = 0; c < tile_w; ++c) tile(r, c) = filters(f, static_cast<Index>(r) * tile_w + c);
        }
        const GrayImage g = to_gray(tile);
        const int r0 = static_cast<int>(f / grid_cols) * (tile_h + 1) + 1;
        const int c0 = static_cast<int>(f % grid_cols) * (tile_w + 1) + 1;
        for (int r = 0; r < tile_h; ++r) {
            for (int c = 0; c < tile_w; ++c) {
                img.pixels[static_cast<std::size_t>((r0 + r) * img.width + c0 + c)] =
                    g.pixels[static_cast<std::size_t>(r * tile_w + c)];
            }
        }
    }
    return img;
}

void write_filter_grid(const Matrix& filters, int grid_rows, int grid_cols, const fs::path& path, int tile_h,
                       int tile_w) {
    write_file_atomic(path, encode_pgm(filter_grid(filters, grid_rows, grid_cols, tile_h, tile_w)));
}

Matrix backproject_layer2(const Dbm2Params& m) { return m.V * m.W; }

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'D', 'B', 'M', '0', '0', '0', '1'};

template <class Derived>
void append_rowmajor(std::vector<std::uint8_t>& out, const Eigen::MatrixBase<Derived>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) append_le(out, static_cast<double>(m(r, c)));
    }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Dbm2Params& m) {
    m.validate();
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    append_le(out, static_cast<std::uint32_t>(m.mx()));
    append_le(out, static_cast<std::uint32_t>(m.my()));
    append_le(out, static_cast<std::uint32_t>(m.mz()));
    append_rowmajor(out, m.W);
    append_rowmajor(out, m.V);
    for (const Vector* v : {&m.a, &m.b, &m.c, &m.alpha, &m.beta, &m.gamma}) append_rowmajor(out, v->transpose());
    return out;
}

Dbm2Params decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    std::uint32_t dims[3];
    std::memcpy(dims, bytes.data() + 8, 12);
    const Index mx = dims[0], my = dims[1], mz = dims[2];
    const std::size_t doubles = static_cast<std::size_t>(my * mx + mz * my + 2 * (mx + my + mz));
    if (bytes.size() != 20 + 8 * doubles) throw std::runtime_error("checkpoint: size does not match header");

    const std::uint8_t* p = bytes.data() + 20;
    auto next = [&p]() {
        double v;
        std::memcpy(&v, p, 8);
        p += 8;
        return v;
    };
    Dbm2Params m = Dbm2Params::zeros(mx, my, mz);
    for (Matrix* mat : {&m.W, &m.V}) {
        for (Index r = 0; r < mat->rows(); ++r) {
            for (Index c = 0; c < mat->cols(); ++c) (*mat)(r, c) = next();
        }
    }
    for (Vector* v : {&m.a, &m.b, &m.c, &m.alpha, &m.beta, &m.gamma}) {
        for (Index i = 0; i < v->size(); ++i) (*v)(i) = next();
    }
    m.validate();
    return m;
}

void save_checkpoint(const Dbm2Params& m, const fs::path& path) { write_file_atomic(path, encode_checkpoint(m)); }

Dbm2Params load_checkpoint(const fs::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace cdbm
