#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdbm/model.hpp"

namespace cdbm {

// ---------------------------------------------------------------- IDX files

enum class IdxType : std::uint8_t {
    UInt8 = 0x08,
    Int8 = 0x09,
    Int16 = 0x0B,
    Int32 = 0x0C,
    Float32 = 0x0D,
    Float64 = 0x0E,
};

struct IdxTensor {
    IdxType dtype = IdxType::UInt8;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;

    std::size_t element_count() const;
};

enum class IdxErrorCode { BadMagic, Truncated, UnsupportedType, TrailingBytes, Io };

class IdxError : public std::runtime_error {
public:
    IdxError(IdxErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    IdxErrorCode code() const { return code_; }

private:
    IdxErrorCode code_;
};

IdxTensor parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxTensor& t);
IdxTensor read_idx_file(const std::filesystem::path& path);

// ------------------------------------------------------------------ dataset

struct BinarizedDataset {
    Matrix x;  // n x 784, entries in {0,1}
    std::vector<int> labels;
    std::uint64_t checksum = 0;
    std::array<int, 10> label_counts{};
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull);

/// bit = 1 iff pixel / 255 > threshold. With the default 0.5 this is pixel >= 128.
BinarizedDataset binarize(const IdxTensor& images, const IdxTensor& labels, double threshold = 0.5);

/// `prefix` is "train" or "t10k"; files follow the standard MNIST names.
BinarizedDataset load_mnist(const std::filesystem::path& dir, const std::string& prefix);

/// Seeded uniform sample without replacement, in sampled order.
BinarizedDataset subset(const BinarizedDataset& ds, Index n, std::uint64_t seed);

// ------------------------------------------------------------------- output

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Min-max normalizes to 0..255; a constant image maps to 128.
GrayImage to_gray(const Matrix& values);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

void write_pgm(const Matrix& values, const std::filesystem::path& path);

/// Each row of `filters` is an image of `tile_h` x `tile_w` (row-major),
/// normalized on its own and placed on a grid with 1-pixel black separators.
GrayImage filter_grid(const Matrix& filters, int grid_rows, int grid_cols, int tile_h = 28, int tile_w = 28);
void write_filter_grid(const Matrix& filters, int grid_rows, int grid_cols, const std::filesystem::path& path,
                       int tile_h = 28, int tile_w = 28);

/// Layer-2 backprojection V W (one row per top unit).
Matrix backproject_layer2(const Dbm2Params& m);

// -------------------------------------------------------------- checkpoints

/// "CDBM0001", Mx, My, Mz as little-endian u32, then little-endian f64
/// row-major W, V, a, b, c, alpha, beta, gamma.
std::vector<std::uint8_t> encode_checkpoint(const Dbm2Params& m);
Dbm2Params decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Dbm2Params& m, const std::filesystem::path& path);
Dbm2Params load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace cdbm
