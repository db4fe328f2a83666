// MNIST ingestion and preprocessing into angle-image samples.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fqp/frqi.hpp"
#include "fqp/train.hpp"

namespace fqp::data {

enum class Split { Train, Test };

std::string to_string(Split s);
Split parse_split(std::string_view s);

struct Dataset {
    std::vector<frqi::PixelImage> images;
    std::vector<int> labels;
    Split split = Split::Train;

    std::size_t size() const { return images.size(); }
};

class IdxError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, Truncated, CountMismatch, BadLabel, Corrupt };

    IdxError(Kind kind, std::string path, std::uint64_t offset, const std::string& detail);

    Kind kind() const { return kind_; }
    const std::string& path() const { return path_; }
    // Byte offset in the decompressed stream where the problem was detected.
    std::uint64_t offset() const { return offset_; }

private:
    Kind kind_;
    std::string path_;
    std::uint64_t offset_;
};

std::string to_string(IdxError::Kind kind);

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads a file, transparently inflating gzip content.
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

// Plain or gzip-compressed IDX image/label pair. Labels must be 0..9.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split = Split::Train);

void write_idx(const Dataset& dataset, const std::string& images_path, const std::string& labels_path,
               bool gzip = false);

struct MnistFiles {
    std::string images;
    std::string labels;
};

// Canonical file names (train-images-idx3-ubyte[.gz], ...) under `dir`, or
// under $MNIST_DIR when `dir` is empty. Throws IdxError(Io) when missing.
MnistFiles locate_mnist(const std::string& dir, Split split);

Dataset load_mnist(const std::string& dir, Split split);

enum class ResizeFilter { Bilinear, Area };

std::string to_string(ResizeFilter f);
ResizeFilter parse_resize_filter(std::string_view s);

// Resamples to a square target of side 8 or 16 (interpolation, rounded to the
// nearest level) or 32 (centred zero padding). Same-size input is returned
// unchanged. Throws std::invalid_argument for any other target.
frqi::PixelImage resize(const frqi::PixelImage& img, int target_side, ResizeFilter filter = ResizeFilter::Bilinear);

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Keeps samples whose label is below num_classes.
Dataset select_classes(const Dataset& dataset, int num_classes);

// Class-balanced seeded subset over labels 0..num_classes-1, returned in the
// original dataset order. Throws DataError naming the first class with fewer
// than per_class samples.
Dataset subset(const Dataset& dataset, int per_class, std::uint64_t seed, int num_classes = 10);

// Resize to 2^n and scale to angles.
std::vector<train::Sample> to_samples(const Dataset& dataset, int n, ResizeFilter filter = ResizeFilter::Bilinear);

// Preprocessed-sample cache. Layout (all integers little-endian):
//   "FQP1" | u32 sample count | u32 side exponent n |
//   count * 4^n float64 angles (sample-major, row-major) | count * u8 labels
void write_cache(const std::string& path, std::span<const train::Sample> samples);
std::vector<train::Sample> read_cache(const std::string& path);

}  // namespace fqp::data
