#include "fqp/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <utility>

#include "fqp/random.hpp"

namespace fqp::data {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> inflate_gzip(std::span<const std::uint8_t> compressed, const std::string& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IdxError(IdxError::Kind::Io, path, 0, "zlib init failed");
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk;
        zs.avail_out = sizeof chunk;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            const auto at = zs.total_out;
            inflateEnd(&zs);
            if (rc == Z_BUF_ERROR) throw IdxError(IdxError::Kind::Truncated, path, at, "gzip stream ends early");
            throw IdxError(IdxError::Kind::Corrupt, path, at, "gzip stream is corrupt");
        }
        out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
        if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
            const auto at = zs.total_out;
            inflateEnd(&zs);
            throw IdxError(IdxError::Kind::Truncated, path, at, "gzip stream ends early");
        }
    }
    inflateEnd(&zs);
    return out;
}

std::vector<std::uint8_t> deflate_gzip(std::span<const std::uint8_t> raw) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw std::runtime_error("zlib deflate init failed");
    }
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 32);
    zs.next_in = const_cast<Bytef*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw std::runtime_error("zlib deflate failed");
    return out;
}

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint32_t u32_be(const char* what) {
        need(4, what);
        const std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) | (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                                (std::uint32_t{bytes_[pos_ + 2]} << 8) | std::uint32_t{bytes_[pos_ + 3]};
        pos_ += 4;
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t count, const char* what) {
        need(count, what);
        auto s = bytes_.subspan(pos_, count);
        pos_ += count;
        return s;
    }

    std::size_t position() const { return pos_; }

private:
    void need(std::size_t count, const char* what) {
        if (bytes_.size() - pos_ < count) {
            throw IdxError(IdxError::Kind::Truncated, path_, bytes_.size(),
                           std::string("file ends while reading ") + what + " at byte " + std::to_string(pos_) +
                               " (needed " + std::to_string(count) + " bytes, " +
                               std::to_string(bytes_.size() - pos_) + " left)");
        }
    }

    std::span<const std::uint8_t> bytes_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IdxError(IdxError::Kind::Io, path, 0, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IdxError(IdxError::Kind::Io, path, 0, "write failed");
}

}  // namespace

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view s) {
    const auto v = lower(s);
    if (v == "train") return Split::Train;
    if (v == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

IdxError::IdxError(Kind kind, std::string path, std::uint64_t offset, const std::string& detail)
    : std::runtime_error(path + ": " + to_string(kind) + ": " + detail), kind_(kind), path_(std::move(path)), offset_(offset) {}

std::string to_string(IdxError::Kind kind) {
    switch (kind) {
        case IdxError::Kind::Io: return "io";
        case IdxError::Kind::BadMagic: return "bad-magic";
        case IdxError::Kind::Truncated: return "truncated";
        case IdxError::Kind::CountMismatch: return "count-mismatch";
        case IdxError::Kind::BadLabel: return "bad-label";
        case IdxError::Kind::Corrupt: return "corrupt";
    }
    return "?";
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxError::Kind::Io, path, 0, "cannot open file");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (is_gzip(bytes)) return inflate_gzip(bytes, path);
    return bytes;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
    const auto image_bytes = read_file_bytes(images_path);
    const auto label_bytes = read_file_bytes(labels_path);

    Reader images(image_bytes, images_path);
    const auto image_magic = images.u32_be("magic");
    if (image_magic != kIdxImageMagic) {
        throw IdxError(IdxError::Kind::BadMagic, images_path, 0,
                       "expected image magic 0x00000803, found 0x" + [&] {
                           char buf[9];
                           std::snprintf(buf, sizeof buf, "%08x", image_magic);
                           return std::string(buf);
                       }());
    }
    const auto count = images.u32_be("image count");
    const auto rows = images.u32_be("row count");
    const auto cols = images.u32_be("column count");
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
        throw IdxError(IdxError::Kind::Corrupt, images_path, 8, "implausible image dimensions");
    }

    Reader labels(label_bytes, labels_path);
    const auto label_magic = labels.u32_be("magic");
    if (label_magic != kIdxLabelMagic) {
        throw IdxError(IdxError::Kind::BadMagic, labels_path, 0, "expected label magic 0x00000801");
    }
    const auto label_count = labels.u32_be("label count");
    if (label_count != count) {
        throw IdxError(IdxError::Kind::CountMismatch, labels_path, 4,
                       std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
    }

    Dataset ds;
    ds.split = split;
    ds.images.reserve(count);
    ds.labels.reserve(count);
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto raster = images.take(pixels, "pixel data");
        ds.images.emplace_back(static_cast<int>(cols), static_cast<int>(rows),
                               std::vector<std::uint8_t>(raster.begin(), raster.end()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto at = labels.position();
        const auto label = labels.take(1, "labels")[0];
        if (label > 9) {
            throw IdxError(IdxError::Kind::BadLabel, labels_path, at, "label " + std::to_string(label) + " outside 0..9");
        }
        ds.labels.push_back(label);
    }
    return ds;
}

void write_idx(const Dataset& dataset, const std::string& images_path, const std::string& labels_path, bool gzip) {
    if (dataset.images.size() != dataset.labels.size()) throw std::invalid_argument("images and labels differ in count");
    const int rows = dataset.images.empty() ? 28 : dataset.images.front().height;
    const int cols = dataset.images.empty() ? 28 : dataset.images.front().width;

    std::vector<std::uint8_t> image_bytes;
    put_u32_be(image_bytes, kIdxImageMagic);
    put_u32_be(image_bytes, static_cast<std::uint32_t>(dataset.size()));
    put_u32_be(image_bytes, static_cast<std::uint32_t>(rows));
    put_u32_be(image_bytes, static_cast<std::uint32_t>(cols));
    for (const auto& img : dataset.images) {
        if (img.width != cols || img.height != rows) throw std::invalid_argument("IDX needs uniform image dimensions");
        image_bytes.insert(image_bytes.end(), img.pixels.begin(), img.pixels.end());
    }
    std::vector<std::uint8_t> label_bytes;
    put_u32_be(label_bytes, kIdxLabelMagic);
    put_u32_be(label_bytes, static_cast<std::uint32_t>(dataset.size()));
    for (int l : dataset.labels) label_bytes.push_back(static_cast<std::uint8_t>(l));

    write_bytes(images_path, gzip ? deflate_gzip(image_bytes) : image_bytes);
    write_bytes(labels_path, gzip ? deflate_gzip(label_bytes) : label_bytes);
}

MnistFiles locate_mnist(const std::string& dir, Split split) {
    std::string root = dir;
    if (root.empty()) {
        if (const char* env = std::getenv("MNIST_DIR")) root = env;
    }
    if (root.empty()) throw IdxError(IdxError::Kind::Io, "", 0, "no MNIST directory given and MNIST_DIR is unset");
    const std::string prefix = split == Split::Train ? "train" : "t10k";
    const auto find = [&](const std::string& stem) {
        for (const auto* suffix : {"", ".gz"}) {
            const auto candidate = std::filesystem::path(root) / (stem + suffix);
            if (std::filesystem::exists(candidate)) return candidate.string();
        }
        throw IdxError(IdxError::Kind::Io, (std::filesystem::path(root) / stem).string(), 0, "file not found");
    };
    return {find(prefix + "-images-idx3-ubyte"), find(prefix + "-labels-idx1-ubyte")};
}

Dataset load_mnist(const std::string& dir, Split split) {
    const auto files = locate_mnist(dir, split);
    return load_idx(files.images, files.labels, split);
}

std::string to_string(ResizeFilter f) { return f == ResizeFilter::Bilinear ? "bilinear" : "area"; }

ResizeFilter parse_resize_filter(std::string_view s) {
    const auto v = lower(s);
    if (v == "bilinear") return ResizeFilter::Bilinear;
    if (v == "area") return ResizeFilter::Area;
    throw std::invalid_argument("unknown resize filter '" + std::string(s) + "'");
}

namespace {

std::uint8_t to_level(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

// Separable triangle (bilinear) kernel widened by the downscale factor, so
// every source pixel contributes; weights are normalized per output pixel.
std::vector<std::vector<std::pair<int, double>>> bilinear_taps(int in, int out) {
    const double scale = static_cast<double>(in) / out;
    const double support = std::max(1.0, scale);
    std::vector<std::vector<std::pair<int, double>>> taps(static_cast<std::size_t>(out));
    for (int d = 0; d < out; ++d) {
        const double centre = (d + 0.5) * scale;
        const int lo = std::max(0, static_cast<int>(std::floor(centre - support)));
        const int hi = std::min(in, static_cast<int>(std::ceil(centre + support)));
        double total = 0.0;
        for (int s = lo; s < hi; ++s) {
            const double w = std::max(0.0, 1.0 - std::abs((s + 0.5 - centre) / support));
            if (w > 0.0) {
                taps[static_cast<std::size_t>(d)].emplace_back(s, w);
                total += w;
            }
        }
        for (auto& [s, w] : taps[static_cast<std::size_t>(d)]) w /= total;
    }
    return taps;
}

frqi::PixelImage resize_bilinear(const frqi::PixelImage& img, int side) {
    const auto rows = bilinear_taps(img.height, side);
    const auto cols = bilinear_taps(img.width, side);
    frqi::PixelImage out(side, side, std::uint8_t{0});
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            double acc = 0.0;
            for (const auto& [y, wy] : rows[static_cast<std::size_t>(r)]) {
                for (const auto& [x, wx] : cols[static_cast<std::size_t>(c)]) acc += wy * wx * img.at(y, x);
            }
            out.at(r, c) = to_level(acc);
        }
    }
    return out;
}

// Exact box average: each output pixel integrates the input over its
// footprint with fractional edge weights.
frqi::PixelImage resize_area(const frqi::PixelImage& img, int side) {
    frqi::PixelImage out(side, side, std::uint8_t{0});
    const double sy = static_cast<double>(img.height) / side;
    const double sx = static_cast<double>(img.width) / side;
    const auto overlap = [](double lo, double hi, int cell) {
        return std::max(0.0, std::min(hi, cell + 1.0) - std::max(lo, static_cast<double>(cell)));
    };
    for (int r = 0; r < side; ++r) {
        const double y_lo = r * sy, y_hi = (r + 1) * sy;
        for (int c = 0; c < side; ++c) {
            const double x_lo = c * sx, x_hi = (c + 1) * sx;
            double acc = 0.0, weight = 0.0;
            for (int y = static_cast<int>(y_lo); y < std::min(img.height, static_cast<int>(std::ceil(y_hi))); ++y) {
                const double wy = overlap(y_lo, y_hi, y);
                for (int x = static_cast<int>(x_lo); x < std::min(img.width, static_cast<int>(std::ceil(x_hi))); ++x) {
                    const double w = wy * overlap(x_lo, x_hi, x);
                    acc += w * img.at(y, x);
                    weight += w;
                }
            }
            out.at(r, c) = to_level(acc / weight);
        }
    }
    return out;
}

frqi::PixelImage pad_centered(const frqi::PixelImage& img, int side) {
    if (img.width > side || img.height > side) {
        throw std::invalid_argument("cannot pad a " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                    " image into " + std::to_string(side) + "x" + std::to_string(side));
    }
    frqi::PixelImage out(side, side, std::uint8_t{0});
    const int top = (side - img.height) / 2;
    const int left = (side - img.width) / 2;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) out.at(top + r, left + c) = img.at(r, c);
    }
    return out;
}

}  // namespace

frqi::PixelImage resize(const frqi::PixelImage& img, int target_side, ResizeFilter filter) {
    if (target_side != 8 && target_side != 16 && target_side != 32) {
        throw std::invalid_argument("unsupported resize target " + std::to_string(target_side) + " (use 8, 16 or 32)");
    }
    if (img.width == target_side && img.height == target_side) return img;
    if (target_side == 32) return pad_centered(img, target_side);
    return filter == ResizeFilter::Bilinear ? resize_bilinear(img, target_side) : resize_area(img, target_side);
}

Dataset select_classes(const Dataset& dataset, int num_classes) {
    Dataset out;
    out.split = dataset.split;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.labels[i] < num_classes) {
            out.images.push_back(dataset.images[i]);
            out.labels.push_back(dataset.labels[i]);
        }
    }
    return out;
}

Dataset subset(const Dataset& dataset, int per_class, std::uint64_t seed, int num_classes) {
    if (per_class < 1) throw std::invalid_argument("per-class count must be >= 1");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const int label = dataset.labels[i];
        if (label >= 0 && label < num_classes) by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    for (int c = 0; c < num_classes; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        if (pool.size() < static_cast<std::size_t>(per_class)) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                            " samples, fewer than the requested " + std::to_string(per_class));
        }
        // Partial Fisher-Yates: the first per_class slots become the pick.
        for (std::size_t k = 0; k < static_cast<std::size_t>(per_class); ++k) {
            const auto j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
            std::swap(pool[k], pool[j]);
        }
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + per_class);
    }
    std::sort(chosen.begin(), chosen.end());
    Dataset out;
    out.split = dataset.split;
    for (auto i : chosen) {
        out.images.push_back(dataset.images[i]);
        out.labels.push_back(dataset.labels[i]);
    }
    return out;
}

std::vector<train::Sample> to_samples(const Dataset& dataset, int n, ResizeFilter filter) {
    if (n < 1 || n > 5) throw std::invalid_argument("side exponent must be in 1..5");
    const int side = 1 << n;
    std::vector<train::Sample> samples;
    samples.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& img = dataset.images[i];
        const auto sized = (img.width == side && img.height == side) ? img : resize(img, side, filter);
        samples.push_back({frqi::scale_to_angles(sized), dataset.labels[i]});
    }
    return samples;
}

void write_cache(const std::string& path, std::span<const train::Sample> samples) {
    const int n = samples.empty() ? 1 : samples.front().image.n;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write cache '" + path + "'");
    out.write("FQP1", 4);
    put_u32_le(out, static_cast<std::uint32_t>(samples.size()));
    put_u32_le(out, static_cast<std::uint32_t>(n));
    for (const auto& s : samples) {
        if (s.image.n != n) throw DataError("cache samples must share one side exponent");
        for (double a : s.image.angles) {
            const auto bits = std::bit_cast<std::uint64_t>(a);
            char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            out.write(b, 8);
        }
    }
    for (const auto& s : samples) out.put(static_cast<char>(s.label));
    if (!out) throw DataError("write failed for cache '" + path + "'");
}

std::vector<train::Sample> read_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open cache '" + path + "'");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "FQP1", 4) != 0) throw DataError("'" + path + "' is not an FQP1 cache");
    const auto count = get_u32_le(bytes.data() + 4);
    const auto n = static_cast<int>(get_u32_le(bytes.data() + 8));
    if (n < 1 || n > 5) throw DataError("cache side exponent out of range");
    const std::size_t per_image = std::size_t{1} << (2 * n);
    const std::size_t expected = 12 + static_cast<std::size_t>(count) * (per_image * 8 + 1);
    if (bytes.size() != expected) {
        throw DataError("cache '" + path + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(expected));
    }
    std::vector<train::Sample> samples;
    samples.reserve(count);
    const std::uint8_t* p = bytes.data() + 12;
    const std::uint8_t* labels = p + static_cast<std::size_t>(count) * per_image * 8;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::vector<double> angles(per_image);
        for (auto& a : angles) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[b]} << (8 * b);
            a = std::bit_cast<double>(bits);
            p += 8;
        }
        if (labels[i] > 9) throw DataError("cache sample " + std::to_string(i) + " has label " + std::to_string(labels[i]));
        try {
            samples.push_back({frqi::AngleImage(n, std::move(angles)), labels[i]});
        } catch (const std::invalid_argument& e) {
            throw DataError("cache sample " + std::to_string(i) + ": " + e.what());
        }
    }
    return samples;
}

}  // namespace fqp::data
