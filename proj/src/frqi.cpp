#include "fqp/frqi.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace fqp::frqi {

PixelImage::PixelImage(int w, int h, std::vector<std::uint8_t> px) : width(w), height(h), pixels(std::move(px)) {
    if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(w) * h) {
        throw std::invalid_argument("pixel count does not match " + std::to_string(w) + "x" + std::to_string(h));
    }
}

PixelImage::PixelImage(int w, int h, std::uint8_t fill)
    : PixelImage(w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), fill)) {}

bool PixelImage::is_envelope() const {
    return width == height && width >= 2 && std::has_single_bit(static_cast<unsigned>(width));
}

int PixelImage::side_exponent() const {
    if (!is_envelope()) {
        throw std::invalid_argument("image " + std::to_string(width) + "x" + std::to_string(height) +
                                    " is not a square power-of-two envelope");
    }
    return std::countr_zero(static_cast<unsigned>(width));
}

PixelImage pad_to_envelope(const PixelImage& img) {
    const auto side = std::max(2u, std::bit_ceil(static_cast<unsigned>(std::max(img.width, img.height))));
    PixelImage out(static_cast<int>(side), static_cast<int>(side), std::uint8_t{0});
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, c);
    }
    return out;
}

AngleImage::AngleImage(int side_exp, std::vector<double> values) : n(side_exp), angles(std::move(values)) {
    if (n < 1 || n > 11) throw std::invalid_argument("side exponent out of range: " + std::to_string(n));
    if (angles.size() != std::size_t{1} << (2 * n)) {
        throw std::invalid_argument("angle image needs 4^n = " + std::to_string(std::size_t{1} << (2 * n)) +
                                    " angles, got " + std::to_string(angles.size()));
    }
    for (double t : angles) {
        if (!(t >= 0.0 && t <= kHalfPi)) throw std::invalid_argument("angle outside [0, pi/2]");
    }
}

AngleImage scale_to_angles(const PixelImage& img) {
    const int n = img.side_exponent();
    std::vector<double> angles(img.pixels.size());
    for (std::size_t i = 0; i < angles.size(); ++i) angles[i] = (img.pixels[i] / 255.0) * kHalfPi;
    return AngleImage(n, std::move(angles));
}

PixelImage angles_to_pixels(const AngleImage& angles) {
    const int side = angles.side();
    PixelImage out(side, side, std::uint8_t{0});
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double level = std::round(angles.angles[i] / kHalfPi * 255.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
    }
    return out;
}

int qubit_budget(int n) {
    if (n < 1) throw std::invalid_argument("side exponent must be >= 1");
    return 2 * n + 1;
}

qsim::StateVector encode_direct(const AngleImage& angles) {
    const double scale = 1.0 / static_cast<double>(1 << angles.n);
    std::vector<qsim::Amplitude> amps(2 * angles.size());
    for (std::size_t x = 0; x < angles.size(); ++x) {
        amps[basis_index(0, x)] = std::cos(angles.angles[x]) * scale;
        amps[basis_index(1, x)] = std::sin(angles.angles[x]) * scale;
    }
    return qsim::StateVector::from_amplitudes(std::move(amps));
}

std::vector<qsim::GateOp> encode_circuit_gates(const AngleImage& angles) {
    const int position_bits = 2 * angles.n;
    std::vector<qsim::GateOp> gates;
    std::vector<int> controls;
    for (int b = 0; b < position_bits; ++b) {
        gates.push_back(qsim::GateOp::h(b + 1));
        controls.push_back(b + 1);
    }
    for (std::size_t x = 0; x < angles.size(); ++x) {
        std::vector<qsim::GateOp> selectors;
        for (int b = 0; b < position_bits; ++b) {
            if (((x >> b) & 1u) == 0) selectors.push_back(qsim::GateOp::x(b + 1));
        }
        gates.insert(gates.end(), selectors.begin(), selectors.end());
        gates.push_back(qsim::GateOp::cry(controls, 0, 2.0 * angles.angles[x]));
        gates.insert(gates.end(), selectors.begin(), selectors.end());
    }
    return gates;
}

qsim::StateVector encode_circuit(const AngleImage& angles) {
    auto state = qsim::new_zero_state(qubit_budget(angles.n));
    qsim::apply_circuit(state, encode_circuit_gates(angles));
    return state;
}

AngleImage retrieve_analytic(const qsim::StateVector& state, int n) {
    if (state.num_qubits() != qubit_budget(n)) {
        throw std::invalid_argument("state has " + std::to_string(state.num_qubits()) + " qubits, FRQI with n=" +
                                    std::to_string(n) + " needs " + std::to_string(qubit_budget(n)));
    }
    const std::size_t positions = std::size_t{1} << (2 * n);
    std::vector<double> angles(positions);
    for (std::size_t x = 0; x < positions; ++x) {
        const double off = std::abs(state[basis_index(0, x)]);
        const double on = std::abs(state[basis_index(1, x)]);
        if (off == 0.0 && on == 0.0) {
            throw std::invalid_argument("malformed FRQI state: position " + std::to_string(x) + " has no amplitude");
        }
        angles[x] = std::atan2(on, off);
    }
    return AngleImage(n, std::move(angles));
}

std::size_t ShotRetrieval::unobserved_positions() const {
    return static_cast<std::size_t>(std::count(support.begin(), support.end(), 0u));
}

ShotRetrieval retrieve_from_shots(const qsim::ShotCounts& counts, int n) {
    if (counts.total_shots == 0) throw std::invalid_argument("retrieve_from_shots: zero shots");
    const auto width = static_cast<std::size_t>(qubit_budget(n));
    const std::size_t positions = std::size_t{1} << (2 * n);
    std::vector<std::uint64_t> on(positions, 0), off(positions, 0);
    for (const auto& [bits, count] : counts.counts) {
        if (bits.size() != width) {
            throw std::invalid_argument("outcome '" + bits + "' does not span all " + std::to_string(width) +
                                        " FRQI qubits");
        }
        std::size_t index = 0;
        for (char ch : bits) index = (index << 1) | (ch == '1' ? 1u : 0u);
        const std::size_t x = index >> 1;
        ((index & 1u) ? on : off)[x] += count;
    }
    ShotRetrieval result;
    result.support.resize(positions);
    std::vector<double> angles(positions, 0.0);
    for (std::size_t x = 0; x < positions; ++x) {
        result.support[x] = on[x] + off[x];
        if (result.support[x] > 0) {
            angles[x] = std::atan2(std::sqrt(static_cast<double>(on[x])), std::sqrt(static_cast<double>(off[x])));
        }
    }
    result.angles = AngleImage(n, std::move(angles));
    return result;
}

double mean_absolute_angle_error(const AngleImage& estimate, const AngleImage& truth) {
    if (estimate.n != truth.n) throw std::invalid_argument("angle images differ in size");
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) total += std::abs(estimate.angles[i] - truth.angles[i]);
    return total / static_cast<double>(truth.size());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
    std::string token;
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string ignored;
            std::getline(in, ignored);
            if (!token.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(ch);
    }
    if (token.empty()) throw std::runtime_error("PGM: unexpected end of header");
    return token;
}

int pgm_int(std::istream& in, const char* what) {
    const std::string token = pgm_token(in);
    try {
        std::size_t used = 0;
        const int value = std::stoi(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        return value;
    } catch (const std::logic_error&) {
        throw std::runtime_error(std::string("PGM: bad ") + what + " '" + token + "'");
    }
}

}  // namespace

PixelImage read_pgm(std::istream& in) {
    const std::string magic = pgm_token(in);
    if (magic != "P2" && magic != "P5") throw std::runtime_error("PGM: unsupported magic '" + magic + "'");
    const int width = pgm_int(in, "width");
    const int height = pgm_int(in, "height");
    const int maxval = pgm_int(in, "maxval");
    if (width < 1 || height < 1) throw std::runtime_error("PGM: non-positive dimensions");
    if (maxval < 1 || maxval > 255) throw std::runtime_error("PGM: maxval must be in 1..255");

    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
    if (magic == "P5") {
        in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        if (static_cast<std::size_t>(in.gcount()) != pixels.size()) throw std::runtime_error("PGM: truncated raster");
    } else {
        for (auto& p : pixels) {
            const int v = pgm_int(in, "pixel");
            if (v < 0 || v > maxval) throw std::runtime_error("PGM: pixel value out of range");
            p = static_cast<std::uint8_t>(v);
        }
    }
    for (auto& p : pixels) {
        if (p > maxval) throw std::runtime_error("PGM: pixel value out of range");
        if (maxval != 255) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
    }
    return PixelImage(width, height, std::move(pixels));
}

PixelImage read_pgm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image '" + path + "'");
    return read_pgm(in);
}

void write_pgm(std::ostream& out, const PixelImage& img, bool binary) {
    out << (binary ? "P5" : "P2") << '\n' << img.width << ' ' << img.height << "\n255\n";
    if (binary) {
        out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        return;
    }
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) out << (c ? " " : "") << static_cast<int>(img.at(r, c));
        out << '\n';
    }
}

void write_pgm_file(const std::string& path, const PixelImage& img, bool binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image '" + path + "'");
    write_pgm(out, img, binary);
}

void write_angles_csv(std::ostream& out, const AngleImage& angles) {
    out << "position,row,col,theta\n";
    char line[96];
    const std::size_t side = static_cast<std::size_t>(angles.side());
    for (std::size_t x = 0; x < angles.size(); ++x) {
        std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.17g\n", x, x / side, x % side, angles.angles[x]);
        out << line;
    }
}

}  // namespace fqp::frqi
