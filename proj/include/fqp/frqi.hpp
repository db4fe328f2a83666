// FRQI image codec.
//
// A 2^n x 2^n grayscale image becomes a (2n+1)-qubit state
//
//     |I> = 2^-n * sum_x (cos t_x |0> + sin t_x |1>)_color (x) |x>_position
//
// Register map: qubit 0 is the color qubit, qubits 1..n hold the column bits
// and qubits n+1..2n the row bits, so position x = row * 2^n + col and the
// basis index of (color c, position x) is 2x + c.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fqp/qsim.hpp"

namespace fqp::frqi {

inline constexpr double kHalfPi = 1.57079632679489661923;

// Raw 8-bit grayscale raster, row-major.
struct PixelImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    PixelImage() = default;
    PixelImage(int width, int height, std::vector<std::uint8_t> pixels);
    PixelImage(int width, int height, std::uint8_t fill = 0);

    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }

    bool is_envelope() const;
    // n such that width == height == 2^n. Throws if the image is not a square
    // power-of-two envelope.
    int side_exponent() const;

    friend bool operator==(const PixelImage&, const PixelImage&) = default;
};

// Zero-pads to the smallest square 2^n envelope (n >= 1) containing the
// image, keeping the original content in the top-left corner.
PixelImage pad_to_envelope(const PixelImage& img);

// Per-pixel FRQI angles in [0, pi/2] over a 2^n x 2^n grid, row-major.
struct AngleImage {
    int n = 0;
    std::vector<double> angles;

    AngleImage() = default;
    // Validates the range and the 4^n length; throws std::invalid_argument.
    AngleImage(int n, std::vector<double> angles);

    int side() const { return 1 << n; }
    std::size_t size() const { return angles.size(); }
};

AngleImage scale_to_angles(const PixelImage& img);

// Inverse of scale_to_angles, rounded to the nearest level and clamped.
PixelImage angles_to_pixels(const AngleImage& angles);

// 2n + 1; throws std::invalid_argument for n < 1.
int qubit_budget(int n);

// Basis index of (color, position) under the register map above.
constexpr std::size_t basis_index(int color, std::size_t position) { return 2 * position + color; }

qsim::StateVector encode_direct(const AngleImage& angles);

// Gate-level preparation: H on every position qubit, then for every position
// a multi-controlled RY(2 t_x) on the color qubit, with X gates selecting the
// control pattern equal to x.
std::vector<qsim::GateOp> encode_circuit_gates(const AngleImage& angles);
qsim::StateVector encode_circuit(const AngleImage& angles);

// Exact inversion from amplitudes. Throws std::invalid_argument for a state
// of the wrong width or a position whose color amplitudes are both zero.
AngleImage retrieve_analytic(const qsim::StateVector& state, int n);

struct ShotRetrieval {
    AngleImage angles;
    // Number of shots that landed on each position; zero means the angle
    // defaulted to 0 and carries no information.
    std::vector<std::uint64_t> support;

    std::size_t unobserved_positions() const;
};

// Estimates each angle as atan2(sqrt(n1), sqrt(n0)) from full-register
// counts. Throws std::invalid_argument for zero shots or malformed keys.
ShotRetrieval retrieve_from_shots(const qsim::ShotCounts& counts, int n);

double mean_absolute_angle_error(const AngleImage& estimate, const AngleImage& truth);

// PGM P2 (ASCII) and P5 (binary). maxval other than 255 is rescaled on read.
PixelImage read_pgm(std::istream& in);
PixelImage read_pgm_file(const std::string& path);
void write_pgm(std::ostream& out, const PixelImage& img, bool binary = true);
void write_pgm_file(const std::string& path, const PixelImage& img, bool binary = true);

// `position,row,col,theta` rows after a header.
void write_angles_csv(std::ostream& out, const AngleImage& angles);

}  // namespace fqp::frqi
