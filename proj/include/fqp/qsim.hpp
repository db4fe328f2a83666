// Dense statevector simulator.
//
// Qubit 0 is the least-significant bit of a basis-state index. Every other
// module relies on this ordering.
#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fqp::qsim {

using Amplitude = std::complex<double>;

inline constexpr int kDefaultMaxQubits = 24;

class StateVector {
public:
    int num_qubits() const { return num_qubits_; }
    std::size_t dimension() const { return amplitudes_.size(); }

    std::span<const Amplitude> amplitudes() const { return amplitudes_; }
    std::span<Amplitude> amplitudes() { return amplitudes_; }

    const Amplitude& operator[](std::size_t index) const { return amplitudes_[index]; }

    // Sum of squared magnitudes.
    double norm_squared() const;

    // Adopts `amplitudes` as-is; the length must be a power of two and the
    // caller is responsible for normalization.
    static StateVector from_amplitudes(std::vector<Amplitude> amplitudes);

    friend StateVector new_zero_state(int num_qubits, int max_qubits);

private:
    StateVector(int num_qubits, std::vector<Amplitude> amplitudes)
        : num_qubits_(num_qubits), amplitudes_(std::move(amplitudes)) {}

    int num_qubits_ = 0;
    std::vector<Amplitude> amplitudes_;
};

// |0...0> over `num_qubits` qubits. Throws std::out_of_range outside [1, max_qubits].
StateVector new_zero_state(int num_qubits, int max_qubits = kDefaultMaxQubits);

enum class GateKind { RY, RZ, H, X, CNOT, CRY };

// One gate of the supported set. Controls are always "fire on |1>"; open
// controls are expressed by sandwiching X gates.
struct GateOp {
    GateKind kind = GateKind::H;
    int target = 0;
    std::vector<int> controls;
    double angle = 0.0;

    static GateOp ry(int target, double angle) { return {GateKind::RY, target, {}, angle}; }
    static GateOp rz(int target, double angle) { return {GateKind::RZ, target, {}, angle}; }
    static GateOp h(int target) { return {GateKind::H, target, {}, 0.0}; }
    static GateOp x(int target) { return {GateKind::X, target, {}, 0.0}; }
    static GateOp cnot(int control, int target) { return {GateKind::CNOT, target, {control}, 0.0}; }
    static GateOp cry(std::vector<int> controls, int target, double angle) {
        return {GateKind::CRY, target, std::move(controls), angle};
    }

    bool parameterized() const {
        return kind == GateKind::RY || kind == GateKind::RZ || kind == GateKind::CRY;
    }
};

// The gate that undoes `gate`: negated angle for rotations, itself otherwise.
GateOp inverse(const GateOp& gate);

// In-place application. Throws std::out_of_range for bad indices and
// std::invalid_argument for a non-finite angle, a target listed among its
// controls, or a CNOT without exactly one control.
void apply_gate(StateVector& state, const GateOp& gate);

// Same as apply_gate but uses `angle` in place of gate.angle.
void apply_gate(StateVector& state, const GateOp& gate, double angle);

void apply_circuit(StateVector& state, std::span<const GateOp> gates);

// Marginal Born distribution over `qubits`. Outcome index bit j is the value
// of qubits[j].
std::vector<double> probabilities(const StateVector& state, std::span<const int> qubits);

// P(0) - P(1) on one qubit.
double expectation_z(const StateVector& state, int qubit);

// Measured outcomes keyed by bitstring. The leftmost character is the last
// qubit of the measured subset, so measuring every qubit in order 0..n-1
// gives the binary spelling of the basis index.
struct ShotCounts {
    std::vector<int> qubits;
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t total_shots = 0;

    std::uint64_t count(const std::string& bitstring) const;
};

std::string outcome_bitstring(std::uint64_t outcome, std::size_t width);

// i.i.d. draws from `probabilities`. Identical (state, qubits, shots, seed)
// always yields identical counts.
ShotCounts sample(const StateVector& state, std::span<const int> qubits, std::uint64_t shots,
                  std::uint64_t seed);

// Debug dump: one `index,real,imag` row per amplitude after a header line.
void write_amplitudes_csv(std::ostream& out, const StateVector& state);

// `bitstring,count` rows after a header line, in lexicographic bitstring order.
void write_counts_csv(std::ostream& out, const ShotCounts& counts);
ShotCounts read_counts_csv(std::istream& in);

}  // namespace fqp::qsim
