#include "fqp/qsim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "fqp/random.hpp"

namespace fqp::qsim {

namespace {

std::size_t bit(int qubit) { return std::size_t{1} << qubit; }

void check_qubit(const StateVector& state, int qubit) {
    if (qubit < 0 || qubit >= state.num_qubits()) {
        throw std::out_of_range("qubit index " + std::to_string(qubit) + " out of range for " +
                                std::to_string(state.num_qubits()) + "-qubit state");
    }
}

std::size_t control_mask(const StateVector& state, const GateOp& gate) {
    std::size_t mask = 0;
    for (int c : gate.controls) {
        check_qubit(state, c);
        if (c == gate.target) throw std::invalid_argument("gate target is also a control");
        mask |= bit(c);
    }
    return mask;
}

// Spreads the bits of `value` over the positions not set in `fixed`,
// leaving the fixed positions zero.
std::size_t deposit(std::size_t value, std::size_t fixed) {
    while (fixed != 0) {
        const std::size_t lowest = fixed & (~fixed + 1);
        const std::size_t below = lowest - 1;
        value = (value & below) | ((value & ~below) << 1);
        fixed &= fixed - 1;
    }
    return value;
}

// Amplitudes are viewed as interleaved (re, im) doubles; std::complex
// guarantees that layout.
double* raw(std::span<Amplitude> amps) { return reinterpret_cast<double*>(amps.data()); }

// Calls body(lo, hi, len) for every maximal run of `len` consecutive pairs
// (lo[k], hi[k]) whose low index has the target bit clear and every control
// bit set. lo and hi point at interleaved doubles, so a run spans 2*len
// doubles. Runs are visited in ascending index order.
template <typename Body>
void for_each_run(std::span<Amplitude> amps, int target, std::size_t control_bits, Body&& body) {
    const std::size_t tbit = bit(target);
    const std::size_t fixed = control_bits | tbit;
    const int fixed_count = std::popcount(fixed);
    const int low = std::countr_zero(fixed);
    const std::size_t run = std::size_t{1} << low;
    const std::size_t runs = (amps.size() >> fixed_count) >> low;
    double* base = raw(amps);
    const std::size_t dim = amps.size();
    if (control_bits == 0) {
        for (std::size_t block = 0; block < dim; block += 2 * tbit) body(base + 2 * block, base + 2 * (block + tbit), tbit);
        return;
    }
    if (fixed_count == 2) {
        const std::size_t high = fixed & ~(std::size_t{1} << low);
        for (std::size_t outer = 0; outer < dim; outer += 2 * high) {
            for (std::size_t inner = outer; inner < outer + high; inner += 2 * run) {
                const std::size_t i0 = inner | control_bits;
                body(base + 2 * i0, base + 2 * (i0 | tbit), run);
            }
        }
        return;
    }
    for (std::size_t r = 0; r < runs; ++r) {
        const std::size_t i0 = deposit(r << low, fixed) | control_bits;
        body(base + 2 * i0, base + 2 * (i0 | tbit), run);
    }
}

void rotate_y(std::span<Amplitude> amps, int target, std::size_t mask, double angle) {
    const double c = std::cos(angle / 2);
    const double s = std::sin(angle / 2);
    for_each_run(amps, target, mask, [c, s](double* lo, double* hi, std::size_t len) {
        if (len == 1) {
            const double ar = lo[0], ai = lo[1], br = hi[0], bi = hi[1];
            lo[0] = c * ar - s * br;
            lo[1] = c * ai - s * bi;
            hi[0] = s * ar + c * br;
            hi[1] = s * ai + c * bi;
            return;
        }
        for (std::size_t k = 0; k < 2 * len; ++k) {
            const double a = lo[k];
            const double b = hi[k];
            lo[k] = c * a - s * b;
            hi[k] = s * a + c * b;
        }
    });
}

void rotate_z(std::span<Amplitude> amps, int target, double angle) {
    const double c = std::cos(angle / 2);
    const double s = std::sin(angle / 2);
    // e^{-i a/2} on |0>, e^{+i a/2} on |1>
    for_each_run(amps, target, 0, [c, s](double* lo, double* hi, std::size_t len) {
        for (std::size_t k = 0; k < len; ++k) {
            const double lr = lo[2 * k], li = lo[2 * k + 1];
            const double hr = hi[2 * k], hi_ = hi[2 * k + 1];
            lo[2 * k] = c * lr + s * li;
            lo[2 * k + 1] = c * li - s * lr;
            hi[2 * k] = c * hr - s * hi_;
            hi[2 * k + 1] = c * hi_ + s * hr;
        }
    });
}

void hadamard(std::span<Amplitude> amps, int target) {
    const double r = 1.0 / std::sqrt(2.0);
    for_each_run(amps, target, 0, [r](double* lo, double* hi, std::size_t len) {
        if (len == 1) {
            const double ar = lo[0], ai = lo[1], br = hi[0], bi = hi[1];
            lo[0] = r * (ar + br);
            lo[1] = r * (ai + bi);
            hi[0] = r * (ar - br);
            hi[1] = r * (ai - bi);
            return;
        }
        for (std::size_t k = 0; k < 2 * len; ++k) {
            const double a = lo[k];
            const double b = hi[k];
            lo[k] = r * (a + b);
            hi[k] = r * (a - b);
        }
    });
}

void flip(std::span<Amplitude> amps, int target, std::size_t mask) {
    for_each_run(amps, target, mask, [](double* lo, double* hi, std::size_t len) {
        if (len == 1) {
            std::swap(lo[0], hi[0]);
            std::swap(lo[1], hi[1]);
            return;
        }
        std::swap_ranges(lo, lo + 2 * len, hi);
    });
}

}  // namespace

double StateVector::norm_squared() const {
    double total = 0.0;
    for (const auto& a : amplitudes_) total += std::norm(a);
    return total;
}

StateVector StateVector::from_amplitudes(std::vector<Amplitude> amplitudes) {
    if (amplitudes.size() < 2 || !std::has_single_bit(amplitudes.size())) {
        throw std::invalid_argument("amplitude count must be a power of two >= 2");
    }
    const int n = std::countr_zero(amplitudes.size());
    return StateVector(n, std::move(amplitudes));
}

StateVector new_zero_state(int num_qubits, int max_qubits) {
    if (num_qubits < 1 || num_qubits > max_qubits) {
        throw std::out_of_range("qubit count " + std::to_string(num_qubits) + " outside [1, " +
                                std::to_string(max_qubits) + "]");
    }
    std::vector<Amplitude> amps(std::size_t{1} << num_qubits);
    amps[0] = 1.0;
    return StateVector(num_qubits, std::move(amps));
}

GateOp inverse(const GateOp& gate) {
    GateOp inv = gate;
    if (gate.parameterized()) inv.angle = -gate.angle;
    return inv;
}

void apply_gate(StateVector& state, const GateOp& gate) { apply_gate(state, gate, gate.angle); }

void apply_gate(StateVector& state, const GateOp& gate, double angle) {
    check_qubit(state, gate.target);
    const std::size_t mask = control_mask(state, gate);
    auto amps = state.amplitudes();
    switch (gate.kind) {
        case GateKind::RY:
        case GateKind::RZ:
        case GateKind::CRY:
            if (!std::isfinite(angle)) throw std::invalid_argument("non-finite rotation angle");
            break;
        default:
            break;
    }
    switch (gate.kind) {
        case GateKind::RY:
            if (!gate.controls.empty()) throw std::invalid_argument("RY takes no controls; use CRY");
            rotate_y(amps, gate.target, 0, angle);
            break;
        case GateKind::CRY:
            rotate_y(amps, gate.target, mask, angle);
            break;
        case GateKind::RZ:
            if (!gate.controls.empty()) throw std::invalid_argument("RZ takes no controls");
            rotate_z(amps, gate.target, angle);
            break;
        case GateKind::H:
            if (!gate.controls.empty()) throw std::invalid_argument("H takes no controls");
            hadamard(amps, gate.target);
            break;
        case GateKind::X:
            if (!gate.controls.empty()) throw std::invalid_argument("X takes no controls; use CNOT");
            flip(amps, gate.target, 0);
            break;
        case GateKind::CNOT:
            if (gate.controls.size() != 1) throw std::invalid_argument("CNOT needs exactly one control");
            flip(amps, gate.target, mask);
            break;
    }
}

void apply_circuit(StateVector& state, std::span<const GateOp> gates) {
    for (const auto& g : gates) apply_gate(state, g);
}

std::vector<double> probabilities(const StateVector& state, std::span<const int> qubits) {
    if (qubits.empty()) throw std::invalid_argument("probabilities: empty qubit subset");
    std::size_t seen = 0;
    for (int q : qubits) {
        check_qubit(state, q);
        if (seen & bit(q)) throw std::invalid_argument("probabilities: duplicate qubit index");
        seen |= bit(q);
    }
    std::vector<double> probs(std::size_t{1} << qubits.size(), 0.0);
    const auto amps = state.amplitudes();

    // Contiguous high block (the model's memory register) reduces to one shift.
    bool contiguous = true;
    for (std::size_t j = 1; j < qubits.size(); ++j) contiguous &= qubits[j] == qubits[0] + static_cast<int>(j);
    if (contiguous) {
        // Each outcome owns blocks of 2^shift consecutive amplitudes.
        const std::size_t block = std::size_t{1} << qubits[0];
        const std::size_t period = block * probs.size();
        const double* data = reinterpret_cast<const double*>(amps.data());
        for (std::size_t start = 0; start < amps.size(); start += period) {
            for (std::size_t k = 0; k < probs.size(); ++k) {
                const double* chunk = data + 2 * (start + k * block);
                double sum = 0.0;
                for (std::size_t j = 0; j < 2 * block; ++j) sum += chunk[j] * chunk[j];
                probs[k] += sum;
            }
        }
        return probs;
    }
    for (std::size_t i = 0; i < amps.size(); ++i) {
        std::size_t outcome = 0;
        for (std::size_t j = 0; j < qubits.size(); ++j) outcome |= ((i >> qubits[j]) & 1u) << j;
        probs[outcome] += std::norm(amps[i]);
    }
    return probs;
}

double expectation_z(const StateVector& state, int qubit) {
    check_qubit(state, qubit);
    double value = 0.0;
    const auto amps = state.amplitudes();
    for (std::size_t i = 0; i < amps.size(); ++i) {
        const double p = std::norm(amps[i]);
        value += (i & bit(qubit)) ? -p : p;
    }
    return value;
}

std::uint64_t ShotCounts::count(const std::string& bitstring) const {
    auto it = counts.find(bitstring);
    return it == counts.end() ? 0 : it->second;
}

std::string outcome_bitstring(std::uint64_t outcome, std::size_t width) {
    std::string s(width, '0');
    for (std::size_t j = 0; j < width; ++j) {
        if ((outcome >> j) & 1u) s[width - 1 - j] = '1';
    }
    return s;
}

ShotCounts sample(const StateVector& state, std::span<const int> qubits, std::uint64_t shots,
                  std::uint64_t seed) {
    if (qubits.empty()) throw std::invalid_argument("sample: empty qubit subset");
    if (shots == 0) throw std::invalid_argument("sample: shots must be >= 1");
    const auto probs = probabilities(state, qubits);

    std::vector<double> cumulative(probs.size());
    double running = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        running += probs[k];
        cumulative[k] = running;
    }
    // Guard against rounding so the last outcome with nonzero mass absorbs
    // draws landing beyond the accumulated total.
    std::size_t last_nonzero = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] > 0.0) last_nonzero = k;
    }

    std::vector<std::uint64_t> tally(probs.size(), 0);
    Rng rng(seed);
    for (std::uint64_t s = 0; s < shots; ++s) {
        const double u = rng.uniform01() * running;
        auto k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                          cumulative.begin());
        k = std::min(k, last_nonzero);
        ++tally[k];
    }

    ShotCounts result;
    result.qubits.assign(qubits.begin(), qubits.end());
    result.total_shots = shots;
    for (std::size_t k = 0; k < tally.size(); ++k) {
        if (tally[k] > 0) result.counts.emplace(outcome_bitstring(k, qubits.size()), tally[k]);
    }
    return result;
}

void write_amplitudes_csv(std::ostream& out, const StateVector& state) {
    out << "index,real,imag\n";
    char line[96];
    const auto amps = state.amplitudes();
    for (std::size_t i = 0; i < amps.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i, amps[i].real(), amps[i].imag());
        out << line;
    }
}

void write_counts_csv(std::ostream& out, const ShotCounts& counts) {
    out << "bitstring,count\n";
    for (const auto& [bits, n] : counts.counts) out << bits << ',' << n << '\n';
}

ShotCounts read_counts_csv(std::istream& in) {
    ShotCounts result;
    std::string line;
    if (!std::getline(in, line) || line.rfind("bitstring,count", 0) != 0) {
        throw std::runtime_error("counts CSV: missing 'bitstring,count' header");
    }
    std::size_t width = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("counts CSV: malformed row '" + line + "'");
        std::string bits = line.substr(0, comma);
        if (bits.empty() || bits.find_first_not_of("01") != std::string::npos) {
            throw std::runtime_error("counts CSV: bad bitstring '" + bits + "'");
        }
        if (width == 0) width = bits.size();
        if (bits.size() != width) throw std::runtime_error("counts CSV: inconsistent bitstring width");
        std::uint64_t n = 0;
        std::istringstream(line.substr(comma + 1)) >> n;
        result.counts[bits] += n;
        result.total_shots += n;
    }
    for (std::size_t j = 0; j < width; ++j) result.qubits.push_back(static_cast<int>(j));
    return result;
}

}  // namespace fqp::qsim
