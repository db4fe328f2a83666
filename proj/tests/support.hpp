// Shared fixtures and independent reference implementations for the tests.
#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "fqp/frqi.hpp"
#include "fqp/qsim.hpp"
#include "fqp/random.hpp"

namespace fqp::testing {

using Complex = std::complex<double>;
using Matrix = std::vector<std::vector<Complex>>;

inline constexpr double kPi = 3.14159265358979323846;

inline qsim::StateVector basis_state(int num_qubits, std::size_t index) {
    std::vector<Complex> amps(std::size_t{1} << num_qubits);
    amps[index] = 1.0;
    return qsim::StateVector::from_amplitudes(std::move(amps));
}

inline qsim::StateVector random_state(int num_qubits, Rng& rng) {
    std::vector<Complex> amps(std::size_t{1} << num_qubits);
    double norm = 0.0;
    for (auto& a : amps) {
        a = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        norm += std::norm(a);
    }
    for (auto& a : amps) a /= std::sqrt(norm);
    return qsim::StateVector::from_amplitudes(std::move(amps));
}

inline frqi::AngleImage random_angles(int n, Rng& rng) {
    std::vector<double> angles(std::size_t{1} << (2 * n));
    for (auto& a : angles) a = rng.uniform(0.0, frqi::kHalfPi);
    return frqi::AngleImage(n, std::move(angles));
}

// 2x2 matrix of the gate's single-qubit action.
inline Matrix single_qubit_matrix(const qsim::GateOp& g) {
    const double c = std::cos(g.angle / 2), s = std::sin(g.angle / 2);
    const double r = 1.0 / std::sqrt(2.0);
    switch (g.kind) {
        case qsim::GateKind::RY:
        case qsim::GateKind::CRY: return {{c, -s}, {s, c}};
        case qsim::GateKind::RZ: return {{std::polar(1.0, -g.angle / 2), 0.0}, {0.0, std::polar(1.0, g.angle / 2)}};
        case qsim::GateKind::H: return {{r, r}, {r, -r}};
        case qsim::GateKind::X:
        case qsim::GateKind::CNOT: return {{0.0, 1.0}, {1.0, 0.0}};
    }
    return {};
}

// Full 2^n x 2^n unitary of a gate, built entry by entry from its definition:
// <i|U|j> is nonzero only when i and j agree off the target bit, and then it
// is the 2x2 entry when every control bit of j is set, identity otherwise.
inline Matrix full_unitary(const qsim::GateOp& g, int num_qubits) {
    const std::size_t dim = std::size_t{1} << num_qubits;
    const auto u = single_qubit_matrix(g);
    const std::size_t tbit = std::size_t{1} << g.target;
    Matrix m(dim, std::vector<Complex>(dim, 0.0));
    for (std::size_t j = 0; j < dim; ++j) {
        bool fire = true;
        for (int c : g.controls) fire = fire && ((j >> c) & 1U);
        for (std::size_t i = 0; i < dim; ++i) {
            if ((i & ~tbit) != (j & ~tbit)) continue;
            if (!fire) {
                m[i][j] = i == j ? 1.0 : 0.0;
            } else {
                m[i][j] = u[(i & tbit) ? 1 : 0][(j & tbit) ? 1 : 0];
            }
        }
    }
    return m;
}

inline std::vector<Complex> mat_vec(const Matrix& m, std::span<const Complex> v) {
    std::vector<Complex> out(v.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += m[i][j] * v[j];
    }
    return out;
}

struct ReferenceState {
    std::string name;
    qsim::StateVector state;
    std::vector<int> qubits;
};

// Fixed suite used for sampler goodness-of-fit checks.
inline std::vector<ReferenceState> sampler_reference_suite() {
    using qsim::GateOp;
    std::vector<ReferenceState> suite;
    const auto prepared = [](int n, std::vector<GateOp> gates) {
        auto s = qsim::new_zero_state(n);
        qsim::apply_circuit(s, gates);
        return s;
    };
    suite.push_back({"basis |0>", qsim::new_zero_state(1), {0}});
    suite.push_back({"H|0>", prepared(1, {GateOp::h(0)}), {0}});
    suite.push_back({"RY(1.0)|0>", prepared(1, {GateOp::ry(0, 1.0)}), {0}});
    suite.push_back({"Bell", prepared(2, {GateOp::h(0), GateOp::cnot(0, 1)}), {0, 1}});
    suite.push_back({"GHZ-3", prepared(3, {GateOp::h(0), GateOp::cnot(0, 1), GateOp::cnot(1, 2)}), {0, 1, 2}});
    suite.push_back({"uniform-3", prepared(3, {GateOp::h(0), GateOp::h(1), GateOp::h(2)}), {2, 0, 1}});
    suite.push_back({"skewed product", prepared(3, {GateOp::ry(0, 0.3), GateOp::ry(1, 2.0), GateOp::ry(2, 1.2)}),
                     {0, 1, 2}});
    Rng rng(2024);
    suite.push_back({"random-4", random_state(4, rng), {0, 1, 2, 3}});
    suite.push_back({"random-5 marginal", random_state(5, rng), {4, 0, 2}});
    suite.push_back({"FRQI 2x2", frqi::encode_direct(random_angles(1, rng)), {0, 1, 2}});
    return suite;
}

struct GoodnessOfFit {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
    bool impossible_outcome = false;  // a count landed on a zero-probability outcome
};

// Pearson chi-squared of shot counts against the Born distribution.
inline GoodnessOfFit chi_squared(const qsim::ShotCounts& counts, std::span<const double> probs) {
    GoodnessOfFit fit;
    const double shots = static_cast<double>(counts.total_shots);
    int categories = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double observed =
            static_cast<double>(counts.count(qsim::outcome_bitstring(k, counts.qubits.size())));
        if (probs[k] < 1e-15) {
            fit.impossible_outcome = fit.impossible_outcome || observed > 0;
            continue;
        }
        const double expected = shots * probs[k];
        fit.statistic += (observed - expected) * (observed - expected) / expected;
        ++categories;
    }
    fit.dof = categories - 1;
    if (fit.dof > 0) {
        fit.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(fit.dof), fit.statistic));
    }
    return fit;
}

}  // namespace fqp::testing
