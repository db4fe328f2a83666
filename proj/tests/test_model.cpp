#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fqp/checkpoint.hpp"
#include "fqp/frqi.hpp"
#include "fqp/model.hpp"
#include "support.hpp"

using namespace fqp;
using namespace fqp::testing;
using model::Architecture;
using model::FeatureMode;
using model::ModelConfig;
using model::Pairing;

namespace {

ModelConfig small_config(int n = 1, int memory = 2, int classes = 3) {
    ModelConfig c;
    c.n = n;
    c.memory_qubits = memory;
    c.num_classes = classes;
    return c;
}

model::ParamVector random_params(const model::Model& m, Rng& rng, double head_scale = 1.0) {
    model::ParamVector p;
    p.values.resize(m.num_params());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool rotation = m.describe(i).role == model::ParamRole::CellRotation;
        p.values[i] = rotation ? rng.uniform(-kPi, kPi) : head_scale * rng.uniform(-2, 2);
    }
    return p;
}

// Forward pass written from the model description alone, with every gate
// applied as a dense matrix.
std::vector<double> dense_forward(const ModelConfig& c, const std::vector<double>& params,
                                  const frqi::AngleImage& img) {
    const int frqi_q = 2 * c.n + 1;
    const int total = frqi_q + c.memory_qubits;
    std::vector<Complex> state(std::size_t{1} << total, 0.0);
    const auto enc = frqi::encode_direct(img);
    for (std::size_t i = 0; i < enc.dimension(); ++i) state[i] = enc[i];

    std::vector<std::vector<int>> cells;
    if (c.architecture == Architecture::FrqiPairs) {
        for (int i = 0; i < c.n; ++i) {
            for (int j = 0; j < c.n; ++j) {
                if (c.pairing == Pairing::TriangularUnordered && j < i) continue;
                cells.push_back({0, 1 + i, 1 + c.n + j});
            }
        }
    } else {
        std::vector<int> all(static_cast<std::size_t>(frqi_q));
        std::iota(all.begin(), all.end(), 0);
        const int reps = c.architecture == Architecture::Naive ? c.repetitions : 1;
        for (int r = 0; r < reps; ++r) cells.push_back(all);
    }

    std::size_t p = 0;
    const auto apply = [&](const qsim::GateOp& g) { state = mat_vec(full_unitary(g, total), state); };
    for (const auto& inputs : cells) {
        for (int layer = 0; layer < c.deep_layers; ++layer) {
            for (int in : inputs) {
                for (int m = 0; m < c.memory_qubits; ++m) apply(qsim::GateOp::cry({in}, frqi_q + m, params[p++]));
            }
            for (int m = 0; m < c.memory_qubits; ++m) {
                apply(qsim::GateOp::ry(frqi_q + m, params[p++]));
                apply(qsim::GateOp::rz(frqi_q + m, params[p++]));
            }
            if (c.memory_qubits >= 2) {
                for (int m = 0; m < c.memory_qubits; ++m) {
                    apply(qsim::GateOp::cnot(frqi_q + m, frqi_q + (m + 1) % c.memory_qubits));
                }
            }
        }
    }

    std::vector<double> features;
    if (c.head.feature_mode == FeatureMode::BasisProbabilities) {
        features.assign(std::size_t{1} << c.memory_qubits, 0.0);
        for (std::size_t i = 0; i < state.size(); ++i) features[i >> frqi_q] += std::norm(state[i]);
    } else {
        features.assign(static_cast<std::size_t>(c.memory_qubits), 0.0);
        for (std::size_t i = 0; i < state.size(); ++i) {
            for (int m = 0; m < c.memory_qubits; ++m) {
                features[static_cast<std::size_t>(m)] += ((i >> (frqi_q + m)) & 1U) ? -std::norm(state[i]) : std::norm(state[i]);
            }
        }
    }

    std::vector<double> logits(static_cast<std::size_t>(c.num_classes), 0.0);
    const std::size_t f = features.size();
    for (int k = 0; k < c.num_classes; ++k) {
        for (std::size_t j = 0; j < f; ++j) logits[static_cast<std::size_t>(k)] += params[p + k * f + j] * features[j];
    }
    p += c.num_classes * f;
    if (c.head.bias) {
        for (int k = 0; k < c.num_classes; ++k) logits[static_cast<std::size_t>(k)] += params[p++];
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (auto& l : logits) l /= z;
    return logits;
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("cross-product schedule") {
        auto c = small_config(2);
        const auto cells = model::build_cell_schedule(c);
        REQUIRE(cells.size() == 4);
        // x bits on qubits 1..2, y bits on qubits 3..4, row-major over (i, j).
        CHECK(cells[0].inputs == std::vector<int>{0, 1, 3});
        CHECK(cells[1].inputs == std::vector<int>{0, 1, 4});
        CHECK(cells[2].inputs == std::vector<int>{0, 2, 3});
        CHECK(cells[3].inputs == std::vector<int>{0, 2, 4});
        c.n = 3;
        CHECK(model::build_cell_schedule(c).size() == 9);
    }

    TEST_CASE("triangular schedule") {
        auto c = small_config(3);
        c.pairing = Pairing::TriangularUnordered;
        const auto cells = model::build_cell_schedule(c);
        REQUIRE(cells.size() == 6);
        CHECK(cells[0].inputs == std::vector<int>{0, 1, 4});
        CHECK(cells[1].inputs == std::vector<int>{0, 1, 5});
        CHECK(cells[3].inputs == std::vector<int>{0, 2, 5});
        CHECK(cells[5].inputs == std::vector<int>{0, 3, 6});
    }

    TEST_CASE("schedule cardinality and the exponential saving") {
        for (int n = 1; n <= 5; ++n) {
            auto c = small_config(n, 1);
            CHECK(model::build_cell_schedule(c).size() == static_cast<std::size_t>(n * n));
            CHECK(n * n < (1 << (2 * n)));
            c.pairing = Pairing::TriangularUnordered;
            CHECK(model::build_cell_schedule(c).size() == static_cast<std::size_t>(n * (n + 1) / 2));
        }
    }

    TEST_CASE("single-cell and naive schedules read every FRQI qubit") {
        auto c = small_config(3);
        c.architecture = Architecture::SingleCell;
        const auto single = model::build_cell_schedule(c);
        REQUIRE(single.size() == 1);
        CHECK(single[0].inputs == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
        c.architecture = Architecture::Naive;
        c.repetitions = 3;
        const auto naive = model::build_cell_schedule(c);
        REQUIRE(naive.size() == 3);
        for (const auto& cell : naive) CHECK(cell.inputs == single[0].inputs);
    }

    TEST_CASE("memory register sits above the FRQI register") {
        auto c = small_config(3, 4);
        CHECK(model::memory_register(c) == std::vector<int>{7, 8, 9, 10});
        CHECK(c.total_qubits() == 11);
    }

    TEST_CASE("parameter accounting") {
        ModelConfig c;  // 4 memory, 1 layer, n = 3, 10 classes
        c.head = {FeatureMode::PerQubitZ, true};
        CHECK(model::count_parameters(c).head == 50);
        c.head = {FeatureMode::BasisProbabilities, false};
        CHECK(model::count_parameters(c).head == 160);

        c.pairing = Pairing::TriangularUnordered;
        const auto tri = model::count_parameters(c);
        CHECK(tri.cells == 6);
        CHECK(tri.pqc == 120);
        CHECK(tri.total() == 280);

        c.pairing = Pairing::CrossProduct;
        CHECK(model::count_parameters(c).pqc == 180);
        c.deep_layers = 2;
        CHECK(model::count_parameters(c).pqc == 360);

        c.architecture = Architecture::SingleCell;
        c.deep_layers = 1;
        CHECK(model::count_parameters(c).pqc == 7 * 4 + 8);

        MESSAGE("reference sizes: pqc " << model::kReferencePqcParameters << ", head "
                                        << model::kReferenceHeadParameters);
    }

    TEST_CASE("config validation") {
        ModelConfig c;
        CHECK_NOTHROW(c.validate());
        c.memory_qubits = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.deep_layers = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.num_classes = 1;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.n = 5;
        c.memory_qubits = 14;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.cell_template = "nope";
        CHECK_THROWS(model::Model{c});
    }

    TEST_CASE("names parse and print") {
        CHECK(model::parse_architecture("single-cell") == Architecture::SingleCell);
        CHECK(model::parse_architecture("naive") == Architecture::Naive);
        CHECK(model::parse_architecture("frqi-pairs") == Architecture::FrqiPairs);
        CHECK(model::parse_pairing("triangular") == Pairing::TriangularUnordered);
        CHECK(model::to_string(Pairing::CrossProduct) == "cross");
        CHECK(model::parse_feature_mode("z") == FeatureMode::PerQubitZ);
        CHECK_THROWS_AS(model::parse_pairing("diagonal"), std::invalid_argument);
    }

    TEST_CASE("cell subcircuit: parameter count and disjointness") {
        const std::vector<int> memory = {7, 8, 9, 10};
        const std::vector<int> inputs = {0, 1, 4};
        const std::vector<double> params(20, 0.1);
        const auto gates = model::cell_subcircuit(memory, inputs, params);
        CHECK(std::count_if(gates.begin(), gates.end(), [](const auto& g) { return g.parameterized(); }) == 20);
        CHECK(std::count_if(gates.begin(), gates.end(),
                            [](const auto& g) { return g.kind == qsim::GateKind::CNOT; }) == 4);
        const std::vector<double> short_params(19, 0.1);
        CHECK_THROWS_AS(model::cell_subcircuit(memory, inputs, short_params), std::invalid_argument);
        const std::vector<int> clash = {0, 7};
        const std::vector<double> clash_params(12, 0.0);
        CHECK_THROWS_AS(model::cell_subcircuit(memory, clash, clash_params), std::invalid_argument);
    }

    TEST_CASE("cell subcircuit: zero parameters act trivially on an empty memory") {
        Rng rng(79);
        const auto frqi_state = random_state(3, rng);
        std::vector<Complex> amps(std::size_t{1} << 6, 0.0);
        for (std::size_t i = 0; i < 8; ++i) amps[i] = frqi_state[i];
        auto state = qsim::StateVector::from_amplitudes(amps);
        const std::vector<int> memory = {3, 4, 5};
        const std::vector<int> inputs = {0, 1, 2};
        const std::vector<double> zeros(15, 0.0);
        qsim::apply_circuit(state, model::cell_subcircuit(memory, inputs, zeros));
        for (std::size_t i = 0; i < amps.size(); ++i) CHECK(std::abs(state[i] - amps[i]) < 1e-15);
    }

    TEST_CASE("cell subcircuit: input |1> with w = pi flips the memory qubit") {
        // Qubit 0 = input, qubit 1 = memory, one layer: CRY(w), RY(a), RZ(b).
        auto state = basis_state(2, 0b01);
        const std::vector<int> memory = {1};
        const std::vector<int> inputs = {0};
        const std::vector<double> params = {kPi, 0.0, 0.0};
        qsim::apply_circuit(state, model::cell_subcircuit(memory, inputs, params));
        CHECK(std::abs(state[0b11]) == doctest::Approx(1.0).epsilon(1e-15));
        // Same against the explicit 4x4 product.
        const double c = std::cos(kPi / 2), s = std::sin(kPi / 2);
        const Matrix cry = {{1, 0, 0, 0}, {0, c, 0, -s}, {0, 0, 1, 0}, {0, s, 0, c}};
        const auto expected = mat_vec(cry, basis_state(2, 0b01).amplitudes());
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(state[i] - expected[i]) < 1e-15);
    }

    TEST_CASE("parameter layout") {
        auto c = small_config(1, 2, 3);
        c.head.bias = true;
        const model::Model m(c);
        // one cell, 3 inputs x 2 memory + 4 = 10 rotations, head 3 x 4 + 3
        REQUIRE(m.num_params() == 10 + 12 + 3);
        CHECK(m.describe(0).role == model::ParamRole::CellRotation);
        CHECK(m.describe(0).cell == 0);
        CHECK(m.describe(10).role == model::ParamRole::HeadWeight);
        CHECK(m.describe(10).row == 0);
        CHECK(m.describe(10).col == 0);
        CHECK(m.describe(15).row == 1);
        CHECK(m.describe(15).col == 1);
        CHECK(m.describe(22).role == model::ParamRole::HeadBias);
        CHECK(m.describe(24).row == 2);
        CHECK_THROWS_AS(m.describe(25), std::out_of_range);
    }

    TEST_CASE("init: small seeded rotations and a zero head") {
        ModelConfig c;
        const model::Model m(c);
        const auto a = model::init_params(c, 5);
        const auto b = model::init_params(c, 5);
        const auto other = model::init_params(c, 6);
        CHECK(a == b);
        CHECK(a != other);
        REQUIRE(a.size() == m.num_params());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (m.describe(i).role == model::ParamRole::CellRotation) {
                CHECK(std::abs(a.values[i]) <= kPi / 10);
            } else {
                CHECK(a.values[i] == 0.0);
            }
        }
    }

    TEST_CASE("forward matches a dense-matrix implementation") {
        Rng rng(83);
        std::vector<ModelConfig> configs;
        configs.push_back(small_config(1, 2, 3));
        auto tri = small_config(2, 1, 2);
        tri.pairing = Pairing::TriangularUnordered;
        configs.push_back(tri);
        auto z = small_config(1, 3, 4);
        z.head = {FeatureMode::PerQubitZ, true};
        z.deep_layers = 2;
        configs.push_back(z);
        auto naive = small_config(1, 2, 2);
        naive.architecture = Architecture::Naive;
        naive.repetitions = 2;
        configs.push_back(naive);
        auto single = small_config(1, 1, 2);
        single.architecture = Architecture::SingleCell;
        configs.push_back(single);

        for (const auto& c : configs) {
            const model::Model m(c);
            for (int trial = 0; trial < 3; ++trial) {
                const auto params = random_params(m, rng);
                const auto img = random_angles(c.n, rng);
                const auto got = m.forward(params, img);
                const auto expected = dense_forward(c, params.values, img);
                REQUIRE(got.size() == expected.size());
                for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::abs(got[k] - expected[k]) < 1e-12);
            }
        }
    }

    TEST_CASE("zero parameters give the uniform distribution") {
        ModelConfig c;
        const model::Model m(c);
        const model::ParamVector zeros{std::vector<double>(m.num_params(), 0.0)};
        Rng rng(89);
        const auto probs = m.forward(zeros, random_angles(3, rng));
        for (double p : probs) CHECK(p == doctest::Approx(0.1).epsilon(1e-15));
    }

    TEST_CASE("output is always a distribution") {
        auto c = small_config(2, 2, 5);
        c.head.bias = true;
        const model::Model m(c);
        Rng rng(97);
        for (int draw = 0; draw < 1000; ++draw) {
            const auto probs = m.forward(random_params(m, rng, 5.0), random_angles(2, rng));
            double total = 0.0;
            for (double p : probs) {
                REQUIRE(p >= 0.0);
                total += p;
            }
            REQUIRE(std::abs(total - 1.0) < 1e-10);
        }
    }

    TEST_CASE("forward is bit-reproducible") {
        ModelConfig c;
        const model::Model m(c);
        Rng rng(101);
        const auto params = random_params(m, rng);
        const auto img = random_angles(3, rng);
        CHECK(m.forward(params, img) == m.forward(params, img));
        CHECK(model::forward(c, params, img) == m.forward(params, img));
    }

    TEST_CASE("full circuit keeps the joint state normalized") {
        ModelConfig c;
        const model::Model m(c);
        Rng rng(103);
        const auto params = random_params(m, rng);
        auto state = m.initial_state(random_angles(3, rng));
        m.run(state, params.values, 0, m.gates().size());
        CHECK(std::abs(state.norm_squared() - 1.0) < 1e-12);
    }

    TEST_CASE("cell order matters") {
        auto c = small_config(2, 2, 3);
        const model::Model m(c);
        auto reversed = model::build_cell_schedule(c);
        std::reverse(reversed.begin(), reversed.end());
        const model::Model r(c, reversed);
        Rng rng(107);
        bool differs = false;
        for (int draw = 0; draw < 10 && !differs; ++draw) {
            const auto params = random_params(m, rng);
            const auto img = random_angles(2, rng);
            const auto a = m.forward(params, img);
            const auto b = r.forward(params, img);
            for (std::size_t k = 0; k < a.size(); ++k) differs = differs || std::abs(a[k] - b[k]) > 1e-6;
        }
        CHECK(differs);
    }

    TEST_CASE("input checks") {
        ModelConfig c;
        const model::Model m(c);
        Rng rng(109);
        const model::ParamVector short_params{std::vector<double>(3, 0.0)};
        CHECK_THROWS_AS(m.forward(short_params, random_angles(3, rng)), std::invalid_argument);
        auto params = model::init_params(c, 1);
        CHECK_THROWS_AS(m.forward(params, random_angles(2, rng)), std::invalid_argument);
        params.values[0] = std::nan("");
        CHECK_THROWS_AS(m.forward(params, random_angles(3, rng)), std::invalid_argument);
    }

    TEST_CASE("shot-based features approach the analytic ones") {
        auto c = small_config(1, 2, 3);
        const model::Model m(c);
        Rng rng(113);
        const auto params = random_params(m, rng);
        const auto img = random_angles(1, rng);
        const auto exact = m.forward(params, img);
        const auto sampled = m.forward_sampled(params, img, 200000, 4);
        for (std::size_t k = 0; k < exact.size(); ++k) CHECK(std::abs(exact[k] - sampled[k]) < 0.02);
        CHECK(m.forward_sampled(params, img, 1000, 9) == m.forward_sampled(params, img, 1000, 9));
    }

    TEST_CASE("softmax is stable for large logits") {
        const std::vector<double> logits = {1000.0, 1000.0, -1000.0};
        const auto p = model::softmax(logits);
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[2] == 0.0);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip is exact") {
        ModelConfig c;
        c.pairing = Pairing::TriangularUnordered;
        c.head = {FeatureMode::PerQubitZ, true};
        const model::Model m(c);
        Rng rng(127);
        model::Checkpoint ck{c, random_params(m, rng), {{"note", "x"}}};
        ck.params.values[0] = 0.1 + 0.2;  // awkward binary value
        std::stringstream buf;
        model::save_checkpoint(buf, ck);
        const auto back = model::load_checkpoint(buf);
        CHECK(back.config == c);
        CHECK(back.params == ck.params);
        CHECK(back.metadata["note"] == "x");
    }

    TEST_CASE("tampered checkpoints are rejected") {
        ModelConfig c;
        model::Checkpoint ck{c, model::init_params(c, 0), {}};
        std::stringstream buf;
        model::save_checkpoint(buf, ck);
        auto doc = nlohmann::json::parse(buf.str());

        auto bad_tag = doc;
        bad_tag["layout_version"] = "fqp-layout-v0";
        std::istringstream in1(bad_tag.dump());
        CHECK_THROWS_AS(model::load_checkpoint(in1), model::CheckpointError);

        auto bad_count = doc;
        bad_count["params"].erase(0);
        std::istringstream in2(bad_count.dump());
        CHECK_THROWS_AS(model::load_checkpoint(in2), model::CheckpointError);

        auto bad_config = doc;
        bad_config["config"]["memory_qubits"] = 0;
        std::istringstream in3(bad_config.dump());
        CHECK_THROWS_AS(model::load_checkpoint(in3), model::CheckpointError);

        std::istringstream in4("{not json");
        CHECK_THROWS_AS(model::load_checkpoint(in4), model::CheckpointError);

        auto bad_format = doc;
        bad_format["format"] = "something-else";
        std::istringstream in5(bad_format.dump());
        CHECK_THROWS_AS(model::load_checkpoint(in5), model::CheckpointError);
    }
}
