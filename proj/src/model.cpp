#include "fqp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fqp/random.hpp"

namespace fqp::model {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (n < 1 || n > 5) throw std::invalid_argument("image side exponent n must be in 1..5");
    if (memory_qubits < 1) throw std::invalid_argument("memory_qubits must be >= 1");
    if (deep_layers < 1) throw std::invalid_argument("deep_layers must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (architecture == Architecture::Naive && repetitions < 1) {
        throw std::invalid_argument("naive architecture needs repetitions >= 1");
    }
    if (total_qubits() > qsim::kDefaultMaxQubits) {
        throw std::invalid_argument("model needs " + std::to_string(total_qubits()) + " qubits, above the " +
                                    std::to_string(qsim::kDefaultMaxQubits) + "-qubit ceiling");
    }
    if (head.feature_mode == FeatureMode::BasisProbabilities && memory_qubits > 12) {
        throw std::invalid_argument("basis-probability features need memory_qubits <= 12");
    }
    find_cell_template(cell_template);
}

int ModelConfig::feature_dim() const {
    return head.feature_mode == FeatureMode::BasisProbabilities ? (1 << memory_qubits) : memory_qubits;
}

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::SingleCell: return "single-cell";
        case Architecture::Naive: return "naive";
        case Architecture::FrqiPairs: return "frqi-pairs";
    }
    return "?";
}

std::string to_string(Pairing p) {
    return p == Pairing::CrossProduct ? "cross" : "triangular";
}

std::string to_string(FeatureMode m) {
    return m == FeatureMode::BasisProbabilities ? "basis" : "z";
}

Architecture parse_architecture(std::string_view s) {
    const auto v = lower(s);
    if (v == "single-cell" || v == "single") return Architecture::SingleCell;
    if (v == "naive") return Architecture::Naive;
    if (v == "frqi-pairs" || v == "pairs") return Architecture::FrqiPairs;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

Pairing parse_pairing(std::string_view s) {
    const auto v = lower(s);
    if (v == "cross" || v == "cross-product") return Pairing::CrossProduct;
    if (v == "triangular" || v == "triangular-unordered") return Pairing::TriangularUnordered;
    throw std::invalid_argument("unknown pairing '" + std::string(s) + "'");
}

FeatureMode parse_feature_mode(std::string_view s) {
    const auto v = lower(s);
    if (v == "basis" || v == "basis-probabilities") return FeatureMode::BasisProbabilities;
    if (v == "z" || v == "per-qubit-z") return FeatureMode::PerQubitZ;
    throw std::invalid_argument("unknown feature mode '" + std::string(s) + "'");
}

std::vector<Cell> build_cell_schedule(const ModelConfig& config) {
    const int n = config.n;
    const auto x_bit = [](int i) { return 1 + i; };
    const auto y_bit = [n](int j) { return 1 + n + j; };

    Cell whole;
    for (int q = 0; q < config.frqi_qubits(); ++q) whole.inputs.push_back(q);

    std::vector<Cell> cells;
    switch (config.architecture) {
        case Architecture::SingleCell:
            cells.push_back(whole);
            break;
        case Architecture::Naive:
            cells.assign(static_cast<std::size_t>(config.repetitions), whole);
            break;
        case Architecture::FrqiPairs:
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    if (config.pairing == Pairing::TriangularUnordered && j < i) continue;
                    cells.push_back(Cell{{0, x_bit(i), y_bit(j)}});
                }
            }
            break;
    }
    return cells;
}

std::vector<int> memory_register(const ModelConfig& config) {
    std::vector<int> memory;
    for (int m = 0; m < config.memory_qubits; ++m) memory.push_back(config.frqi_qubits() + m);
    return memory;
}

int CoupledRotationCell::parameter_count(int memory_qubits, int input_qubits, int layers) const {
    return layers * (input_qubits * memory_qubits + 2 * memory_qubits);
}

void CoupledRotationCell::emit(std::span<const int> memory, std::span<const int> inputs, int layers, int first_param,
                               std::vector<ParamGate>& out) const {
    int p = first_param;
    const auto m_count = memory.size();
    for (int layer = 0; layer < layers; ++layer) {
        for (int in : inputs) {
            for (int mem : memory) out.push_back({qsim::GateOp::cry({in}, mem, 0.0), p++});
        }
        for (int mem : memory) {
            out.push_back({qsim::GateOp::ry(mem, 0.0), p++});
            out.push_back({qsim::GateOp::rz(mem, 0.0), p++});
        }
        if (m_count >= 2) {
            for (std::size_t m = 0; m < m_count; ++m) out.push_back({qsim::GateOp::cnot(memory[m], memory[(m + 1) % m_count]), -1});
        }
    }
}

const CellTemplate& find_cell_template(std::string_view name) {
    static const CoupledRotationCell coupled_rotation;
    if (name == coupled_rotation.name()) return coupled_rotation;
    throw std::invalid_argument("unknown cell template '" + std::string(name) + "'");
}

std::vector<qsim::GateOp> cell_subcircuit(std::span<const int> memory, std::span<const int> inputs,
                                          std::span<const double> params, int layers,
                                          std::string_view cell_template) {
    for (int in : inputs) {
        if (std::find(memory.begin(), memory.end(), in) != memory.end()) {
            throw std::invalid_argument("cell input qubit " + std::to_string(in) + " is also a memory qubit");
        }
    }
    const auto& tmpl = find_cell_template(cell_template);
    const int expected = tmpl.parameter_count(static_cast<int>(memory.size()), static_cast<int>(inputs.size()), layers);
    if (static_cast<int>(params.size()) != expected) {
        throw std::invalid_argument("cell expects " + std::to_string(expected) + " parameters, got " +
                                    std::to_string(params.size()));
    }
    std::vector<ParamGate> emitted;
    tmpl.emit(memory, inputs, layers, 0, emitted);
    std::vector<qsim::GateOp> gates;
    gates.reserve(emitted.size());
    for (auto& pg : emitted) {
        if (pg.param >= 0) pg.gate.angle = params[static_cast<std::size_t>(pg.param)];
        gates.push_back(std::move(pg.gate));
    }
    return gates;
}

ParameterCount count_parameters(const ModelConfig& config) {
    config.validate();
    const auto& tmpl = find_cell_template(config.cell_template);
    ParameterCount count;
    for (const auto& cell : build_cell_schedule(config)) {
        ++count.cells;
        count.pqc += tmpl.parameter_count(config.memory_qubits, static_cast<int>(cell.inputs.size()), config.deep_layers);
    }
    count.head = config.num_classes * (config.feature_dim() + (config.head.bias ? 1 : 0));
    return count;
}

ParamVector init_params(const ModelConfig& config, std::uint64_t seed) {
    const auto count = count_parameters(config);
    constexpr double kInitRange = std::numbers::pi / 10;
    ParamVector params;
    params.values.assign(static_cast<std::size_t>(count.total()), 0.0);
    Rng rng(seed);
    for (int i = 0; i < count.pqc; ++i) params.values[static_cast<std::size_t>(i)] = rng.uniform(-kInitRange, kInitRange);
    return params;
}

Model::Model(ModelConfig config) : Model(config, build_cell_schedule(config)) {}

Model::Model(ModelConfig config, std::vector<Cell> schedule)
    : config_(std::move(config)), schedule_(std::move(schedule)) {
    config_.validate();
    memory_ = memory_register(config_);
    const auto& tmpl = find_cell_template(config_.cell_template);
    int next_param = 0;
    for (const auto& cell : schedule_) {
        for (int in : cell.inputs) {
            if (in < 0 || in >= config_.frqi_qubits()) {
                throw std::invalid_argument("cell input " + std::to_string(in) + " is not an FRQI qubit");
            }
        }
        const int count = tmpl.parameter_count(config_.memory_qubits, static_cast<int>(cell.inputs.size()),
                                               config_.deep_layers);
        const auto before = gates_.size();
        tmpl.emit(memory_, cell.inputs, config_.deep_layers, next_param, gates_);
        for (auto i = before; i < gates_.size(); ++i) {
            const int p = gates_[i].param;
            if (p >= 0 && (p < next_param || p >= next_param + count)) {
                throw std::logic_error("cell template emitted a parameter outside its range");
            }
        }
        next_param += count;
        ++counts_.cells;
    }
    counts_.pqc = next_param;
    counts_.head = config_.num_classes * (config_.feature_dim() + (config_.head.bias ? 1 : 0));
}

ParamSlot Model::describe(std::size_t index) const {
    if (index >= num_params()) throw std::out_of_range("parameter index out of range");
    const auto i = static_cast<int>(index);
    if (i < counts_.pqc) {
        ParamSlot slot{ParamRole::CellRotation};
        int cell = -1;
        for (std::size_t g = 0; g < gates_.size(); ++g) {
            if (gates_[g].param == i) {
                slot.gate = static_cast<int>(g);
                break;
            }
        }
        // Cells own contiguous ranges, so count the cell boundaries crossed.
        const auto& tmpl = find_cell_template(config_.cell_template);
        int offset = 0;
        for (const auto& c : schedule_) {
            ++cell;
            offset += tmpl.parameter_count(config_.memory_qubits, static_cast<int>(c.inputs.size()), config_.deep_layers);
            if (i < offset) break;
        }
        slot.cell = cell;
        return slot;
    }
    const int head_index = i - counts_.pqc;
    const int features = config_.feature_dim();
    if (head_index < config_.num_classes * features) {
        return ParamSlot{ParamRole::HeadWeight, -1, -1, head_index / features, head_index % features};
    }
    return ParamSlot{ParamRole::HeadBias, -1, -1, head_index - config_.num_classes * features, -1};
}

void Model::check_params(const ParamVector& params) const {
    if (params.size() != num_params()) {
        throw std::invalid_argument("parameter vector has " + std::to_string(params.size()) + " entries, model needs " +
                                    std::to_string(num_params()));
    }
    for (double v : params.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("parameter vector holds a non-finite value");
    }
}

void Model::check_input(const frqi::AngleImage& angles) const {
    if (angles.n != config_.n) {
        throw std::invalid_argument("image side exponent " + std::to_string(angles.n) + " does not match model n=" +
                                    std::to_string(config_.n));
    }
}

qsim::StateVector Model::initial_state(const frqi::AngleImage& angles) const {
    check_input(angles);
    const auto image = frqi::encode_direct(angles);
    std::vector<qsim::Amplitude> amps(std::size_t{1} << config_.total_qubits());
    const auto src = image.amplitudes();
    std::copy(src.begin(), src.end(), amps.begin());
    return qsim::StateVector::from_amplitudes(std::move(amps));
}

void Model::run(qsim::StateVector& state, std::span<const double> params, std::size_t begin, std::size_t end) const {
    for (std::size_t g = begin; g < end; ++g) {
        const auto& pg = gates_[g];
        if (pg.param >= 0) {
            qsim::apply_gate(state, pg.gate, params[static_cast<std::size_t>(pg.param)]);
        } else {
            qsim::apply_gate(state, pg.gate);
        }
    }
}

std::vector<double> Model::read_features(const qsim::StateVector& state) const {
    if (config_.head.feature_mode == FeatureMode::BasisProbabilities) return qsim::probabilities(state, memory_);
    std::vector<double> z;
    z.reserve(memory_.size());
    for (int m : memory_) z.push_back(qsim::expectation_z(state, m));
    return z;
}

std::vector<double> Model::features_from_shots(const qsim::ShotCounts& counts) const {
    if (counts.total_shots == 0) throw std::invalid_argument("no shots to estimate features from");
    const std::size_t width = memory_.size();
    std::vector<double> freq(std::size_t{1} << width, 0.0);
    for (const auto& [bits, n] : counts.counts) {
        if (bits.size() != width) throw std::invalid_argument("shot outcome width does not match memory register");
        std::size_t outcome = 0;
        for (char ch : bits) outcome = (outcome << 1) | (ch == '1' ? 1u : 0u);
        freq[outcome] += static_cast<double>(n) / static_cast<double>(counts.total_shots);
    }
    if (config_.head.feature_mode == FeatureMode::BasisProbabilities) return freq;
    std::vector<double> z(width, 0.0);
    for (std::size_t k = 0; k < freq.size(); ++k) {
        for (std::size_t m = 0; m < width; ++m) z[m] += ((k >> m) & 1u) ? -freq[k] : freq[k];
    }
    return z;
}

std::vector<double> Model::logits(std::span<const double> params, std::span<const double> features) const {
    const auto classes = static_cast<std::size_t>(config_.num_classes);
    const auto dim = static_cast<std::size_t>(config_.feature_dim());
    if (features.size() != dim) throw std::invalid_argument("feature vector has the wrong length");
    const auto head = params.subspan(static_cast<std::size_t>(counts_.pqc));
    std::vector<double> z(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        double acc = config_.head.bias ? head[classes * dim + c] : 0.0;
        for (std::size_t k = 0; k < dim; ++k) acc += head[c * dim + k] * features[k];
        z[c] = acc;
    }
    return z;
}

std::vector<double> Model::forward(const ParamVector& params, const frqi::AngleImage& angles) const {
    check_params(params);
    auto state = initial_state(angles);
    run(state, params.values, 0, gates_.size());
    return softmax(logits(params.values, read_features(state)));
}

std::vector<double> Model::forward_sampled(const ParamVector& params, const frqi::AngleImage& angles,
                                           std::uint64_t shots, std::uint64_t seed) const {
    check_params(params);
    auto state = initial_state(angles);
    run(state, params.values, 0, gates_.size());
    const auto counts = qsim::sample(state, memory_, shots, seed);
    return softmax(logits(params.values, features_from_shots(counts)));
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - top);
        total += p[i];
    }
    for (auto& v : p) v /= total;
    return p;
}

std::vector<double> forward(const ModelConfig& config, const ParamVector& params, const frqi::AngleImage& angles) {
    return Model(config).forward(params, angles);
}

}  // namespace fqp::model
