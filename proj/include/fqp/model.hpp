// Recurrent quantum classifiers over an FRQI-encoded input.
//
// The joint register is the FRQI register (qubits 0..2n) with the memory
// register stacked above it (qubits 2n+1 .. 2n+memory_qubits). Cells couple a
// subset of FRQI qubits into the memory register one after another; the
// memory register is then read out analytically and fed to a softmax head.
#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fqp/frqi.hpp"
#include "fqp/qsim.hpp"

namespace fqp::model {

enum class Architecture { SingleCell, Naive, FrqiPairs };

// Which (x_i, y_j) position-bit pairs get a cell.
//   CrossProduct:        every ordered pair, n^2 cells.
//   TriangularUnordered: pairs with i <= j, n(n+1)/2 cells.
enum class Pairing { CrossProduct, TriangularUnordered };

enum class FeatureMode {
    BasisProbabilities,  // 2^memory_qubits joint outcome probabilities
    PerQubitZ,           // <Z> of each memory qubit
};

struct HeadConfig {
    FeatureMode feature_mode = FeatureMode::BasisProbabilities;
    bool bias = false;

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

inline constexpr std::string_view kDefaultCellTemplate = "coupled-rotation";

struct ModelConfig {
    Architecture architecture = Architecture::FrqiPairs;
    int repetitions = 2;  // Naive only
    Pairing pairing = Pairing::CrossProduct;
    int memory_qubits = 4;
    int deep_layers = 1;
    int n = 3;
    int num_classes = 10;
    HeadConfig head;
    std::string cell_template{kDefaultCellTemplate};

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    int frqi_qubits() const { return 2 * n + 1; }
    int total_qubits() const { return frqi_qubits() + memory_qubits; }
    int feature_dim() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string to_string(Architecture a);
std::string to_string(Pairing p);
std::string to_string(FeatureMode m);
Architecture parse_architecture(std::string_view s);
Pairing parse_pairing(std::string_view s);
FeatureMode parse_feature_mode(std::string_view s);

struct Cell {
    std::vector<int> inputs;  // FRQI qubit indices read by this cell

    friend bool operator==(const Cell&, const Cell&) = default;
};

// FrqiPairs: one cell per (x_i, y_j) pair with inputs {color, x_i, y_j},
// row-major over (i, j). SingleCell: one cell reading every FRQI qubit.
// Naive: the single-cell schedule repeated `repetitions` times.
std::vector<Cell> build_cell_schedule(const ModelConfig& config);

std::vector<int> memory_register(const ModelConfig& config);

// A gate whose angle comes from the parameter vector when `param >= 0`.
struct ParamGate {
    qsim::GateOp gate;
    int param = -1;
};

// Pluggable cell body. Implementations append their gates for one cell,
// drawing parameter indices from first_param onward, and must consume exactly
// parameter_count(...) indices.
class CellTemplate {
public:
    virtual ~CellTemplate() = default;
    virtual std::string_view name() const = 0;
    virtual int parameter_count(int memory_qubits, int input_qubits, int layers) const = 0;
    virtual void emit(std::span<const int> memory, std::span<const int> inputs, int layers, int first_param,
                      std::vector<ParamGate>& out) const = 0;
};

// Per layer: controlled-RY(w) from every input onto every memory qubit
// (input-major), then RY(a_m) and RZ(b_m) on each memory qubit, then a CNOT
// ring m -> m+1 (mod M) when M >= 2.
class CoupledRotationCell final : public CellTemplate {
public:
    std::string_view name() const override { return kDefaultCellTemplate; }
    int parameter_count(int memory_qubits, int input_qubits, int layers) const override;
    void emit(std::span<const int> memory, std::span<const int> inputs, int layers, int first_param,
              std::vector<ParamGate>& out) const override;
};

// Looks up a registered template; throws std::invalid_argument if unknown.
const CellTemplate& find_cell_template(std::string_view name);

// Gate sequence of one cell with concrete angles. `params` holds exactly the
// cell's parameters in layout order.
std::vector<qsim::GateOp> cell_subcircuit(std::span<const int> memory, std::span<const int> inputs,
                                          std::span<const double> params, int layers = 1,
                                          std::string_view cell_template = kDefaultCellTemplate);

struct ParameterCount {
    int cells = 0;
    int pqc = 0;
    int head = 0;

    int total() const { return pqc + head; }
};

ParameterCount count_parameters(const ModelConfig& config);

// Reference sizes reported for the best published model.
inline constexpr int kReferencePqcParameters = 636;
inline constexpr int kReferenceHeadParameters = 80;

// Flat parameter store. Layout: every cell's parameters in schedule order
// (within a cell, layer by layer in CellTemplate order), then the head weight
// matrix row-major [class][feature], then one bias per class when enabled.
struct ParamVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

enum class ParamRole { CellRotation, HeadWeight, HeadBias };

struct ParamSlot {
    ParamRole role;
    int cell = -1;   // CellRotation
    int gate = -1;   // CellRotation: index into Model::gates()
    int row = -1;    // head: class
    int col = -1;    // HeadWeight: feature
};

// Rotation parameters i.i.d. uniform on [-pi/10, pi/10], head zeros.
ParamVector init_params(const ModelConfig& config, std::uint64_t seed);

// Compiled model: the config's parametric circuit plus the head.
class Model {
public:
    explicit Model(ModelConfig config);
    // Custom cell order, e.g. to study permutation sensitivity.
    Model(ModelConfig config, std::vector<Cell> schedule);

    const ModelConfig& config() const { return config_; }
    const std::vector<Cell>& schedule() const { return schedule_; }
    std::span<const ParamGate> gates() const { return gates_; }
    const ParameterCount& counts() const { return counts_; }
    std::size_t num_params() const { return static_cast<std::size_t>(counts_.total()); }

    ParamSlot describe(std::size_t index) const;

    // Throws std::invalid_argument on length mismatch or non-finite values.
    void check_params(const ParamVector& params) const;
    void check_input(const frqi::AngleImage& angles) const;

    // |0...0>_memory (x) FRQI(angles).
    qsim::StateVector initial_state(const frqi::AngleImage& angles) const;

    // Applies gates [begin, end) with angles bound from params.
    void run(qsim::StateVector& state, std::span<const double> params, std::size_t begin, std::size_t end) const;

    std::vector<double> read_features(const qsim::StateVector& state) const;
    std::vector<double> features_from_shots(const qsim::ShotCounts& counts) const;

    std::vector<double> logits(std::span<const double> params, std::span<const double> features) const;

    // Class probabilities with analytic feature readout.
    std::vector<double> forward(const ParamVector& params, const frqi::AngleImage& angles) const;

    // Same pipeline with features estimated from `shots` measurements of the
    // memory register.
    std::vector<double> forward_sampled(const ParamVector& params, const frqi::AngleImage& angles,
                                        std::uint64_t shots, std::uint64_t seed) const;

private:
    ModelConfig config_;
    std::vector<Cell> schedule_;
    std::vector<ParamGate> gates_;
    std::vector<int> memory_;
    ParameterCount counts_;
};

std::vector<double> softmax(std::span<const double> logits);

std::vector<double> forward(const ModelConfig& config, const ParamVector& params, const frqi::AngleImage& angles);

}  // namespace fqp::model
