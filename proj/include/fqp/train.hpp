// Loss, gradients, optimizers and the training loop.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fqp/frqi.hpp"
#include "fqp/model.hpp"

namespace fqp::train {

struct Sample {
    frqi::AngleImage image;
    int label = 0;
};

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

enum class GradientMode { ParameterShift, FiniteDifference };

struct TrainConfig {
    OptimizerConfig optimizer;
    int batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 0;
    GradientMode gradient_mode = GradientMode::ParameterShift;
    double fd_step = 1e-4;
    bool shuffle = true;
    // Batch-parallel workers. Results do not depend on this value.
    int threads = 1;
    // When false every epoch reports 0 seconds, so metrics files from
    // identical runs are byte-identical.
    bool record_wall_time = true;

    void validate() const;
};

std::string to_string(OptimizerKind k);
std::string to_string(GradientMode m);
OptimizerKind parse_optimizer(std::string_view s);
GradientMode parse_gradient_mode(std::string_view s);

// Probabilities are clamped from below before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

double cross_entropy(std::span<const double> probs, int label);

// Argmax with ties resolved toward the lower class index.
int predict(std::span<const double> probs);

struct GradientOptions {
    GradientMode mode = GradientMode::ParameterShift;
    double fd_step = 1e-4;
    int threads = 1;
};

struct BatchGradient {
    std::vector<double> gradient;  // mean over the batch
    double loss = 0.0;             // mean cross-entropy at the given params
};

// d(mean cross-entropy)/d(params). In ParameterShift mode rotation
// parameters use exact shift rules (two-term for RY/RZ, four-term for
// controlled RY) on the feature vector, chained through the head in closed
// form; head parameters are closed form. FiniteDifference mode is a central
// difference of the loss for every parameter.
BatchGradient gradient(const model::Model& model, const model::ParamVector& params, std::span<const Sample> batch,
                       const GradientOptions& options = {});

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<double>& params, std::span<const double> grad) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::size_t num_params);

class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {}

    int classes() const { return classes_; }
    std::uint64_t at(int truth, int predicted) const { return counts_[index(truth, predicted)]; }
    void add(int truth, int predicted, std::uint64_t count = 1) { counts_[index(truth, predicted)] += count; }

    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(int truth) const;
    double accuracy() const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t index(int truth, int predicted) const;

    int classes_ = 0;
    std::vector<std::uint64_t> counts_;
};

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;  // always confusion.accuracy()
    ConfusionMatrix confusion;
};

Evaluation evaluate(const model::Model& model, const model::ParamVector& params, std::span<const Sample> data,
                    int threads = 1);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    double seconds = 0.0;
};

struct RunMetrics {
    std::vector<EpochMetrics> epochs;
    int best_epoch = 0;
    // Test-set confusion of the best epoch (the returned parameters).
    ConfusionMatrix confusion;
    ConfusionMatrix final_confusion;
};

struct FitResult {
    model::ParamVector best_params;  // highest test accuracy, earliest on ties
    model::ParamVector final_params;
    RunMetrics metrics;
};

// Thrown when a loss turns non-finite. Carries the epochs completed so far.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, RunMetrics partial, int epoch, int step)
        : std::runtime_error(what), partial_(std::move(partial)), epoch_(epoch), step_(step) {}

    const RunMetrics& partial() const { return partial_; }
    int epoch() const { return epoch_; }
    int step() const { return step_; }

private:
    RunMetrics partial_;
    int epoch_;
    int step_;
};

using EpochCallback = std::function<void(const EpochMetrics&, const model::ParamVector& current)>;

FitResult fit(const model::ModelConfig& config, std::span<const Sample> train_set, std::span<const Sample> test_set,
              const TrainConfig& train_config, const EpochCallback& on_epoch = {});

}  // namespace fqp::train
