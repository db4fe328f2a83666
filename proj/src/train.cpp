#include "fqp/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "fqp/random.hpp"

namespace fqp::train {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Callers write
// results into per-index slots, so the outcome is independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(count, 1))));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_lock);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

struct ShiftTerm {
    double shift;
    double coefficient;
};

// Exact derivative of an expectation value under a rotation angle, as a
// combination of evaluations at shifted angles. RY/RZ generators have
// eigenvalues +-1/2 (two terms). A controlled RY adds a zero eigenvalue, so
// its expectation carries both half and full frequencies and needs four.
std::span<const ShiftTerm> shift_rule(qsim::GateKind kind) {
    constexpr double kHalfPi = std::numbers::pi / 2;
    static constexpr ShiftTerm two_term[] = {{kHalfPi, 0.5}, {-kHalfPi, -0.5}};
    static const double d_plus = (std::numbers::sqrt2 + 1) / (4 * std::numbers::sqrt2);
    static const double d_minus = (std::numbers::sqrt2 - 1) / (4 * std::numbers::sqrt2);
    static const ShiftTerm four_term[] = {
        {kHalfPi, d_plus}, {-kHalfPi, -d_plus}, {3 * kHalfPi, -d_minus}, {-3 * kHalfPi, d_minus}};
    if (kind == qsim::GateKind::CRY) return four_term;
    return two_term;
}

double sample_loss(const model::Model& model, std::span<const double> params, const Sample& sample,
                   qsim::StateVector& scratch) {
    scratch = model.initial_state(sample.image);
    model.run(scratch, params, 0, model.gates().size());
    const auto probs = model::softmax(model.logits(params, model.read_features(scratch)));
    return cross_entropy(probs, sample.label);
}

// Parameter-shift gradient of one sample's loss, accumulated into `grad`.
double shift_gradient(const model::Model& model, std::span<const double> params, const Sample& sample,
                      std::span<double> grad) {
    const auto& cfg = model.config();
    const auto classes = static_cast<std::size_t>(cfg.num_classes);
    const auto dim = static_cast<std::size_t>(cfg.feature_dim());
    const auto pqc = static_cast<std::size_t>(model.counts().pqc);
    const auto gates = model.gates();

    qsim::StateVector prefix = model.initial_state(sample.image);
    qsim::StateVector scratch = prefix;
    model.run(scratch, params, 0, gates.size());
    const auto features = model.read_features(scratch);
    const auto probs = model::softmax(model.logits(params, features));
    const double loss = cross_entropy(probs, sample.label);

    // dL/dz = p - onehot for softmax + cross-entropy.
    std::vector<double> dz(probs);
    dz[static_cast<std::size_t>(sample.label)] -= 1.0;

    const auto head = params.subspan(pqc);
    std::vector<double> dfeatures(dim, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < dim; ++k) {
            grad[pqc + c * dim + k] += dz[c] * features[k];
            dfeatures[k] += head[c * dim + k] * dz[c];
        }
        if (cfg.head.bias) grad[pqc + classes * dim + c] += dz[c];
    }

    for (std::size_t g = 0; g < gates.size(); ++g) {
        const auto& pg = gates[g];
        if (pg.param >= 0) {
            const auto p = static_cast<std::size_t>(pg.param);
            double derivative = 0.0;
            for (const auto& term : shift_rule(pg.gate.kind)) {
                std::copy(prefix.amplitudes().begin(), prefix.amplitudes().end(), scratch.amplitudes().begin());
                qsim::apply_gate(scratch, pg.gate, params[p] + term.shift);
                model.run(scratch, params, g + 1, gates.size());
                const auto shifted = model.read_features(scratch);
                double projected = 0.0;
                for (std::size_t k = 0; k < dim; ++k) projected += dfeatures[k] * shifted[k];
                derivative += term.coefficient * projected;
            }
            grad[p] += derivative;
        }
        model.run(prefix, params, g, g + 1);
    }
    return loss;
}

double finite_difference_gradient(const model::Model& model, std::span<const double> params, const Sample& sample,
                                  double step, std::span<double> grad) {
    std::vector<double> probe(params.begin(), params.end());
    qsim::StateVector scratch = model.initial_state(sample.image);
    const double loss = sample_loss(model, probe, sample, scratch);
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double original = probe[i];
        probe[i] = original + step;
        const double up = sample_loss(model, probe, sample, scratch);
        probe[i] = original - step;
        const double down = sample_loss(model, probe, sample, scratch);
        probe[i] = original;
        grad[i] += (up - down) / (2 * step);
    }
    return loss;
}

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(std::vector<double>& params, std::span<const double> grad) override {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    }

private:
    double lr_;
};

class Adam final : public Optimizer {
public:
    Adam(const OptimizerConfig& c, std::size_t n) : cfg_(c), m_(n, 0.0), v_(n, 0.0) {}
    void step(std::vector<double>& params, std::span<const double> grad) override {
        ++t_;
        const double correction1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double correction2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double m_hat = m_[i] / correction1;
            const double v_hat = v_[i] / correction2;
            params[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
    if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (gradient_mode == GradientMode::FiniteDifference && !(fd_step > 0.0)) {
        throw std::invalid_argument("finite-difference step must be > 0");
    }
    if (optimizer.kind == OptimizerKind::Adam) {
        if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
            throw std::invalid_argument("Adam betas must lie in [0, 1)");
        }
        if (!(optimizer.epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be > 0");
    }
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

std::string to_string(GradientMode m) {
    return m == GradientMode::ParameterShift ? "parameter-shift" : "finite-difference";
}

OptimizerKind parse_optimizer(std::string_view s) {
    const auto v = lower(s);
    if (v == "sgd") return OptimizerKind::SGD;
    if (v == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

GradientMode parse_gradient_mode(std::string_view s) {
    const auto v = lower(s);
    if (v == "parameter-shift" || v == "shift") return GradientMode::ParameterShift;
    if (v == "finite-difference" || v == "fd") return GradientMode::FiniteDifference;
    throw std::invalid_argument("unknown gradient mode '" + std::string(s) + "'");
}

double cross_entropy(std::span<const double> probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
        throw std::out_of_range("label " + std::to_string(label) + " out of range for " + std::to_string(probs.size()) +
                                " classes");
    }
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

int predict(std::span<const double> probs) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

BatchGradient gradient(const model::Model& model, const model::ParamVector& params, std::span<const Sample> batch,
                       const GradientOptions& options) {
    if (batch.empty()) throw std::invalid_argument("gradient of an empty batch");
    model.check_params(params);
    for (const auto& s : batch) {
        model.check_input(s.image);
        if (s.label < 0 || s.label >= model.config().num_classes) throw std::out_of_range("sample label out of range");
    }
    const std::size_t n = params.size();
    std::vector<std::vector<double>> per_sample(batch.size(), std::vector<double>(n, 0.0));
    std::vector<double> losses(batch.size(), 0.0);

    parallel_for(batch.size(), options.threads, [&](std::size_t i) {
        if (options.mode == GradientMode::ParameterShift) {
            losses[i] = shift_gradient(model, params.values, batch[i], per_sample[i]);
        } else {
            losses[i] = finite_difference_gradient(model, params.values, batch[i], options.fd_step, per_sample[i]);
        }
    });

    BatchGradient result;
    result.gradient.assign(n, 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t p = 0; p < n; ++p) result.gradient[p] += per_sample[i][p];
        result.loss += losses[i];
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto& g : result.gradient) g *= scale;
    result.loss *= scale;
    return result;
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::size_t num_params) {
    if (config.kind == OptimizerKind::SGD) return std::make_unique<Sgd>(config.learning_rate);
    return std::make_unique<Adam>(config, num_params);
}

std::size_t ConfusionMatrix::index(int truth, int predicted) const {
    if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
        throw std::out_of_range("confusion matrix index out of range");
    }
    return static_cast<std::size_t>(truth) * classes_ + predicted;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (int c = 0; c < classes_; ++c) t += at(c, c);
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
    std::uint64_t s = 0;
    for (int p = 0; p < classes_; ++p) s += at(truth, p);
    return s;
}

double ConfusionMatrix::accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

Evaluation evaluate(const model::Model& model, const model::ParamVector& params, std::span<const Sample> data,
                    int threads) {
    model.check_params(params);
    std::vector<double> losses(data.size());
    std::vector<int> predictions(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const auto probs = model.forward(params, data[i].image);
        losses[i] = cross_entropy(probs, data[i].label);
        predictions[i] = predict(probs);
    });
    Evaluation eval;
    eval.confusion = ConfusionMatrix(model.config().num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        eval.loss += losses[i];
        eval.confusion.add(data[i].label, predictions[i]);
    }
    if (!data.empty()) eval.loss /= static_cast<double>(data.size());
    eval.accuracy = eval.confusion.accuracy();
    return eval;
}

FitResult fit(const model::ModelConfig& config, std::span<const Sample> train_set, std::span<const Sample> test_set,
              const TrainConfig& train_config, const EpochCallback& on_epoch) {
    train_config.validate();
    if (train_set.empty() || test_set.empty()) throw std::invalid_argument("fit needs at least one sample per split");
    const model::Model model(config);

    FitResult result;
    auto params = model::init_params(config, train_config.seed);
    auto optimizer = make_optimizer(train_config.optimizer, params.size());
    Rng shuffler(train_config.seed ^ 0x9E3779B97F4A7C15ull);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const GradientOptions options{train_config.gradient_mode, train_config.fd_step, train_config.threads};
    const auto batch_size = static_cast<std::size_t>(train_config.batch_size);

    double best_accuracy = -1.0;
    std::vector<Sample> batch;
    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        if (train_config.shuffle) shuffler.shuffle(std::span(order));

        int step = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size, ++step) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) batch.push_back(train_set[order[i]]);
            const auto grad = gradient(model, params, batch, options);
            const bool finite = std::isfinite(grad.loss) &&
                                std::all_of(grad.gradient.begin(), grad.gradient.end(), [](double g) { return std::isfinite(g); });
            if (!finite) {
                throw DivergenceError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", step " +
                                          std::to_string(step),
                                      result.metrics, epoch, step);
            }
            optimizer->step(params.values, grad.gradient);
            if (!std::all_of(params.values.begin(), params.values.end(), [](double v) { return std::isfinite(v); })) {
                throw DivergenceError("parameters became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                          std::to_string(step),
                                      result.metrics, epoch, step);
            }
        }

        const auto train_eval = evaluate(model, params, train_set, train_config.threads);
        const auto test_eval = evaluate(model, params, test_set, train_config.threads);
        if (!std::isfinite(train_eval.loss) || !std::isfinite(test_eval.loss)) {
            throw DivergenceError("non-finite evaluation loss at epoch " + std::to_string(epoch), result.metrics, epoch,
                                  step);
        }
        EpochMetrics row;
        row.epoch = epoch;
        row.train_loss = train_eval.loss;
        row.train_accuracy = train_eval.accuracy;
        row.test_loss = test_eval.loss;
        row.test_accuracy = test_eval.accuracy;
        if (train_config.record_wall_time) row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.metrics.epochs.push_back(row);
        result.metrics.final_confusion = test_eval.confusion;

        if (test_eval.accuracy > best_accuracy) {
            best_accuracy = test_eval.accuracy;
            result.best_params = params;
            result.metrics.best_epoch = epoch;
            result.metrics.confusion = test_eval.confusion;
        }
        if (on_epoch) on_epoch(row, params);
    }
    result.final_params = params;
    return result;
}

}  // namespace fqp::train
