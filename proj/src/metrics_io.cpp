#include "fqp/metrics_io.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace fqp::train {

using nlohmann::json;

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
    out << "epoch,train_loss,train_acc,test_loss,test_acc,seconds\n";
    char line[256];
    for (const auto& e : metrics.epochs) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.train_loss, e.train_accuracy,
                      e.test_loss, e.test_accuracy, e.seconds);
        out << line;
    }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& confusion) {
    out << "true\\pred";
    for (int p = 0; p < confusion.classes(); ++p) out << ',' << p;
    out << '\n';
    for (int t = 0; t < confusion.classes(); ++t) {
        out << t;
        for (int p = 0; p < confusion.classes(); ++p) out << ',' << confusion.at(t, p);
        out << '\n';
    }
}

RunMetrics mean_over_runs(std::span<const RunMetrics> runs) {
    if (runs.empty()) throw std::invalid_argument("no runs to aggregate");
    RunMetrics mean;
    const auto epochs = runs.front().epochs.size();
    const int classes = runs.front().confusion.classes();
    mean.epochs.resize(epochs);
    mean.confusion = ConfusionMatrix(classes);
    mean.final_confusion = ConfusionMatrix(classes);
    for (const auto& run : runs) {
        if (run.epochs.size() != epochs || run.confusion.classes() != classes) {
            throw std::invalid_argument("runs differ in epoch count or class count");
        }
        for (std::size_t i = 0; i < epochs; ++i) {
            auto& m = mean.epochs[i];
            const auto& e = run.epochs[i];
            m.epoch = e.epoch;
            m.train_loss += e.train_loss;
            m.train_accuracy += e.train_accuracy;
            m.test_loss += e.test_loss;
            m.test_accuracy += e.test_accuracy;
            m.seconds += e.seconds;
        }
        // Summed counts; their accuracy is the pooled accuracy.
        for (int t = 0; t < classes; ++t) {
            for (int p = 0; p < classes; ++p) {
                mean.confusion.add(t, p, run.confusion.at(t, p));
                mean.final_confusion.add(t, p, run.final_confusion.at(t, p));
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(runs.size());
    for (auto& m : mean.epochs) {
        m.train_loss *= scale;
        m.train_accuracy *= scale;
        m.test_loss *= scale;
        m.test_accuracy *= scale;
        m.seconds *= scale;
    }
    return mean;
}

json to_json(const TrainConfig& c) {
    return json{
        {"optimizer",
         {{"kind", to_string(c.optimizer.kind)},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon}}},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seed", c.seed},
        {"gradient_mode", to_string(c.gradient_mode)},
        {"fd_step", c.fd_step},
        {"shuffle", c.shuffle},
        {"record_wall_time", c.record_wall_time},
        {"threads", c.threads},
    };
}

json to_json(const ConfusionMatrix& confusion) {
    json rows = json::array();
    for (int t = 0; t < confusion.classes(); ++t) {
        json row = json::array();
        for (int p = 0; p < confusion.classes(); ++p) row.push_back(confusion.at(t, p));
        rows.push_back(row);
    }
    return rows;
}

json to_json(const RunMetrics& metrics) {
    json epochs = json::array();
    for (const auto& e : metrics.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_acc", e.train_accuracy},
                          {"test_loss", e.test_loss},
                          {"test_acc", e.test_accuracy},
                          {"seconds", e.seconds}});
    }
    return json{{"epochs", epochs},
                {"best_epoch", metrics.best_epoch},
                {"best_confusion", to_json(metrics.confusion)},
                {"final_confusion", to_json(metrics.final_confusion)}};
}

}  // namespace fqp::train
