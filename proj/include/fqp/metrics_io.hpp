// Plot-ready outputs of a training run.
#pragma once

#include <iosfwd>
#include <span>

#include "fqp/train.hpp"
#include "json.hpp"

namespace fqp::train {

// `epoch,train_loss,train_acc,test_loss,test_acc,seconds`, one row per epoch.
// Losses and accuracies use %.17g; seconds use %.3f.
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics);

// Header `true\pred,0,1,...`, then one row per true class.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& confusion);

// Per-epoch mean of several runs with the same epoch count (e.g. one per
// seed). Throws std::invalid_argument on mismatched lengths.
RunMetrics mean_over_runs(std::span<const RunMetrics> runs);

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const ConfusionMatrix& confusion);
nlohmann::json to_json(const RunMetrics& metrics);

}  // namespace fqp::train
