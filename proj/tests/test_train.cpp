#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fqp/metrics_io.hpp"
#include "fqp/model.hpp"
#include "fqp/train.hpp"
#include "support.hpp"

using namespace fqp;
using namespace fqp::testing;
using model::ModelConfig;

namespace {

ModelConfig toy_config(int n, int memory, int classes, bool z_head = false) {
    ModelConfig c;
    c.n = n;
    c.memory_qubits = memory;
    c.num_classes = classes;
    if (z_head) c.head = {model::FeatureMode::PerQubitZ, true};
    return c;
}

model::ParamVector random_params(const model::Model& m, Rng& rng) {
    model::ParamVector p;
    for (std::size_t i = 0; i < m.num_params(); ++i) {
        const bool rotation = m.describe(i).role == model::ParamRole::CellRotation;
        p.values.push_back(rotation ? rng.uniform(-kPi, kPi) : rng.uniform(-1.5, 1.5));
    }
    return p;
}

double loss_of(const model::Model& m, const std::vector<double>& values, const train::Sample& s) {
    return train::cross_entropy(m.forward(model::ParamVector{values}, s.image), s.label);
}

// Central differences computed here from forward() alone.
std::vector<double> oracle_gradient(const model::Model& m, const model::ParamVector& params, const train::Sample& s,
                                    double h) {
    std::vector<double> g(params.size());
    auto work = params.values;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double keep = work[i];
        work[i] = keep + h;
        const double up = loss_of(m, work, s);
        work[i] = keep - h;
        const double down = loss_of(m, work, s);
        work[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

void check_gradient_close(const std::vector<double>& got, const std::vector<double>& reference) {
    REQUIRE(got.size() == reference.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CAPTURE(i);
        if (std::abs(reference[i]) < 1e-3) {
            CHECK(std::abs(got[i] - reference[i]) < 1e-6);
        } else {
            CHECK(std::abs(got[i] - reference[i]) / std::abs(reference[i]) < 1e-4);
        }
    }
}

std::vector<train::Sample> black_white(int n, int count) {
    std::vector<train::Sample> out;
    const std::size_t len = std::size_t{1} << (2 * n);
    for (int i = 0; i < count; ++i) {
        const bool white = i % 2 == 1;
        out.push_back({frqi::AngleImage(n, std::vector<double>(len, white ? frqi::kHalfPi : 0.0)), white ? 1 : 0});
    }
    return out;
}

}  // namespace

TEST_SUITE("train") {
    TEST_CASE("cross-entropy values") {
        const std::vector<double> certain = {0.0, 1.0, 0.0};
        CHECK(train::cross_entropy(certain, 1) == 0.0);
        const std::vector<double> uniform(10, 0.1);
        CHECK(train::cross_entropy(uniform, 3) == doctest::Approx(2.302585092994046).epsilon(1e-14));
        const std::vector<double> half = {0.5, 0.5};
        CHECK(train::cross_entropy(half, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-14));
        const std::vector<double> wrong = {1.0, 0.0};
        CHECK(train::cross_entropy(wrong, 1) == doctest::Approx(-std::log(1e-12)));
        CHECK_THROWS_AS(train::cross_entropy(half, 2), std::out_of_range);
        CHECK_THROWS_AS(train::cross_entropy(half, -1), std::out_of_range);
    }

    TEST_CASE("cross-entropy is nonnegative and zero only at certainty") {
        Rng rng(131);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> logits(4);
            for (auto& l : logits) l = rng.uniform(-3, 3);
            const auto p = model::softmax(logits);
            const int label = static_cast<int>(rng.below(4));
            const double loss = train::cross_entropy(p, label);
            CHECK(loss >= 0.0);
            CHECK(loss > 0.0);
        }
    }

    TEST_CASE("predict breaks ties toward the lower class") {
        const std::vector<double> tie = {0.25, 0.25, 0.5, 0.5};
        CHECK(train::predict(tie) == 2);
        const std::vector<double> flat(5, 0.2);
        CHECK(train::predict(flat) == 0);
    }

    TEST_CASE("config validation") {
        train::TrainConfig c;
        CHECK_NOTHROW(c.validate());
        c.optimizer.learning_rate = 0.0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.batch_size = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = {};
        c.epochs = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        CHECK(train::parse_optimizer("sgd") == train::OptimizerKind::SGD);
        CHECK(train::parse_gradient_mode("fd") == train::GradientMode::FiniteDifference);
    }

    TEST_CASE("head bias gradient at a zero head is softmax minus one-hot") {
        const auto c = toy_config(1, 2, 3, true);
        const model::Model m(c);
        auto params = model::init_params(c, 3);
        Rng rng(137);
        const std::vector<train::Sample> batch = {{random_angles(1, rng), 0}, {random_angles(1, rng), 2},
                                                  {random_angles(1, rng), 2}, {random_angles(1, rng), 1}};
        const auto g = train::gradient(m, params, batch);
        // Labels 0, 2, 2, 1: mean one-hot = (1/4, 1/4, 1/2).
        const double third = 1.0 / 3.0;
        const std::vector<double> expected = {third - 0.25, third - 0.25, third - 0.5};
        const std::size_t bias0 = m.num_params() - 3;
        for (std::size_t k = 0; k < 3; ++k) CHECK(g.gradient[bias0 + k] == doctest::Approx(expected[k]).epsilon(1e-14));
        CHECK(g.loss == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    }

    TEST_CASE("parameter shift agrees with finite differences") {
        Rng rng(139);
        for (int trial = 0; trial < 20; ++trial) {
            auto c = toy_config(1 + trial % 2, 1 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(3)),
                                rng.below(2) == 0);
            c.deep_layers = 1 + static_cast<int>(rng.below(2));
            if (trial % 5 == 3) c.pairing = model::Pairing::TriangularUnordered;
            if (trial % 7 == 6) c.architecture = model::Architecture::SingleCell;
            const model::Model m(c);
            const auto params = random_params(m, rng);
            const train::Sample s{random_angles(c.n, rng), static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_classes)))};
            const std::vector<train::Sample> batch = {s};
            CAPTURE(trial);
            const auto shift = train::gradient(m, params, batch);
            check_gradient_close(shift.gradient, oracle_gradient(m, params, s, 1e-4));
            const auto fd = train::gradient(m, params, batch, {train::GradientMode::FiniteDifference, 1e-4, 1});
            check_gradient_close(shift.gradient, fd.gradient);
        }
    }

    TEST_CASE("duplicated samples leave the mean gradient unchanged") {
        const auto c = toy_config(2, 2, 3);
        const model::Model m(c);
        Rng rng(149);
        const auto params = random_params(m, rng);
        const train::Sample s{random_angles(2, rng), 1};
        const std::vector<train::Sample> one = {s};
        const std::vector<train::Sample> two = {s, s};
        const std::vector<train::Sample> four = {s, s, s, s};
        const auto g1 = train::gradient(m, params, one);
        CHECK(train::gradient(m, params, two).gradient == g1.gradient);
        CHECK(train::gradient(m, params, four).gradient == g1.gradient);
    }

    TEST_CASE("batch gradient does not depend on the thread count") {
        const auto c = toy_config(2, 2, 4);
        const model::Model m(c);
        Rng rng(151);
        const auto params = random_params(m, rng);
        std::vector<train::Sample> batch;
        for (int i = 0; i < 7; ++i) batch.push_back({random_angles(2, rng), i % 4});
        const auto a = train::gradient(m, params, batch, {train::GradientMode::ParameterShift, 1e-4, 1});
        const auto b = train::gradient(m, params, batch, {train::GradientMode::ParameterShift, 1e-4, 3});
        CHECK(a.gradient == b.gradient);
        CHECK(a.loss == b.loss);
    }

    TEST_CASE("gradient errors") {
        const auto c = toy_config(1, 1, 2);
        const model::Model m(c);
        const auto params = model::init_params(c, 0);
        const std::vector<train::Sample> empty;
        CHECK_THROWS_AS(train::gradient(m, params, empty), std::invalid_argument);
        Rng rng(3);
        const std::vector<train::Sample> wrong_size = {{random_angles(2, rng), 0}};
        CHECK_THROWS_AS(train::gradient(m, params, wrong_size), std::invalid_argument);
        const model::ParamVector short_params{{0.0}};
        const std::vector<train::Sample> ok = {{random_angles(1, rng), 0}};
        CHECK_THROWS_AS(train::gradient(m, short_params, ok), std::invalid_argument);
    }

    TEST_CASE("a small SGD step does not increase the sample loss") {
        Rng rng(157);
        for (int trial = 0; trial < 50; ++trial) {
            const auto c = toy_config(1 + trial % 2, 2, 3, trial % 3 == 0);
            const model::Model m(c);
            auto params = random_params(m, rng);
            const train::Sample s{random_angles(c.n, rng), trial % 3};
            const std::vector<train::Sample> batch = {s};
            const double before = loss_of(m, params.values, s);
            const auto g = train::gradient(m, params, batch);
            auto opt = train::make_optimizer({train::OptimizerKind::SGD, 1e-3}, params.size());
            opt->step(params.values, g.gradient);
            CHECK(loss_of(m, params.values, s) <= before + 1e-9);
        }
    }

    TEST_CASE("optimizer updates") {
        std::vector<double> p = {1.0, -2.0, 0.5};
        const std::vector<double> g = {0.5, -4.0, 0.0};
        auto sgd = train::make_optimizer({train::OptimizerKind::SGD, 0.1}, 3);
        sgd->step(p, g);
        CHECK(p == std::vector<double>{1.0 - 0.05, -2.0 + 0.4, 0.5});

        std::vector<double> q = {1.0, -2.0, 0.5};
        auto adam = train::make_optimizer({}, 3);
        adam->step(q, g);
        // First Adam step: bias-corrected m = g, v = g^2, so each moves by lr * g / (|g| + eps).
        CHECK(q[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
        CHECK(q[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
        CHECK(q[2] == 0.5);
        adam->step(q, g);
        CHECK(q[0] == doctest::Approx(1.0 - 2 * 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    }

    TEST_CASE("confusion matrix bookkeeping") {
        train::ConfusionMatrix cm(3);
        for (int i = 0; i < 10; ++i) cm.add(i % 3, i % 3);
        CHECK(cm.accuracy() == 1.0);
        CHECK(cm.trace() == 10);
        cm.add(0, 2, 5);
        CHECK(cm.total() == 15);
        CHECK(cm.row_sum(0) == 9);
        CHECK(cm.accuracy() == static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
        CHECK_THROWS(cm.add(3, 0));
    }

    TEST_CASE("uniform model predicts class 0 everywhere") {
        const auto c = toy_config(1, 2, 2);
        const model::Model m(c);
        const model::ParamVector zeros{std::vector<double>(m.num_params(), 0.0)};
        const auto data = black_white(1, 10);
        const auto eval = train::evaluate(m, zeros, data);
        CHECK(eval.accuracy == 0.5);
        CHECK(eval.confusion.at(0, 0) == 5);
        CHECK(eval.confusion.at(1, 0) == 5);
        CHECK(eval.confusion.row_sum(1) == 5);
        CHECK(eval.loss == doctest::Approx(std::log(2.0)));
    }

    TEST_CASE("two orthogonal 2x2 images are learned in 50 steps") {
        const auto c = toy_config(1, 2, 2);
        const std::vector<train::Sample> data = {
            {frqi::AngleImage(1, {0, 0, 0, 0}), 0},
            {frqi::AngleImage(1, std::vector<double>(4, frqi::kHalfPi)), 1},
        };
        train::TrainConfig tc;
        tc.optimizer.learning_rate = 0.1;
        tc.batch_size = 2;
        tc.epochs = 50;
        tc.seed = 1;
        const auto result = train::fit(c, data, data, tc);
        const model::Model m(c);
        for (const auto& s : data) CHECK(m.forward(result.final_params, s.image)[static_cast<std::size_t>(s.label)] > 0.9);
    }

    TEST_CASE("black versus white reaches full accuracy and replays exactly") {
        const auto c = toy_config(2, 4, 2);
        const auto data = black_white(2, 20);
        train::TrainConfig tc;
        tc.epochs = 20;
        tc.seed = 9;
        tc.optimizer.learning_rate = 0.1;
        tc.batch_size = 4;
        const auto a = train::fit(c, data, data, tc);
        CHECK(a.metrics.epochs.back().test_accuracy == 1.0);
        const auto b = train::fit(c, data, data, tc);
        CHECK(a.final_params == b.final_params);
        CHECK(a.best_params == b.best_params);
        REQUIRE(a.metrics.epochs.size() == b.metrics.epochs.size());
        for (std::size_t e = 0; e < a.metrics.epochs.size(); ++e) {
            CHECK(a.metrics.epochs[e].train_loss == b.metrics.epochs[e].train_loss);
            CHECK(a.metrics.epochs[e].test_accuracy == b.metrics.epochs[e].test_accuracy);
        }
        CHECK(a.metrics.confusion == b.metrics.confusion);
    }

    TEST_CASE("fit returns the best epoch and stays consistent with its metrics") {
        const auto c = toy_config(1, 2, 2);
        const auto data = black_white(1, 8);
        train::TrainConfig tc;
        tc.epochs = 4;
        tc.batch_size = 3;
        std::vector<train::EpochMetrics> seen;
        const auto r = train::fit(c, data, data, tc, [&](const auto& e, const auto&) { seen.push_back(e); });
        CHECK(seen.size() == 4);
        const model::Model m(c);
        const auto& best = r.metrics.epochs[static_cast<std::size_t>(r.metrics.best_epoch - 1)];
        CHECK(train::evaluate(m, r.best_params, data).accuracy == best.test_accuracy);
        CHECK(train::evaluate(m, r.final_params, data).accuracy == r.metrics.epochs.back().test_accuracy);
        CHECK(r.metrics.confusion.accuracy() == best.test_accuracy);
        for (const auto& e : r.metrics.epochs) CHECK(e.test_accuracy <= best.test_accuracy);
    }

    TEST_CASE("divergence aborts with the metrics gathered so far") {
        const auto c = toy_config(1, 1, 2, true);
        const auto data = black_white(1, 4);
        train::TrainConfig tc;
        tc.optimizer = {train::OptimizerKind::SGD, 1e308};
        tc.epochs = 3;
        tc.batch_size = 4;
        try {
            (void)train::fit(c, data, data, tc);
            FAIL("expected divergence");
        } catch (const train::DivergenceError& e) {
            CHECK(e.epoch() >= 1);
            CHECK(e.partial().epochs.size() == static_cast<std::size_t>(e.epoch() - 1));
        }
    }

    TEST_CASE("metrics CSV and aggregation") {
        train::RunMetrics a, b;
        a.epochs = {{1, 1.0, 0.5, 1.5, 0.25, 2.0}};
        b.epochs = {{1, 3.0, 0.7, 2.5, 0.75, 4.0}};
        a.confusion = a.final_confusion = train::ConfusionMatrix(2);
        b.confusion = b.final_confusion = train::ConfusionMatrix(2);
        a.confusion.add(0, 0, 3);
        b.confusion.add(1, 0, 1);
        const std::vector<train::RunMetrics> runs = {a, b};
        const auto mean = train::mean_over_runs(runs);
        CHECK(mean.epochs[0].train_loss == 2.0);
        CHECK(mean.epochs[0].test_accuracy == 0.5);
        CHECK(mean.confusion.at(0, 0) == 3);
        CHECK(mean.confusion.at(1, 0) == 1);

        std::ostringstream csv;
        train::write_metrics_csv(csv, a);
        CHECK(csv.str() == "epoch,train_loss,train_acc,test_loss,test_acc,seconds\n1,1,0.5,1.5,0.25,2.000\n");
        std::ostringstream grid;
        train::write_confusion_csv(grid, a.confusion);
        CHECK(grid.str() == "true\\pred,0,1\n0,3,0\n1,0,0\n");

        b.epochs.push_back(b.epochs[0]);
        const std::vector<train::RunMetrics> mismatched = {a, b};
        CHECK_THROWS_AS(train::mean_over_runs(mismatched), std::invalid_argument);
    }
}
