#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fqp/checkpoint.hpp"
#include "fqp/data.hpp"
#include "fqp/frqi.hpp"
#include "fqp/metrics_io.hpp"
#include "fqp/model.hpp"
#include "fqp/qsim.hpp"
#include "fqp/train.hpp"
#include "json.hpp"

#ifndef FQP_GIT_DESCRIBE
#define FQP_GIT_DESCRIBE "unknown"
#endif
#ifndef FQP_DATA_DIR
#define FQP_DATA_DIR ""
#endif

namespace fqp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Tracks every file a command writes so the manifest can list them.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const { return dir_; }

    fs::path write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        const auto path = dir_ / name;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
        body(out);
        out.close();
        if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
        remember(name);
        return path;
    }

    fs::path write_json(const std::string& name, const json& doc) {
        return write(name, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
    }

    void remember(const std::string& name) {
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
    }

    json inventory() const {
        json files = json::array();
        for (const auto& name : names_) {
            const auto path = dir_ / name;
            files.push_back({{"path", name}, {"bytes", fs::exists(path) ? fs::file_size(path) : 0}});
        }
        return files;
    }

private:
    fs::path dir_;
    std::vector<std::string> names_;
};

struct Invocation {
    std::string command;
    std::vector<std::string> argv;
    std::string started_at;
};

void write_manifest(Outputs& outputs, const Invocation& inv, const json& config, std::uint64_t seed,
                    const std::string& status = "ok") {
    json manifest = {
        {"command", inv.command},
        {"argv", inv.argv},
        {"config", config},
        {"seed", seed},
        {"git_describe", FQP_GIT_DESCRIBE},
        {"status", status},
        {"timestamps", {{"started_at", inv.started_at}, {"finished_at", utc_now()}}},
        {"outputs", outputs.inventory()},
    };
    outputs.write_json("manifest.json", manifest);
}

std::string resolve_data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MNIST_DIR"); env != nullptr && *env != '\0') return env;
    return FQP_DATA_DIR;
}

// ---------------------------------------------------------------- images

struct ImageInput {
    std::string path;
    int mnist_index = -1;
    std::string split = "train";
    std::string data_dir;
    int n = 0;
    bool pad = false;
    std::string filter = "bilinear";
};

void add_image_options(CLI::App* cmd, ImageInput& in) {
    cmd->add_option("image", in.path, "PGM image (P2 or P5)");
    cmd->add_option("--mnist-index", in.mnist_index, "Use this MNIST sample instead of an image file")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--split", in.split, "MNIST split for --mnist-index")->check(CLI::IsMember({"train", "test"}));
    cmd->add_option("--data-dir", in.data_dir, "MNIST directory (default: $MNIST_DIR, then the bundled subset)");
    cmd->add_option("--n", in.n, "Side exponent of the encoded image; resizes when it differs")
        ->check(CLI::Range(1, 11));
    cmd->add_flag("--pad", in.pad, "Zero-pad a non power-of-two image to its square envelope");
    cmd->add_option("--resize-filter", in.filter, "bilinear or area")->check(CLI::IsMember({"bilinear", "area"}));
}

struct PreparedImage {
    frqi::PixelImage pixels;  // 2^n x 2^n
    json source;
};

PreparedImage prepare_image(const ImageInput& in) {
    const bool from_file = !in.path.empty();
    if (from_file == (in.mnist_index >= 0)) throw UsageError("give exactly one of an image path or --mnist-index");

    frqi::PixelImage img;
    json source;
    if (from_file) {
        img = frqi::read_pgm_file(in.path);
        source = {{"kind", "pgm"}, {"path", in.path}, {"width", img.width}, {"height", img.height}};
        if (!img.is_envelope()) {
            if (!in.pad) {
                throw UsageError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 ", not a square power-of-two envelope; pass --pad to zero-pad it");
            }
            img = frqi::pad_to_envelope(img);
            source["padded_to"] = img.width;
        }
    } else {
        const auto dir = resolve_data_dir(in.data_dir);
        const auto ds = data::load_mnist(dir, data::parse_split(in.split));
        if (static_cast<std::size_t>(in.mnist_index) >= ds.size()) {
            throw UsageError("--mnist-index " + std::to_string(in.mnist_index) + " is out of range (split has " +
                             std::to_string(ds.size()) + " samples)");
        }
        img = ds.images[static_cast<std::size_t>(in.mnist_index)];
        source = {{"kind", "mnist"},
                  {"data_dir", dir},
                  {"split", in.split},
                  {"index", in.mnist_index},
                  {"label", ds.labels[static_cast<std::size_t>(in.mnist_index)]}};
    }

    int n = in.n;
    if (n == 0) n = img.is_envelope() ? img.side_exponent() : 3;
    const int side = 1 << n;
    if (img.width != side || img.height != side) {
        const auto filter = data::parse_resize_filter(in.filter);
        img = data::resize(img, side, filter);
        source["resized_to"] = side;
        source["resize_filter"] = in.filter;
    }
    return {std::move(img), std::move(source)};
}

json pixel_rows(const frqi::PixelImage& img) {
    json rows = json::array();
    for (int r = 0; r < img.height; ++r) {
        json row = json::array();
        for (int c = 0; c < img.width; ++c) row.push_back(img.at(r, c));
        rows.push_back(row);
    }
    return rows;
}

int max_level_difference(const frqi::PixelImage& a, const frqi::PixelImage& b) {
    int worst = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    return worst;
}

// Panels left to right with a one-pixel mid-grey separator.
frqi::PixelImage side_by_side(std::initializer_list<const frqi::PixelImage*> panels) {
    int width = -1, height = 0;
    for (const auto* p : panels) {
        width += p->width + 1;
        height = std::max(height, p->height);
    }
    frqi::PixelImage out(width, height, std::uint8_t{128});
    int left = 0;
    for (const auto* p : panels) {
        for (int r = 0; r < p->height; ++r) {
            for (int c = 0; c < p->width; ++c) out.at(r, left + c) = p->at(r, c);
        }
        left += p->width + 1;
    }
    return out;
}

// ---------------------------------------------------------------- encode

struct EncodeOptions {
    ImageInput image;
    std::string out_dir = "encode-out";
    std::string method = "direct";
};

void cmd_encode(const EncodeOptions& o, const Invocation& inv, std::ostream& out) {
    const auto prepared = prepare_image(o.image);
    const auto angles = frqi::scale_to_angles(prepared.pixels);
    const auto state = o.method == "circuit" ? frqi::encode_circuit(angles) : frqi::encode_direct(angles);
    const auto retrieved_angles = frqi::retrieve_analytic(state, angles.n);
    const auto retrieved = frqi::angles_to_pixels(retrieved_angles);

    double angle_error = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        angle_error = std::max(angle_error, std::abs(angles.angles[i] - retrieved_angles.angles[i]));
    }

    Outputs outputs(o.out_dir);
    outputs.write("amplitudes.csv", [&](std::ostream& f) { qsim::write_amplitudes_csv(f, state); });
    outputs.write("angles.csv", [&](std::ostream& f) { frqi::write_angles_csv(f, angles); });
    outputs.write("input.pgm", [&](std::ostream& f) { frqi::write_pgm(f, prepared.pixels); });
    outputs.write("retrieved.pgm", [&](std::ostream& f) { frqi::write_pgm(f, retrieved); });
    outputs.write("comparison.pgm",
                  [&](std::ostream& f) { frqi::write_pgm(f, side_by_side({&prepared.pixels, &retrieved})); });

    const json config = {{"source", prepared.source}, {"n", angles.n}, {"method", o.method}};
    const int level_diff = max_level_difference(prepared.pixels, retrieved);
    outputs.write_json("report.json", {{"source", prepared.source},
                                       {"n", angles.n},
                                       {"qubits", frqi::qubit_budget(angles.n)},
                                       {"method", o.method},
                                       {"amplitude_rows", state.dimension()},
                                       {"max_level_difference", level_diff},
                                       {"max_angle_error", angle_error},
                                       {"original", pixel_rows(prepared.pixels)},
                                       {"retrieved", pixel_rows(retrieved)}});
    write_manifest(outputs, inv, config, 0);

    out << "encoded " << angles.side() << "x" << angles.side() << " image on " << frqi::qubit_budget(angles.n)
        << " qubits (" << state.dimension() << " amplitudes)\n"
        << "max retrieval difference: " << level_diff << " levels\n"
        << "outputs: " << outputs.dir().string() << "\n";
}

// ---------------------------------------------------------------- sample

struct SampleOptions {
    ImageInput image;
    std::string out_dir = "sample-out";
    std::uint64_t shots = 10000;
    std::uint64_t seed = 0;
};

void cmd_sample(const SampleOptions& o, const Invocation& inv, std::ostream& out) {
    const auto prepared = prepare_image(o.image);
    const auto angles = frqi::scale_to_angles(prepared.pixels);
    const auto state = frqi::encode_direct(angles);
    std::vector<int> qubits(static_cast<std::size_t>(frqi::qubit_budget(angles.n)));
    for (std::size_t q = 0; q < qubits.size(); ++q) qubits[q] = static_cast<int>(q);
    const auto counts = qsim::sample(state, qubits, o.shots, o.seed);
    const auto estimate = frqi::retrieve_from_shots(counts, angles.n);
    const auto reconstructed = frqi::angles_to_pixels(estimate.angles);
    const double mae = frqi::mean_absolute_angle_error(estimate.angles, angles);

    Outputs outputs(o.out_dir);
    outputs.write("counts.csv", [&](std::ostream& f) { qsim::write_counts_csv(f, counts); });
    outputs.write("input.pgm", [&](std::ostream& f) { frqi::write_pgm(f, prepared.pixels); });
    outputs.write("retrieved_shots.pgm", [&](std::ostream& f) { frqi::write_pgm(f, reconstructed); });
    outputs.write("comparison.pgm",
                  [&](std::ostream& f) { frqi::write_pgm(f, side_by_side({&prepared.pixels, &reconstructed})); });

    const json config = {{"source", prepared.source}, {"n", angles.n}, {"shots", o.shots}};
    outputs.write_json("report.json", {{"source", prepared.source},
                                       {"n", angles.n},
                                       {"qubits", qubits.size()},
                                       {"shots", o.shots},
                                       {"seed", o.seed},
                                       {"distinct_outcomes", counts.counts.size()},
                                       {"mean_absolute_angle_error", mae},
                                       {"unobserved_positions", estimate.unobserved_positions()},
                                       {"max_level_difference", max_level_difference(prepared.pixels, reconstructed)},
                                       {"original", pixel_rows(prepared.pixels)},
                                       {"retrieved", pixel_rows(reconstructed)}});
    write_manifest(outputs, inv, config, o.seed);

    char line[128];
    std::snprintf(line, sizeof line, "mean absolute angle error: %.6f rad over %llu shots\n", mae,
                  static_cast<unsigned long long>(o.shots));
    out << line << "unobserved positions: " << estimate.unobserved_positions() << "\n"
        << "outputs: " << outputs.dir().string() << "\n";
}

// ---------------------------------------------------------------- data selection

struct DataSelection {
    std::string data_dir;
    int classes = 10;
    int train_per_class = 0;  // 0: whole split
    int test_per_class = 0;
    std::uint64_t seed = 0;
    std::string filter = "bilinear";
    int n = 3;
    std::string train_cache;
    std::string test_cache;
};

json to_json(const DataSelection& d) {
    return {{"data_dir", d.data_dir},       {"classes", d.classes},         {"train_per_class", d.train_per_class},
            {"test_per_class", d.test_per_class}, {"seed", d.seed},           {"resize_filter", d.filter},
            {"n", d.n},                      {"train_cache", d.train_cache}, {"test_cache", d.test_cache}};
}

DataSelection selection_from_json(const json& j) {
    DataSelection d;
    try {
        d.data_dir = j.at("data_dir").get<std::string>();
        d.classes = j.at("classes").get<int>();
        d.train_per_class = j.at("train_per_class").get<int>();
        d.test_per_class = j.at("test_per_class").get<int>();
        d.seed = j.at("seed").get<std::uint64_t>();
        d.filter = j.at("resize_filter").get<std::string>();
        d.n = j.at("n").get<int>();
        d.train_cache = j.value("train_cache", "");
        d.test_cache = j.value("test_cache", "");
    } catch (const json::exception& e) {
        throw model::CheckpointError(std::string("checkpoint data selection is malformed: ") + e.what());
    }
    return d;
}

std::vector<train::Sample> load_split(const DataSelection& d, data::Split split) {
    const auto& cache = split == data::Split::Train ? d.train_cache : d.test_cache;
    if (!cache.empty()) {
        auto samples = data::read_cache(cache);
        for (const auto& s : samples) {
            if (s.image.n != d.n) {
                throw data::DataError("cache '" + cache + "' holds n=" + std::to_string(s.image.n) +
                                      " images, expected n=" + std::to_string(d.n));
            }
            if (s.label >= d.classes) {
                throw data::DataError("cache '" + cache + "' has label " + std::to_string(s.label) + " but only " +
                                      std::to_string(d.classes) + " classes are configured");
            }
        }
        return samples;
    }
    const auto full = data::load_mnist(d.data_dir, split);
    const int per_class = split == data::Split::Train ? d.train_per_class : d.test_per_class;
    const auto selected = per_class > 0
                              ? data::subset(full, per_class, d.seed + (split == data::Split::Test ? 1 : 0), d.classes)
                              : data::select_classes(full, d.classes);
    return data::to_samples(selected, d.n, data::parse_resize_filter(d.filter));
}

void add_selection_options(CLI::App* cmd, DataSelection& d) {
    cmd->add_option("--data-dir", d.data_dir, "MNIST directory (default: $MNIST_DIR, then the bundled subset)");
    cmd->add_option("--data-seed", d.seed, "Seed for the class-balanced subsets");
    cmd->add_option("--resize-filter", d.filter, "bilinear or area")->check(CLI::IsMember({"bilinear", "area"}));
}

// ---------------------------------------------------------------- train

struct TrainOptions {
    std::string variant = "frqi-pairs";
    int repetitions = 2;
    std::string pairing = "cross";
    int memory_qubits = 4;
    int layers = 1;
    int n = 3;
    int classes = 10;
    std::string head = "basis";
    bool head_bias = false;
    DataSelection data;
    std::string optimizer = "adam";
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 0;
    std::string gradient = "shift";
    double fd_step = 1e-4;
    bool no_shuffle = false;
    bool no_wall_time = false;
    int threads = 1;
    int repeat = 1;
    std::string out_dir = "train-out";
};

void print_parameter_report(std::ostream& out, const model::Model& m) {
    const auto& c = m.config();
    const auto& counts = m.counts();
    out << "model: " << model::to_string(c.architecture);
    if (c.architecture == model::Architecture::FrqiPairs) out << " pairing=" << model::to_string(c.pairing);
    if (c.architecture == model::Architecture::Naive) out << " repetitions=" << c.repetitions;
    out << " memory=" << c.memory_qubits << " layers=" << c.deep_layers << " n=" << c.n << " classes=" << c.num_classes
        << " head=" << model::to_string(c.head.feature_mode) << (c.head.bias ? "+bias" : "") << "\n"
        << "qubits: " << c.total_qubits() << " (" << c.frqi_qubits() << " FRQI + " << c.memory_qubits << " memory)\n"
        << "cells: " << counts.cells << "\n"
        << "pqc parameters: " << counts.pqc << " (reference " << model::kReferencePqcParameters << ")\n"
        << "head parameters: " << counts.head << " (reference " << model::kReferenceHeadParameters << ")\n"
        << "total parameters: " << counts.total() << " (reference "
        << model::kReferencePqcParameters + model::kReferenceHeadParameters << ")\n";
}

json parameter_json(const model::Model& m) {
    const auto& counts = m.counts();
    return {{"cells", counts.cells},
            {"pqc", counts.pqc},
            {"head", counts.head},
            {"total", counts.total()},
            {"reference_pqc", model::kReferencePqcParameters},
            {"reference_head", model::kReferenceHeadParameters}};
}

void write_run_files(Outputs& outputs, const std::string& prefix, const train::RunMetrics& metrics) {
    outputs.write(prefix + "metrics.csv", [&](std::ostream& f) { train::write_metrics_csv(f, metrics); });
    if (metrics.confusion.classes() > 0) {
        outputs.write(prefix + "confusion.csv", [&](std::ostream& f) { train::write_confusion_csv(f, metrics.confusion); });
        outputs.write(prefix + "confusion_final.csv",
                      [&](std::ostream& f) { train::write_confusion_csv(f, metrics.final_confusion); });
    }
}

void write_checkpoint(Outputs& outputs, const std::string& name, const model::ModelConfig& config,
                      const model::ParamVector& params, json metadata) {
    outputs.write(name, [&](std::ostream& f) { model::save_checkpoint(f, {config, params, std::move(metadata)}); });
}

void cmd_train(TrainOptions o, const Invocation& inv, std::ostream& out) {
    model::ModelConfig mc;
    mc.architecture = model::parse_architecture(o.variant);
    mc.repetitions = o.repetitions;
    mc.pairing = model::parse_pairing(o.pairing);
    mc.memory_qubits = o.memory_qubits;
    mc.deep_layers = o.layers;
    mc.n = o.n;
    mc.num_classes = o.classes;
    mc.head = {model::parse_feature_mode(o.head), o.head_bias};
    mc.validate();

    train::TrainConfig tc;
    tc.optimizer = {train::parse_optimizer(o.optimizer), o.lr, o.beta1, o.beta2, o.epsilon};
    tc.batch_size = o.batch_size;
    tc.epochs = o.epochs;
    tc.seed = o.seed;
    tc.gradient_mode = train::parse_gradient_mode(o.gradient);
    tc.fd_step = o.fd_step;
    tc.shuffle = !o.no_shuffle;
    tc.record_wall_time = !o.no_wall_time;
    tc.threads = o.threads;
    tc.validate();

    const model::Model m(mc);
    print_parameter_report(out, m);

    auto& sel = o.data;
    sel.data_dir = resolve_data_dir(sel.data_dir);
    sel.classes = mc.num_classes;
    sel.n = mc.n;
    const auto train_set = load_split(sel, data::Split::Train);
    const auto test_set = load_split(sel, data::Split::Test);
    if (train_set.empty() || test_set.empty()) throw data::DataError("selected data has an empty split");
    out << "data: " << train_set.size() << " train / " << test_set.size() << " test samples from "
        << (sel.train_cache.empty() ? sel.data_dir : sel.train_cache) << "\n";
    out.flush();

    const json config = {{"model", model::to_json(mc)},
                         {"train", train::to_json(tc)},
                         {"data", to_json(sel)},
                         {"repeat", o.repeat}};

    Outputs outputs(o.out_dir);
    std::vector<train::RunMetrics> runs;
    for (int r = 0; r < o.repeat; ++r) {
        auto run_tc = tc;
        run_tc.seed = tc.seed + static_cast<std::uint64_t>(r);
        const std::string prefix = o.repeat == 1 ? "" : "seed-" + std::to_string(run_tc.seed) + "/";
        const auto metadata = [&](const char* role, int epoch, double test_acc) {
            return json{{"role", role},
                        {"epoch", epoch},
                        {"test_accuracy", test_acc},
                        {"train", train::to_json(run_tc)},
                        {"data", to_json(sel)}};
        };

        // Progress is flushed every epoch so long runs leave usable
        // checkpoints behind even if interrupted.
        train::RunMetrics progress;
        double best_acc = -1.0;
        const auto on_epoch = [&](const train::EpochMetrics& e, const model::ParamVector& current) {
            progress.epochs.push_back(e);
            char line[160];
            std::snprintf(line, sizeof line, "%sepoch %d  train loss %.4f acc %.4f  test loss %.4f acc %.4f  %.1fs\n",
                          o.repeat == 1 ? "" : ("[seed " + std::to_string(run_tc.seed) + "] ").c_str(), e.epoch,
                          e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy, e.seconds);
            out << line;
            out.flush();
            write_run_files(outputs, prefix, progress);
            write_checkpoint(outputs, prefix + "checkpoint_final.json", mc, current,
                             metadata("final", e.epoch, e.test_accuracy));
            if (e.test_accuracy > best_acc) {
                best_acc = e.test_accuracy;
                write_checkpoint(outputs, prefix + "checkpoint.json", mc, current,
                                 metadata("best", e.epoch, e.test_accuracy));
            }
        };

        train::FitResult result;
        try {
            result = train::fit(mc, train_set, test_set, run_tc, on_epoch);
        } catch (const train::DivergenceError& e) {
            write_run_files(outputs, prefix, e.partial());
            outputs.write_json(prefix + "report.json", {{"config", config},
                                                        {"seed", run_tc.seed},
                                                        {"parameters", parameter_json(m)},
                                                        {"diverged", {{"epoch", e.epoch()}, {"step", e.step()}}},
                                                        {"metrics", train::to_json(e.partial())}});
            write_manifest(outputs, inv, config, tc.seed, "diverged");
            throw;
        }

        const auto& metrics = result.metrics;
        const auto& best = metrics.epochs[static_cast<std::size_t>(metrics.best_epoch - 1)];
        const auto& last = metrics.epochs.back();
        write_run_files(outputs, prefix, metrics);
        write_checkpoint(outputs, prefix + "checkpoint.json", mc, result.best_params,
                         metadata("best", best.epoch, best.test_accuracy));
        write_checkpoint(outputs, prefix + "checkpoint_final.json", mc, result.final_params,
                         metadata("final", last.epoch, last.test_accuracy));
        outputs.write_json(prefix + "report.json", {{"config", config},
                                                    {"seed", run_tc.seed},
                                                    {"parameters", parameter_json(m)},
                                                    {"best_epoch", metrics.best_epoch},
                                                    {"best_test_accuracy", best.test_accuracy},
                                                    {"final_test_accuracy", last.test_accuracy},
                                                    {"metrics", train::to_json(metrics)}});
        char line[128];
        std::snprintf(line, sizeof line, "best test accuracy %.4f at epoch %d\n", best.test_accuracy,
                      metrics.best_epoch);
        out << line;
        runs.push_back(metrics);
    }

    if (o.repeat > 1) {
        const auto mean = train::mean_over_runs(runs);
        write_run_files(outputs, "", mean);
        json seeds = json::array();
        for (int r = 0; r < o.repeat; ++r) seeds.push_back(tc.seed + static_cast<std::uint64_t>(r));
        outputs.write_json("report.json", {{"config", config},
                                           {"seeds", seeds},
                                           {"parameters", parameter_json(m)},
                                           {"aggregate", "mean over seeds; confusion counts summed"},
                                           {"metrics", train::to_json(mean)}});
    }
    write_manifest(outputs, inv, config, tc.seed);
    out << "outputs: " << outputs.dir().string() << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
    std::string checkpoint;
    std::string split = "test";
    std::string data_dir;
    std::string out_dir = "eval-out";
    int threads = 1;
};

void cmd_eval(const EvalOptions& o, const Invocation& inv, std::ostream& out) {
    const auto ckpt = model::load_checkpoint(o.checkpoint);
    if (!ckpt.metadata.contains("data")) {
        throw model::CheckpointError("checkpoint '" + o.checkpoint + "' does not record its data selection");
    }
    auto sel = selection_from_json(ckpt.metadata.at("data"));
    if (sel.n != ckpt.config.n || sel.classes != ckpt.config.num_classes) {
        throw model::CheckpointError("checkpoint data selection (n=" + std::to_string(sel.n) + ", classes=" +
                                     std::to_string(sel.classes) + ") does not match its model config");
    }
    if (!o.data_dir.empty() || sel.data_dir.empty()) sel.data_dir = resolve_data_dir(o.data_dir);
    const auto split = data::parse_split(o.split);
    const auto samples = load_split(sel, split);

    const model::Model m(ckpt.config);
    m.check_params(ckpt.params);
    const auto result = train::evaluate(m, ckpt.params, samples, o.threads);

    Outputs outputs(o.out_dir);
    outputs.write("confusion.csv", [&](std::ostream& f) { train::write_confusion_csv(f, result.confusion); });
    const json summary = {{"checkpoint", o.checkpoint},
                          {"split", o.split},
                          {"samples", samples.size()},
                          {"loss", result.loss},
                          {"accuracy", result.accuracy},
                          {"confusion", train::to_json(result.confusion)}};
    outputs.write_json("eval.json", summary);
    write_manifest(outputs, inv, {{"checkpoint", o.checkpoint}, {"split", o.split}, {"data", to_json(sel)}}, 0);

    char line[160];
    std::snprintf(line, sizeof line, "split: %s\nsamples: %zu\nloss: %.17g\naccuracy: %.17g\n", o.split.c_str(),
                  samples.size(), result.loss, result.accuracy);
    out << line;
}

// ---------------------------------------------------------------- dataset cache

struct CacheOptions {
    DataSelection data;
    std::string split = "train";
    int per_class = 0;
    std::string out_dir = "cache-out";
};

void cmd_dataset_cache(CacheOptions o, const Invocation& inv, std::ostream& out) {
    auto& sel = o.data;
    sel.data_dir = resolve_data_dir(sel.data_dir);
    const auto split = data::parse_split(o.split);
    (split == data::Split::Train ? sel.train_per_class : sel.test_per_class) = o.per_class;
    const auto samples = load_split(sel, split);

    Outputs outputs(o.out_dir);
    const std::string name = o.split + "-n" + std::to_string(sel.n) + ".fqp1";
    data::write_cache((outputs.dir() / name).string(), samples);
    outputs.remember(name);
    write_manifest(outputs, inv, {{"split", o.split}, {"per_class", o.per_class}, {"data", to_json(sel)}}, sel.seed);
    out << "cached " << samples.size() << " samples to " << (outputs.dir() / name).string() << "\n";
}

// ---------------------------------------------------------------- errors

int report_error(std::ostream& err, const std::string& type, const std::string& message, json extra = json::object()) {
    json doc = {{"error", {{"type", type}, {"message", message}}}};
    for (auto& [k, v] : extra.items()) doc["error"][k] = v;
    err << doc.dump() << '\n';
    return type == "usage" ? 2 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"FRQI image encoding and quantum recurrent classifier workbench", "fqp"};
    app.require_subcommand(1);
    app.set_version_flag("--version", FQP_GIT_DESCRIBE);

    EncodeOptions encode;
    auto* encode_cmd = app.add_subcommand("encode", "Encode an image as an FRQI state and retrieve it analytically");
    add_image_options(encode_cmd, encode.image);
    encode_cmd->add_option("--out", encode.out_dir, "Output directory");
    encode_cmd->add_option("--method", encode.method, "direct or circuit")
        ->check(CLI::IsMember({"direct", "circuit"}));

    SampleOptions sample;
    auto* sample_cmd = app.add_subcommand("sample", "Measure an FRQI state and reconstruct the image from counts");
    add_image_options(sample_cmd, sample.image);
    sample_cmd->add_option("--out", sample.out_dir, "Output directory");
    sample_cmd->add_option("--shots", sample.shots, "Number of measurements")->check(CLI::Range(1ULL, 1ULL << 40));
    sample_cmd->add_option("--seed", sample.seed, "Sampling seed");

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train a classifier on MNIST");
    train_cmd->add_option("--variant", tr.variant, "single-cell, naive or frqi-pairs")
        ->check(CLI::IsMember({"single-cell", "naive", "frqi-pairs"}));
    train_cmd->add_option("--repetitions", tr.repetitions, "Cell repetitions for --variant naive")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--pairing", tr.pairing, "cross or triangular")
        ->check(CLI::IsMember({"cross", "triangular"}));
    train_cmd->add_option("--memory-qubits", tr.memory_qubits, "Memory register size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--layers", tr.layers, "Deep layers per cell")->check(CLI::PositiveNumber);
    train_cmd->add_option("--n", tr.n, "Image side exponent (8x8 is 3)")->check(CLI::Range(1, 5));
    train_cmd->add_option("--classes", tr.classes, "Digits 0..classes-1")->check(CLI::Range(2, 10));
    train_cmd->add_option("--head", tr.head, "basis or z")->check(CLI::IsMember({"basis", "z"}));
    train_cmd->add_flag("--head-bias", tr.head_bias, "Add a bias per class to the head");
    add_selection_options(train_cmd, tr.data);
    train_cmd->add_option("--subset-per-class", tr.data.train_per_class, "Training samples per class (0: all)")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--test-per-class", tr.data.test_per_class, "Test samples per class (0: all)")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--train-cache", tr.data.train_cache, "Preprocessed training cache (FQP1)");
    train_cmd->add_option("--test-cache", tr.data.test_cache, "Preprocessed test cache (FQP1)");
    train_cmd->add_option("--optimizer", tr.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
    train_cmd->add_option("--lr", tr.lr, "Learning rate");
    train_cmd->add_option("--beta1", tr.beta1, "Adam beta1");
    train_cmd->add_option("--beta2", tr.beta2, "Adam beta2");
    train_cmd->add_option("--eps", tr.epsilon, "Adam epsilon");
    train_cmd->add_option("--batch-size", tr.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber);
    train_cmd->add_option("--seed", tr.seed, "Initialization and shuffling seed");
    train_cmd->add_option("--gradient", tr.gradient, "shift or fd")->check(CLI::IsMember({"shift", "fd"}));
    train_cmd->add_option("--fd-step", tr.fd_step, "Finite-difference step");
    train_cmd->add_flag("--no-shuffle", tr.no_shuffle, "Keep the training order fixed");
    train_cmd->add_flag("--no-wall-time", tr.no_wall_time, "Write 0 in the seconds column of metrics.csv");
    train_cmd->add_option("--threads", tr.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--repeat", tr.repeat, "Independent runs with seeds seed..seed+repeat-1, averaged")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--out-dir", tr.out_dir, "Output directory");

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
    eval_cmd->add_option("--split", ev.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--data-dir", ev.data_dir, "Override the MNIST directory recorded in the checkpoint");
    eval_cmd->add_option("--out-dir", ev.out_dir, "Output directory");
    eval_cmd->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);

    CacheOptions cache;
    auto* dataset_cmd = app.add_subcommand("dataset", "Dataset utilities");
    dataset_cmd->require_subcommand(1);
    auto* cache_cmd = dataset_cmd->add_subcommand("cache", "Write a preprocessed FQP1 sample cache");
    add_selection_options(cache_cmd, cache.data);
    cache_cmd->add_option("--split", cache.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    cache_cmd->add_option("--n", cache.data.n, "Image side exponent")->check(CLI::Range(1, 5));
    cache_cmd->add_option("--classes", cache.data.classes, "Digits 0..classes-1")->check(CLI::Range(2, 10));
    cache_cmd->add_option("--per-class", cache.per_class, "Samples per class (0: all)")
        ->check(CLI::NonNegativeNumber);
    cache_cmd->add_option("--out-dir", cache.out_dir, "Output directory");

    Invocation inv;
    inv.started_at = utc_now();
    for (int i = 0; i < argc; ++i) inv.argv.emplace_back(argv[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << FQP_GIT_DESCRIBE << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        return report_error(err, "usage", e.what());
    }

    try {
        if (encode_cmd->parsed()) {
            inv.command = "encode";
            cmd_encode(encode, inv, out);
        } else if (sample_cmd->parsed()) {
            inv.command = "sample";
            cmd_sample(sample, inv, out);
        } else if (train_cmd->parsed()) {
            inv.command = "train";
            cmd_train(tr, inv, out);
        } else if (eval_cmd->parsed()) {
            inv.command = "eval";
            cmd_eval(ev, inv, out);
        } else if (cache_cmd->parsed()) {
            inv.command = "dataset cache";
            cmd_dataset_cache(cache, inv, out);
        }
    } catch (const UsageError& e) {
        return report_error(err, "usage", e.what());
    } catch (const data::IdxError& e) {
        return report_error(err, "data-format", e.what(),
                            {{"kind", data::to_string(e.kind())}, {"path", e.path()}, {"offset", e.offset()}});
    } catch (const data::DataError& e) {
        return report_error(err, "data", e.what());
    } catch (const model::CheckpointError& e) {
        return report_error(err, "checkpoint", e.what());
    } catch (const train::DivergenceError& e) {
        return report_error(err, "divergence", e.what(), {{"epoch", e.epoch()}, {"step", e.step()}});
    } catch (const std::invalid_argument& e) {
        return report_error(err, "invalid-argument", e.what());
    } catch (const std::out_of_range& e) {
        return report_error(err, "invalid-argument", e.what());
    } catch (const std::exception& e) {
        return report_error(err, "error", e.what());
    }
    out.flush();
    return 0;
}

}  // namespace fqp::cli
