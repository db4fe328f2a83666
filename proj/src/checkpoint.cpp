#include "fqp/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace fqp::model {

using nlohmann::json;

json to_json(const ModelConfig& c) {
    return json{
        {"variant", to_string(c.architecture)},
        {"repetitions", c.repetitions},
        {"pairing", to_string(c.pairing)},
        {"memory_qubits", c.memory_qubits},
        {"deep_layers", c.deep_layers},
        {"n", c.n},
        {"num_classes", c.num_classes},
        {"head", {{"features", to_string(c.head.feature_mode)}, {"bias", c.head.bias}}},
        {"cell_template", c.cell_template},
    };
}

ModelConfig model_config_from_json(const json& j) {
    try {
        ModelConfig c;
        c.architecture = parse_architecture(j.at("variant").get<std::string>());
        c.repetitions = j.at("repetitions").get<int>();
        c.pairing = parse_pairing(j.at("pairing").get<std::string>());
        c.memory_qubits = j.at("memory_qubits").get<int>();
        c.deep_layers = j.at("deep_layers").get<int>();
        c.n = j.at("n").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.head.feature_mode = parse_feature_mode(j.at("head").at("features").get<std::string>());
        c.head.bias = j.at("head").at("bias").get<bool>();
        c.cell_template = j.value("cell_template", std::string(kDefaultCellTemplate));
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("model config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("model config: ") + e.what());
    }
}

void save_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
    const json doc{
        {"format", kCheckpointFormat},
        {"layout_version", kLayoutVersion},
        {"config", to_json(checkpoint.config)},
        {"param_count", checkpoint.params.size()},
        {"params", checkpoint.params.values},
        {"metadata", checkpoint.metadata},
    };
    out << doc.dump(1) << '\n';
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || doc.value("format", std::string{}) != kCheckpointFormat) {
        throw CheckpointError("not an fqp checkpoint (missing format tag)");
    }
    const auto layout = doc.value("layout_version", std::string{});
    if (layout != kLayoutVersion) {
        throw CheckpointError("unsupported parameter layout '" + layout + "', expected '" + std::string(kLayoutVersion) +
                              "'");
    }
    if (!doc.contains("config")) throw CheckpointError("checkpoint has no config");
    Checkpoint cp;
    cp.config = model_config_from_json(doc.at("config"));
    try {
        cp.params.values = doc.at("params").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint params: ") + e.what());
    }
    const auto expected = static_cast<std::size_t>(count_parameters(cp.config).total());
    if (cp.params.size() != expected) {
        throw CheckpointError("checkpoint holds " + std::to_string(cp.params.size()) + " parameters, config needs " +
                              std::to_string(expected));
    }
    for (double v : cp.params.values) {
        if (!std::isfinite(v)) throw CheckpointError("checkpoint holds a non-finite parameter");
    }
    if (doc.contains("metadata")) cp.metadata = doc.at("metadata");
    return cp;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace fqp::model
