// Model checkpoints: one JSON document holding the model config, the
// parameter-layout tag and the flat parameter vector. Doubles are written in
// shortest round-trip form, so save -> load reproduces every value exactly.
#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fqp/model.hpp"
#include "json.hpp"

namespace fqp::model {

inline constexpr std::string_view kCheckpointFormat = "fqp-checkpoint";
// Bump whenever the parameter layout documented on ParamVector changes.
inline constexpr std::string_view kLayoutVersion = "fqp-layout-v1";

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    ModelConfig config;
    ParamVector params;
    // Free-form provenance (training config, data selection, epoch, ...).
    nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const ModelConfig& config);
// Throws CheckpointError on missing or malformed fields.
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

// Throws CheckpointError for unparsable input, a wrong format or layout tag,
// an invalid config, or a parameter count that does not match the config.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fqp::model
