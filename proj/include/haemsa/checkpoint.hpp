#pragma once

#include <filesystem>

#include <json.hpp>

#include "haemsa/model.hpp"

namespace haemsa {

inline constexpr const char* kCheckpointFormat = "haemsa-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json haen_config_to_json(const HaenConfig& cfg);
HaenConfig haen_config_from_json(const nlohmann::json& j);

struct Checkpoint {
    HaenConfig config;
    nn::ParamVector params;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

/// JSON container: format tag, version, config, meta, flat parameters.
/// Byte-stable for identical inputs.
std::string checkpoint_to_string(const HaenModel& model,
                                 const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
void save_checkpoint(const HaenModel& model, const std::filesystem::path& path,
                     const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());

/// Throws FormatError for a missing, unreadable, or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
HaenModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace haemsa
