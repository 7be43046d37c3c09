#pragma once

#include <nlohmann/json.hpp>

#include "tolo/attention.hpp"
#include "tolo/scheduler.hpp"

namespace tolo {

/// JSON documents for the engine and guidance configs. Missing keys keep their
/// defaults; unknown keys are rejected with FormatError.
nlohmann::json to_json(const EngineConfig& c);
EngineConfig engine_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GuidanceConfig& c);
GuidanceConfig guidance_config_from_json(const nlohmann::json& j);

}  // namespace tolo
