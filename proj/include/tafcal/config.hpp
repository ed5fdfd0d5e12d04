#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tafcal/data.hpp"
#include "tafcal/trainer.hpp"

// JSON config schemas (versioned, fail-closed: unknown keys are errors).
// Overrides are dotted-key assignments applied after parsing; the effective
// config is echoed into every output artifact.

namespace tafcal {

nlohmann::json parse_json_text(const std::string& text, const std::string& what);

// "a.b.c=value"; the value is parsed as JSON when possible, else as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Validates, applies the TFCAL_PRECISION override, and fills defaults.
nlohmann::json effective_train_config(nlohmann::json in);
nlohmann::json effective_synthetic_config(nlohmann::json in);

TrainConfig train_config_from_effective(const nlohmann::json& effective);
SyntheticSpec synthetic_spec_from_effective(const nlohmann::json& effective);

// FNV-1a 64 over the canonical dump; identifies a config, not a secure hash.
std::string config_digest(const nlohmann::json& j);

Precision parse_precision(const std::string& s);

}  // namespace tafcal
