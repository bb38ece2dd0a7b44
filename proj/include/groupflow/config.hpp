#pragma once

// JSON run configuration (schema version 1, see docs/config.md).

#include <filesystem>
#include <string>

#include "groupflow/registration.hpp"
#include "groupflow/synth.hpp"

namespace groupflow {

struct RunConfig {
  std::string preset = "desk-fitting";
  RegistrationConfig registration = groupflow::preset(Experiment::DeskFitting, GroupKind::SE3);
  SynthConfig synth;
};

constexpr int kConfigVersion = 1;

/// Applies the preset named in the document (if any) for the requested group,
/// then every explicit key on top. Unknown keys are rejected.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Complete, canonical document (every key present); parse_config of the
/// result reproduces the configuration.
std::string dump_config(const RunConfig& cfg);

/// Hex CRC-32 of the canonical document.
std::string config_hash(const RunConfig& cfg);

}  // namespace groupflow
