// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "modlm/model.hpp"

namespace modlm {

/// File layout: one magic line naming the format version, one line with the
/// byte length of a JSON header, the header (config, step counter, usage
/// snapshot, named-tensor manifest with shapes, offsets, and trainable
/// flags), one newline, then the payload of row-major little-endian 64-bit
/// floats. Round trips are bit exact, including router extensions and the
/// freeze mask; module counts come from the manifest, so checkpoints taken
/// after inserting or pruning reload with their changed shapes.
void save_checkpoint(const Model& model, const std::string& path);

/// IoError on unknown version, malformed header, role/shape mismatch, or a
/// payload shorter than the manifest promises.
Model load_checkpoint(const std::string& path);

/// Config codec shared by checkpoints, the command line, and tests.
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

} // namespace modlm
