// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   retromae-checkpoint 1 <manifest bytes>\n
//   <manifest text>
//   <payload>
//
// The manifest holds `[config]` key = value lines, a `[state]` section (step,
// vocab file) and a `[tensors]` table with one line per array:
//
//   <name> <dtype> <dim0>x<dim1>... <payload offset> <byte count>
//
// Payloads are raw little-endian f32, parameters first (model order) then
// the optimizer moments (`adam.m.<name>`, `adam.v.<name>`).

#pragma once

#include <filesystem>
#include <string>

#include "retromae/training.hpp"

namespace retromae::checkpoint {

std::string serialize(const training::TrainState& state);
training::TrainState deserialize(const std::string& bytes);

/// Writes through a temporary file and renames it into place.
void save(const training::TrainState& state, const std::filesystem::path& path);
training::TrainState load(const std::filesystem::path& path);

}  // namespace retromae::checkpoint
