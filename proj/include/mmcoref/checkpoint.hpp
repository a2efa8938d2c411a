#pragma once

// Self-describing model checkpoint (JSON):
//   {"format": "mmcoref-checkpoint", "version": 1, "config": {...},
//    "vocab": [...], "params": [{"name", "shape", "data"}, ...]}
// Doubles are written in shortest round-trip form, so write -> read
// reproduces every parameter bit for bit.

#include <filesystem>

#include "json.hpp"
#include "mmcoref/model.hpp"

namespace mmcoref {

inline constexpr const char* kCheckpointFormat = "mmcoref-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mmcoref
