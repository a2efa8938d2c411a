#pragma once

// Precomputed encoder outputs stored as JSON Lines, one file per channel:
//
//   {"channel": "img_a", "dim": 32}
//   {"id": "s0:3", "vec": [0.1, ...]}
//   ...
//
// Vectors are constants of the model; nothing ever differentiates them.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mmcoref {

struct Dataset;

struct FeatureChannel {
  std::string name;
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;

  bool operator==(const FeatureChannel&) const = default;
};

struct FeatureBank {
  std::map<std::string, FeatureChannel> channels;

  /// Throws LookupError naming the channel and the id.
  std::span<const double> lookup(const std::string& channel, const std::string& id) const;
  std::size_t dim(const std::string& channel) const;
  bool operator==(const FeatureBank&) const = default;
};

FeatureChannel load_feature_channel(const std::filesystem::path& path);
void save_feature_channel(const FeatureChannel& channel, const std::filesystem::path& path);

/// Loads every `<channel>.jsonl` file in `dir`.
FeatureBank load_feature_bank(const std::filesystem::path& dir);
void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& dir);

/// Every object feature id must be present in all image and KB channels and
/// every scene feature id in all image channels. Throws ValidationError.
void validate_feature_coverage(const FeatureBank& bank, const Dataset& dataset,
                               const std::vector<std::string>& image_channels,
                               const std::vector<std::string>& kb_channels);

}  // namespace mmcoref
