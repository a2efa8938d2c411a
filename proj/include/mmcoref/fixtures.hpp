#pragma once

// Seeded synthetic corpora standing in for real shopping dialogs plus frozen encoder
// outputs. Object image vectors carry each object's type and colour as
// one-hot blocks (plus noise), and user utterances are templated from the
// gold objects' attributes, so gold mentions are learnable by construction.
//
// Every dialog follows the pattern
//   user: reference by attributes (or by position in the positional family)
//   system: "how about this one ?"  mentions one object
//   user: anaphoric reference ("i like that one"), gold = that object
// then alternates plain system turns with further attribute / positional
// references; the last user turn may move to a second scene. In the
// anaphoric family the system keeps recommending that same object and about
// half of the later references are anaphoric ones pointing back to it.
// prev_mentioned is the only way to resolve the anaphoric turns.

#include <cstdint>
#include <filesystem>

#include "mmcoref/data_model.hpp"
#include "mmcoref/feature_bank.hpp"
#include "mmcoref/model.hpp"

namespace mmcoref {

enum class FixtureFamily {
  kStandard,    // attribute and anaphoric references
  kPositional,  // some attribute turns become "the one left of the red shirt"
  kAnaphoric,   // many later turns refer back to the system's recommendation
};

struct FixtureConfig {
  std::uint64_t seed = 7;
  std::size_t train_dialogs = 32;
  std::size_t dev_dialogs = 32;
  std::size_t min_objects = 4;
  std::size_t max_objects = 8;  // per scene; the grid has 2 x 4 cells
  std::size_t user_turns = 13;
  double second_scene_probability = 0.25;
  double positional_probability = 0.5;
  double anaphoric_probability = 0.5;
  FixtureFamily family = FixtureFamily::kStandard;
  std::size_t image_dim = 32;
  std::size_t kb_dim = 32;
  double noise = 0.05;
};

struct FixtureSet {
  Dataset train;
  Dataset dev;
  FeatureBank features;  // channels img_a, img_b, kb_a, kb_b
};

inline constexpr const char* kPositionalTag = "positional";
inline constexpr const char* kAnaphoricTag = "anaphoric";
inline constexpr const char* kAttributeTag = "attribute";

FixtureSet generate_fixtures(const FixtureConfig& config);

/// Writes <dir>/train.json, <dir>/dev.json and <dir>/features/<channel>.jsonl.
void write_fixtures(const FixtureSet& fixtures, const std::filesystem::path& dir);

/// A single one-turn dialog over one scene of three objects (two side by
/// side, one below the second), sized for finite-difference checks:
/// 2 layers, 2 heads, d_model 8, T = 6, I = 3, J = 1.
struct TinyExample {
  Dataset dataset;
  FeatureBank features;
  Vocab vocab;
  ModelConfig config;  // vocab_size and channel dims filled in
};
TinyExample make_tiny_example(std::uint64_t seed);

}  // namespace mmcoref
