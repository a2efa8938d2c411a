#pragma once

// Input assembly: dialog tokens U, object embeddings O and scene embeddings S.
//
// An Instance holds everything about one user turn that does not depend on
// trainable parameters (token ids, frozen feature vectors, flags, relation
// masks, labels). embed_* turn it into the encoder input using the current
// parameters, so gradients flow into every table and dense layer but never
// into the frozen feature vectors.

#include <cstddef>
#include <string>
#include <vector>

#include "mmcoref/data_model.hpp"
#include "mmcoref/feature_bank.hpp"
#include "mmcoref/model.hpp"
#include "mmcoref/tensor.hpp"

namespace mmcoref {

// Bumped whenever the concat order below changes.
inline constexpr int kConcatLayoutVersion = 1;

struct LayoutBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t width = 0;
};

/// Object concat order: index, image channels, coords, KB channels,
/// scene_active, prev_mentioned (disabled blocks are skipped).
std::vector<LayoutBlock> object_concat_layout(const ModelConfig& config);
/// Scene concat order: index, image channels, scene_active, prev_mentioned.
std::vector<LayoutBlock> scene_concat_layout(const ModelConfig& config);
std::size_t object_concat_dim(const ModelConfig& config);
std::size_t scene_concat_dim(const ModelConfig& config);

enum Segment : std::size_t { kTextSegment = 0, kObjectSegment = 1, kSceneSegment = 2 };

struct TextTokens {
  std::vector<std::size_t> ids;
  // Counted back from the last token of the current turn, so the current
  // turn always occupies the lowest position ids.
  std::vector<std::size_t> positions;
  std::size_t dropped_turns = 0;
};

/// Joins turns [0, turn_index] oldest to newest, each prefixed by a speaker
/// token. Whole oldest turns are dropped until the total fits
/// `max_text_len`; the current turn is always kept (cut at the budget if it
/// alone is too long). ContractError when the current turn has no words.
TextTokens tokenize_dialog(const Dialog& dialog, std::size_t turn_index, const Vocab& vocab,
                           std::size_t max_text_len);

struct Instance {
  std::string dialog_id;
  std::size_t turn_index = 0;
  std::string tag;
  std::string active_scene;

  TextTokens text;
  std::size_t pad_tokens = 0;  // PAD positions appended after the text

  // Objects (I rows), in candidate order.
  std::vector<int> object_indices;
  std::vector<std::string> object_scenes;
  std::vector<std::size_t> object_index_rows;
  Tensor object_image;   // I x sum(image dims)
  Tensor object_coords;  // I x 3
  Tensor object_kb;      // I x sum(kb dims)
  std::vector<std::size_t> object_active;
  std::vector<std::size_t> object_prev;

  // Scenes (J rows), in visit order.
  std::vector<std::string> scene_ids;
  std::vector<std::size_t> scene_index_rows;
  Tensor scene_image;  // J x sum(image dims)
  std::vector<std::size_t> scene_active;
  std::vector<std::size_t> scene_prev;

  SequenceLayout layout;
  RelationMasks masks;
  std::vector<double> labels;  // empty when the turn carries no gold
  bool has_labels() const { return !labels.empty(); }

  std::size_t text_len() const { return text.ids.size() + pad_tokens; }
  std::size_t num_objects() const { return object_indices.size(); }
  std::size_t num_scenes() const { return scene_ids.size(); }
  std::size_t seq_len() const { return text_len() + num_objects() + num_scenes(); }
};

/// Builds the instance for user turn `turn_index`. Feature lookups throw
/// LookupError naming the id and channel.
Instance build_instance(const Dataset& dataset, const Dialog& dialog, std::size_t turn_index,
                        const FeatureBank& bank, const Vocab& vocab, const ModelConfig& config);

/// One instance per user turn of every dialog.
std::vector<Instance> build_instances(const Dataset& dataset, const FeatureBank& bank,
                                      const Vocab& vocab, const ModelConfig& config);

/// Appends `count` masked PAD positions to the text span and re-indexes the
/// relation masks accordingly.
Instance with_text_padding(const Instance& instance, std::size_t count);

/// Additive 1 x n key mask: kMaskedScore on PAD positions, 0 elsewhere.
/// Empty tensor when the instance has no padding.
Tensor padding_mask(const Instance& instance);

struct EncoderInput {
  Tensor text;     // T x d_model
  Tensor objects;  // I x d_model
  Tensor scenes;   // J x d_model (0 rows allowed only when J == 0)
  Tensor sequence; // [text; objects; scenes]
};

Tensor embed_text(const Instance& instance, const ModelParams& params);
/// Object concat before the dense layer (I x object_concat_dim).
Tensor object_concat(const Instance& instance, const ModelParams& params, const ModelConfig& config);
Tensor embed_objects(const Instance& instance, const ModelParams& params, const ModelConfig& config);
Tensor scene_concat(const Instance& instance, const ModelParams& params, const ModelConfig& config);
Tensor embed_scenes(const Instance& instance, const ModelParams& params, const ModelConfig& config);
EncoderInput embed_instance(const Instance& instance, const ModelParams& params,
                            const ModelConfig& config);

}  // namespace mmcoref
