#pragma once

// Shopping dialogs, scenes and knowledge base, held as one JSON document:
//
//   {"dialogs": [{"dialog_id", "domain", "turns": [{"speaker", "text", "scene_id",
//                  "system_mentions"?, "gold_mentions"?, "tag"?}]}],
//    "scenes":  {"<scene_id>": {"feature_id", "objects": [{"index", "bbox", "coords",
//                  "kb_id", "feature_id"}], "relations": [[subj, "left", obj], ...]}},
//    "kb":      {"<item_id>": {"price", "brand", "size"?, "available_sizes"?,
//                  "customer_review", "materials"?}}}
//
// Mention lists hold object indices. Within one dialog, object indices must be
// unique across every scene the dialog visits, so an index identifies an
// object even after the active scene changes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mmcoref {

enum class Domain { kFashion, kFurniture };
enum class Speaker { kUser, kSystem };

// Order fixes the mask index used everywhere (masks, bias scalars, relation
// key/value rows).
enum class Relation : std::uint8_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
inline constexpr std::size_t kNumRelations = 4;

std::string_view to_string(Domain domain);
std::string_view to_string(Speaker speaker);
std::string_view to_string(Relation relation);
std::optional<Domain> parse_domain(std::string_view text);
std::optional<Relation> parse_relation(std::string_view text);

struct KBEntry {
  int item_id = 0;
  std::string price;  // decimal string without currency sign, e.g. "59.99"
  std::string brand;
  std::optional<std::string> size;
  std::optional<std::vector<std::string>> available_sizes;
  double customer_review = 0.0;
  std::optional<std::vector<std::string>> materials;

  bool operator==(const KBEntry&) const = default;
};

struct SceneObject {
  int index = 0;
  std::array<int, 4> bbox{};  // x, y, w, h in pixels
  std::array<double, 3> coords{};
  int kb_id = 0;
  std::string feature_id;

  bool operator==(const SceneObject&) const = default;
};

struct RelationEdge {
  int subject = 0;
  Relation relation = Relation::kUp;
  int object = 0;

  bool operator==(const RelationEdge&) const = default;
};

struct Scene {
  std::string scene_id;
  std::string feature_id;
  std::vector<SceneObject> objects;
  std::vector<RelationEdge> relations;

  const SceneObject* find(int index) const;
  bool operator==(const Scene&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::string scene_id;
  std::optional<std::vector<int>> system_mentions;
  std::optional<std::vector<int>> gold_mentions;
  std::string tag;  // free-form label, e.g. "positional"; empty when absent

  bool operator==(const Turn&) const = default;
};

struct Dialog {
  std::string dialog_id;
  Domain domain = Domain::kFashion;
  std::vector<Turn> turns;

  bool operator==(const Dialog&) const = default;
};

struct Dataset {
  std::vector<Dialog> dialogs;
  std::map<std::string, Scene> scenes;
  std::map<int, KBEntry> kb;

  const Scene& scene(const std::string& scene_id) const;
  const Dialog& dialog(const std::string& dialog_id) const;
  bool operator==(const Dataset&) const = default;
};

Dataset parse_dataset(const nlohmann::json& doc);
nlohmann::json dataset_to_json(const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
/// Checks every cross-reference and invariant; throws ValidationError.
void validate_dataset(const Dataset& dataset);

/// Renders a KB entry in the fixed per-domain sentence template.
std::string verbalize_kb(const KBEntry& entry, const SceneObject& object, Domain domain);

// ---- per-turn views ----------------------------------------------------------

struct ObjectRef {
  const Scene* scene = nullptr;
  const SceneObject* object = nullptr;
};

/// Scene ids in first-visit order over turns [0, turn_index].
std::vector<std::string> visited_scenes(const Dialog& dialog, std::size_t turn_index);

/// Every object of every visited scene, grouped by scene in visit order.
std::vector<ObjectRef> candidate_objects(const Dataset& dataset, const Dialog& dialog,
                                         std::size_t turn_index);

/// flag[k] = 1 iff candidate k appears in a system mention list strictly
/// before `turn_index`. User mentions are never consulted.
std::vector<int> compute_prev_mentioned(const Dataset& dataset, const Dialog& dialog,
                                        std::size_t turn_index);

struct SceneActiveFlags {
  std::vector<int> objects;  // aligned with candidate_objects
  std::vector<int> scenes;   // aligned with visited_scenes
};
SceneActiveFlags compute_scene_active(const Dataset& dataset, const Dialog& dialog,
                                      std::size_t turn_index);

/// Scene-level prev_mentioned: 1 iff any object of that scene was
/// system-mentioned earlier. Aligned with visited_scenes.
std::vector<int> compute_scene_prev_mentioned(const Dataset& dataset, const Dialog& dialog,
                                              std::size_t turn_index);

// ---- sequence layout and relation masks ------------------------------------

struct SequenceLayout {
  struct ObjectSlot {
    std::string scene_id;
    int index = 0;
  };
  std::size_t text_len = 0;
  std::vector<ObjectSlot> objects;     // positions [text_len, text_len + I)
  std::vector<std::string> scenes;     // positions after the objects

  std::size_t total() const { return text_len + objects.size() + scenes.size(); }
  std::size_t object_position(std::size_t slot) const { return text_len + slot; }
  std::size_t scene_position(std::size_t slot) const {
    return text_len + objects.size() + slot;
  }
};

struct RelationMasks {
  std::size_t size = 0;
  // Row-major size x size 0/1 matrices, indexed by Relation.
  std::array<std::vector<double>, kNumRelations> g;

  static RelationMasks empty(std::size_t size);
  double at(Relation r, std::size_t i, std::size_t j) const {
    return g[static_cast<std::size_t>(r)][i * size + j];
  }
  std::size_t nonzero() const;
  bool any() const { return nonzero() > 0; }
};

/// g^r[pos(i)][pos(j)] = 1 iff the scene lists (i, r, j). Every relation of
/// every scene named in the layout is placed; an endpoint missing from the
/// layout for that scene is a ValidationError.
RelationMasks build_relation_masks(const Dataset& dataset, const SequenceLayout& layout);

}  // namespace mmcoref
