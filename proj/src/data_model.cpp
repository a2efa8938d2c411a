#include "mmcoref/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mmcoref/errors.hpp"

namespace mmcoref {

using nlohmann::json;

std::string_view to_string(Domain domain) {
  return domain == Domain::kFashion ? "fashion" : "furniture";
}

std::string_view to_string(Speaker speaker) {
  return speaker == Speaker::kUser ? "user" : "system";
}

std::string_view to_string(Relation relation) {
  switch (relation) {
    case Relation::kUp: return "up";
    case Relation::kDown: return "down";
    case Relation::kLeft: return "left";
    case Relation::kRight: return "right";
  }
  return "?";
}

std::optional<Domain> parse_domain(std::string_view text) {
  if (text == "fashion") return Domain::kFashion;
  if (text == "furniture") return Domain::kFurniture;
  return std::nullopt;
}

std::optional<Relation> parse_relation(std::string_view text) {
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    if (to_string(static_cast<Relation>(r)) == text) return static_cast<Relation>(r);
  }
  return std::nullopt;
}

const SceneObject* Scene::find(int index) const {
  for (const auto& o : objects) {
    if (o.index == index) return &o;
  }
  return nullptr;
}

const Scene& Dataset::scene(const std::string& scene_id) const {
  auto it = scenes.find(scene_id);
  if (it == scenes.end()) throw ValidationError("unknown scene id '" + scene_id + "'");
  return it->second;
}

const Dialog& Dataset::dialog(const std::string& dialog_id) const {
  for (const auto& d : dialogs) {
    if (d.dialog_id == dialog_id) return d;
  }
  throw LookupError("unknown dialog id '" + dialog_id + "'");
}

// ---- JSON ------------------------------------------------------------------

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> optional_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) return std::nullopt;
  return field<T>(obj, key, where);
}

KBEntry parse_kb_entry(const std::string& key, const json& j) {
  const std::string where = "kb[" + key + "]";
  KBEntry e;
  int id = 0;
  auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
  if (ec != std::errc{} || ptr != key.data() + key.size()) {
    throw ParseError(where + ": item id is not an integer");
  }
  e.item_id = id;
  e.price = field<std::string>(j, "price", where);
  e.brand = field<std::string>(j, "brand", where);
  e.size = optional_field<std::string>(j, "size", where);
  e.available_sizes = optional_field<std::vector<std::string>>(j, "available_sizes", where);
  e.customer_review = field<double>(j, "customer_review", where);
  e.materials = optional_field<std::vector<std::string>>(j, "materials", where);
  return e;
}

json kb_entry_to_json(const KBEntry& e) {
  json j;
  j["price"] = e.price;
  j["brand"] = e.brand;
  if (e.size) j["size"] = *e.size;
  if (e.available_sizes) j["available_sizes"] = *e.available_sizes;
  j["customer_review"] = e.customer_review;
  if (e.materials) j["materials"] = *e.materials;
  return j;
}

Scene parse_scene(const std::string& scene_id, const json& j) {
  const std::string where = "scenes[" + scene_id + "]";
  Scene s;
  s.scene_id = scene_id;
  s.feature_id = field<std::string>(j, "feature_id", where);
  for (const auto& o : field<json>(j, "objects", where)) {
    SceneObject obj;
    obj.index = field<int>(o, "index", where + ".objects");
    const std::string ow = where + ".objects[" + std::to_string(obj.index) + "]";
    obj.bbox = field<std::array<int, 4>>(o, "bbox", ow);
    obj.coords = field<std::array<double, 3>>(o, "coords", ow);
    obj.kb_id = field<int>(o, "kb_id", ow);
    obj.feature_id = field<std::string>(o, "feature_id", ow);
    s.objects.push_back(std::move(obj));
  }
  if (j.contains("relations")) {
    for (const auto& r : j.at("relations")) {
      if (!r.is_array() || r.size() != 3 || !r[0].is_number_integer() || !r[1].is_string() ||
          !r[2].is_number_integer()) {
        throw ParseError(where + ": relation must be [subject, label, object], got " + r.dump());
      }
      auto rel = parse_relation(r[1].get<std::string>());
      if (!rel) {
        throw ValidationError(where + ": relation label '" + r[1].get<std::string>() +
                              "' is not one of up/down/left/right");
      }
      s.relations.push_back({r[0].get<int>(), *rel, r[2].get<int>()});
    }
  }
  return s;
}

json scene_to_json(const Scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"index", o.index},
                       {"bbox", o.bbox},
                       {"coords", o.coords},
                       {"kb_id", o.kb_id},
                       {"feature_id", o.feature_id}});
  }
  json relations = json::array();
  for (const auto& r : s.relations) {
    relations.push_back(json::array({r.subject, std::string(to_string(r.relation)), r.object}));
  }
  return {{"feature_id", s.feature_id}, {"objects", objects}, {"relations", relations}};
}

Dialog parse_dialog(const json& j, std::size_t position) {
  const std::string where = "dialogs[" + std::to_string(position) + "]";
  Dialog d;
  d.dialog_id = field<std::string>(j, "dialog_id", where);
  const auto domain_text = field<std::string>(j, "domain", where);
  auto domain = parse_domain(domain_text);
  if (!domain) throw ValidationError(where + ": unknown domain '" + domain_text + "'");
  d.domain = *domain;
  std::size_t t = 0;
  for (const auto& tj : field<json>(j, "turns", where)) {
    const std::string tw = where + ".turns[" + std::to_string(t++) + "]";
    Turn turn;
    const auto speaker = field<std::string>(tj, "speaker", tw);
    if (speaker == "user") {
      turn.speaker = Speaker::kUser;
    } else if (speaker == "system") {
      turn.speaker = Speaker::kSystem;
    } else {
      throw ValidationError(tw + ": unknown speaker '" + speaker + "'");
    }
    turn.text = field<std::string>(tj, "text", tw);
    turn.scene_id = field<std::string>(tj, "scene_id", tw);
    turn.system_mentions = optional_field<std::vector<int>>(tj, "system_mentions", tw);
    turn.gold_mentions = optional_field<std::vector<int>>(tj, "gold_mentions", tw);
    turn.tag = optional_field<std::string>(tj, "tag", tw).value_or("");
    d.turns.push_back(std::move(turn));
  }
  return d;
}

json dialog_to_json(const Dialog& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json tj{{"speaker", std::string(to_string(t.speaker))},
            {"text", t.text},
            {"scene_id", t.scene_id}};
    if (t.system_mentions) tj["system_mentions"] = *t.system_mentions;
    if (t.gold_mentions) tj["gold_mentions"] = *t.gold_mentions;
    if (!t.tag.empty()) tj["tag"] = t.tag;
    turns.push_back(std::move(tj));
  }
  return {{"dialog_id", d.dialog_id}, {"domain", std::string(to_string(d.domain))}, {"turns", turns}};
}

}  // namespace

Dataset parse_dataset(const json& doc) {
  if (!doc.is_object()) throw ParseError("dataset: top level must be an object");
  Dataset ds;
  if (doc.contains("kb")) {
    for (const auto& [key, value] : doc.at("kb").items()) {
      auto entry = parse_kb_entry(key, value);
      ds.kb.emplace(entry.item_id, std::move(entry));
    }
  }
  if (doc.contains("scenes")) {
    for (const auto& [key, value] : doc.at("scenes").items()) {
      ds.scenes.emplace(key, parse_scene(key, value));
    }
  }
  if (doc.contains("dialogs")) {
    std::size_t i = 0;
    for (const auto& d : doc.at("dialogs")) ds.dialogs.push_back(parse_dialog(d, i++));
  }
  validate_dataset(ds);
  return ds;
}

json dataset_to_json(const Dataset& ds) {
  json kb = json::object();
  for (const auto& [id, e] : ds.kb) kb[std::to_string(id)] = kb_entry_to_json(e);
  json scenes = json::object();
  for (const auto& [id, s] : ds.scenes) scenes[id] = scene_to_json(s);
  json dialogs = json::array();
  for (const auto& d : ds.dialogs) dialogs.push_back(dialog_to_json(d));
  return {{"dialogs", dialogs}, {"scenes", scenes}, {"kb", kb}};
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_dataset(doc);
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  out << dataset_to_json(dataset).dump(1) << '\n';
}

void validate_dataset(const Dataset& ds) {
  for (const auto& [id, e] : ds.kb) {
    if (!(e.customer_review >= 0.0 && e.customer_review <= 5.0)) {
      throw ValidationError("kb item " + std::to_string(id) + ": customer_review outside [0, 5]");
    }
  }
  for (const auto& [sid, s] : ds.scenes) {
    std::set<int> seen;
    for (const auto& o : s.objects) {
      if (!seen.insert(o.index).second) {
        throw ValidationError("scene '" + sid + "': duplicate object index " +
                              std::to_string(o.index));
      }
      if (o.bbox[2] < 0 || o.bbox[3] < 0) {
        throw ValidationError("scene '" + sid + "': object " + std::to_string(o.index) +
                              " has a negative bounding-box extent");
      }
      if (!ds.kb.contains(o.kb_id)) {
        throw ValidationError("scene '" + sid + "': object " + std::to_string(o.index) +
                              " references unknown kb id " + std::to_string(o.kb_id));
      }
    }
    for (const auto& r : s.relations) {
      for (int endpoint : {r.subject, r.object}) {
        if (!seen.contains(endpoint)) {
          throw ValidationError("scene '" + sid + "': relation endpoint " +
                                std::to_string(endpoint) + " is not an object of the scene");
        }
      }
    }
  }
  for (const auto& d : ds.dialogs) {
    const std::string where = "dialog '" + d.dialog_id + "'";
    if (d.turns.empty()) throw ValidationError(where + ": no turns");
    std::set<int> indices;
    std::set<std::string> visited;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& turn = d.turns[t];
      const Speaker expected = t % 2 == 0 ? Speaker::kUser : Speaker::kSystem;
      if (turn.speaker != expected) {
        throw ValidationError(where + ": turn " + std::to_string(t) + " should be a " +
                              std::string(to_string(expected)) + " turn");
      }
      auto it = ds.scenes.find(turn.scene_id);
      if (it == ds.scenes.end()) {
        throw ValidationError(where + ": turn " + std::to_string(t) + " references unknown scene '" +
                              turn.scene_id + "'");
      }
      if (visited.insert(turn.scene_id).second) {
        for (const auto& o : it->second.objects) {
          if (!indices.insert(o.index).second) {
            throw ValidationError(where + ": object index " + std::to_string(o.index) +
                                  " repeats across visited scenes");
          }
        }
      }
      for (const auto* list : {&turn.system_mentions, &turn.gold_mentions}) {
        if (!*list) continue;
        for (int idx : **list) {
          if (!indices.contains(idx)) {
            throw ValidationError(where + ": turn " + std::to_string(t) + " mentions object " +
                                  std::to_string(idx) + " outside the visited scenes");
          }
        }
      }
    }
  }
}

// ---- verbalization -----------------------------------------------------------

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join_and(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace

std::string verbalize_kb(const KBEntry& entry, const SceneObject& object, Domain domain) {
  std::ostringstream os;
  os << "Item " << object.index << " is located at x : " << fixed2(object.coords[0])
     << ", y : " << fixed2(object.coords[1]) << ", z: " << fixed2(object.coords[2]) << '.';
  os << " It is located in the bounding box " << object.bbox[0] << ' ' << object.bbox[1] << ' '
     << object.bbox[2] << ' ' << object.bbox[3] << '.';
  os << " Its price is $" << entry.price << '.';
  const std::string review =
      " It has a customer review of " + shortest(entry.customer_review) + " out of 5.";
  if (domain == Domain::kFashion) {
    if (entry.size) os << " Its size is " << *entry.size << '.';
    os << " Its brand is " << entry.brand << '.';
    os << review;
    if (entry.available_sizes && !entry.available_sizes->empty()) {
      os << " It is available in sizes " << join_and(*entry.available_sizes) << '.';
    }
  } else {
    os << " Its brand is " << entry.brand << '.';
    if (entry.materials && !entry.materials->empty()) {
      os << " It is made with " << join_and(*entry.materials) << '.';
    }
    os << review;
  }
  return os.str();
}

// ---- per-turn views ----------------------------------------------------------

namespace {

void check_turn(const Dialog& dialog, std::size_t turn_index) {
  if (turn_index >= dialog.turns.size()) {
    throw ContractError("turn index " + std::to_string(turn_index) + " out of range for dialog '" +
                        dialog.dialog_id + "' with " + std::to_string(dialog.turns.size()) +
                        " turns");
  }
}

void check_user_turn(const Dialog& dialog, std::size_t turn_index) {
  check_turn(dialog, turn_index);
  if (dialog.turns[turn_index].speaker != Speaker::kUser) {
    throw ContractError("turn " + std::to_string(turn_index) + " of dialog '" + dialog.dialog_id +
                        "' is not a user turn");
  }
}

std::set<int> system_mentioned_before(const Dialog& dialog, std::size_t turn_index) {
  std::set<int> out;
  for (std::size_t t = 0; t < turn_index; ++t) {
    const auto& turn = dialog.turns[t];
    if (turn.speaker == Speaker::kSystem && turn.system_mentions) {
      out.insert(turn.system_mentions->begin(), turn.system_mentions->end());
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> visited_scenes(const Dialog& dialog, std::size_t turn_index) {
  check_turn(dialog, turn_index);
  std::vector<std::string> out;
  for (std::size_t t = 0; t <= turn_index; ++t) {
    const auto& id = dialog.turns[t].scene_id;
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

std::vector<ObjectRef> candidate_objects(const Dataset& dataset, const Dialog& dialog,
                                         std::size_t turn_index) {
  std::vector<ObjectRef> out;
  for (const auto& sid : visited_scenes(dialog, turn_index)) {
    const Scene& scene = dataset.scene(sid);
    for (const auto& o : scene.objects) out.push_back({&scene, &o});
  }
  return out;
}

std::vector<int> compute_prev_mentioned(const Dataset& dataset, const Dialog& dialog,
                                        std::size_t turn_index) {
  check_user_turn(dialog, turn_index);
  const auto mentioned = system_mentioned_before(dialog, turn_index);
  std::vector<int> flags;
  for (const auto& ref : candidate_objects(dataset, dialog, turn_index)) {
    flags.push_back(mentioned.contains(ref.object->index) ? 1 : 0);
  }
  return flags;
}

SceneActiveFlags compute_scene_active(const Dataset& dataset, const Dialog& dialog,
                                      std::size_t turn_index) {
  check_turn(dialog, turn_index);
  const auto& active = dialog.turns[turn_index].scene_id;
  dataset.scene(active);
  SceneActiveFlags flags;
  for (const auto& ref : candidate_objects(dataset, dialog, turn_index)) {
    flags.objects.push_back(ref.scene->scene_id == active ? 1 : 0);
  }
  for (const auto& sid : visited_scenes(dialog, turn_index)) {
    flags.scenes.push_back(sid == active ? 1 : 0);
  }
  return flags;
}

std::vector<int> compute_scene_prev_mentioned(const Dataset& dataset, const Dialog& dialog,
                                              std::size_t turn_index) {
  check_user_turn(dialog, turn_index);
  const auto mentioned = system_mentioned_before(dialog, turn_index);
  std::vector<int> flags;
  for (const auto& sid : visited_scenes(dialog, turn_index)) {
    int flag = 0;
    for (const auto& o : dataset.scene(sid).objects) {
      if (mentioned.contains(o.index)) flag = 1;
    }
    flags.push_back(flag);
  }
  return flags;
}

// ---- relation masks -----------------------------------------------------------

RelationMasks RelationMasks::empty(std::size_t size) {
  RelationMasks m;
  m.size = size;
  for (auto& g : m.g) g.assign(size * size, 0.0);
  return m;
}

std::size_t RelationMasks::nonzero() const {
  std::size_t count = 0;
  for (const auto& g : this->g) {
    for (double v : g) count += v != 0.0 ? 1 : 0;
  }
  return count;
}

RelationMasks build_relation_masks(const Dataset& dataset, const SequenceLayout& layout) {
  RelationMasks masks = RelationMasks::empty(layout.total());
  std::map<std::pair<std::string, int>, std::size_t> position;
  std::map<int, std::string> owner;
  for (std::size_t k = 0; k < layout.objects.size(); ++k) {
    const auto& slot = layout.objects[k];
    position[{slot.scene_id, slot.index}] = layout.object_position(k);
    owner[slot.index] = slot.scene_id;
  }
  std::set<std::string> scene_ids(layout.scenes.begin(), layout.scenes.end());
  for (const auto& slot : layout.objects) scene_ids.insert(slot.scene_id);

  for (const auto& sid : scene_ids) {
    const Scene& scene = dataset.scene(sid);
    for (const auto& rel : scene.relations) {
      std::size_t ends[2];
      int k = 0;
      for (int endpoint : {rel.subject, rel.object}) {
        auto it = position.find({sid, endpoint});
        if (it == position.end()) {
          auto other = owner.find(endpoint);
          if (other != owner.end()) {
            throw ValidationError("relation (" + std::to_string(rel.subject) + ", " +
                                  std::string(to_string(rel.relation)) + ", " +
                                  std::to_string(rel.object) + ") of scene '" + sid +
                                  "' crosses into scene '" + other->second + "'");
          }
          throw ValidationError("relation endpoint " + std::to_string(endpoint) + " of scene '" +
                                sid + "' has no position in the sequence layout");
        }
        ends[k++] = it->second;
      }
      masks.g[static_cast<std::size_t>(rel.relation)][ends[0] * masks.size + ends[1]] = 1.0;
    }
  }
  return masks;
}

}  // namespace mmcoref
