#include "mmcoref/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>

#include "mmcoref/errors.hpp"
#include "mmcoref/random.hpp"

namespace mmcoref {
namespace {

constexpr std::size_t kTypesPerDomain = 8;
constexpr std::size_t kNumTypes = kTypesPerDomain;
constexpr std::size_t kNumColors = 5;
constexpr std::size_t kBrandsPerDomain = 6;
constexpr std::size_t kGridRows = 2;
constexpr std::size_t kGridCols = 4;

const std::array<const char*, kNumTypes> kTypes = {
    "shirt", "pants", "jacket", "dress", "chair", "table", "sofa",   "lamp"};
const std::array<const char*, kNumColors> kColors = {"red", "blue", "green", "black", "white"};
const std::array<const char*, 2 * kBrandsPerDomain> kBrands = {
    "Downtown Stylists", "Coats & More",   "Global Voyager", "North Lodge",
    "Cats Are Great",    "Brain Puzzles",  "River Chateau",  "Uptown Gallery",
    "Art Den",           "Modern Arts",    "Home Done",      "StyleNow Feed"};
const std::vector<std::string> kSizes = {"XS", "S", "M", "L", "XL", "XXL"};
const std::vector<std::string> kMaterials = {"wood", "metal", "leather", "wool", "glass"};

const std::vector<std::string> kSingleTemplates = {
    "i want the {a}", "show me the {a} please", "how much is the {a} ?",
    "can you tell me about the {a} ?"};
const std::vector<std::string> kDoubleTemplates = {"i like the {a} and the {b}",
                                                   "compare the {a} with the {b}"};
const std::vector<std::string> kPositionalTemplates = {
    "the one {d} of the {a}", "what about the item {d} of the {a} ?",
    "show me the one to the {d} of the {a}"};
const std::vector<std::string> kAnaphoricTemplates = {
    "i like that one", "tell me more about that one", "what is the price of that ?",
    "does that one come in other sizes ?"};
const std::vector<std::string> kSystemMentionTemplates = {
    "how about this one ?", "what do you think of this ?", "we also have this one ."};
const std::vector<std::string> kSystemPlainTemplates = {
    "anything else ?", "sure , let me check .", "what else can i do for you ?"};

struct ObjectInfo {
  int index = 0;
  std::size_t type = 0;   // into kTypes
  std::size_t color = 0;  // into kColors
  std::size_t row = 0, col = 0;
};

struct SceneInfo {
  std::string scene_id;
  std::vector<ObjectInfo> objects;
};

std::string replace_all(std::string text, const std::string& key, const std::string& value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

std::string describe(const ObjectInfo& o) {
  return std::string(kColors[o.color]) + " " + kTypes[o.type];
}

class Generator {
 public:
  Generator(const FixtureConfig& config) : cfg_(config), rng_(config.seed) {
    if (config.min_objects < 2 || config.max_objects < config.min_objects ||
        config.max_objects > kGridRows * kGridCols) {
      throw ContractError("fixture objects per scene must satisfy 2 <= min <= max <= 8");
    }
    if (config.user_turns < 1) throw ContractError("fixture dialogs need at least one user turn");
    if (config.image_dim < kNumTypes + kNumColors || config.kb_dim < kBrandsPerDomain * 2 + 2) {
      throw ContractError("fixture feature dimensions too small for the attribute blocks");
    }
    for (const char* name : {"img_a", "img_b"}) {
      bank_.channels[name] = FeatureChannel{name, config.image_dim, {}};
    }
    for (const char* name : {"kb_a", "kb_b"}) {
      bank_.channels[name] = FeatureChannel{name, config.kb_dim, {}};
    }
  }

  Dataset make_split(const std::string& prefix, std::size_t count) {
    Dataset ds;
    for (std::size_t d = 0; d < count; ++d) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-%03zu", prefix.c_str(), d);
      ds.dialogs.push_back(make_dialog(ds, id));
    }
    return ds;
  }

  FeatureBank take_bank() { return std::move(bank_); }

 private:
  std::vector<double> noise_vector(std::size_t dim) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng_.uniform(-cfg_.noise, cfg_.noise);
    return v;
  }

  SceneInfo make_scene(Dataset& ds, const std::string& scene_id, Domain domain, int first_index) {
    SceneInfo info{scene_id, {}};
    Scene scene;
    scene.scene_id = scene_id;
    scene.feature_id = scene_id;

    const std::size_t n =
        cfg_.min_objects + rng_.below(cfg_.max_objects - cfg_.min_objects + 1);
    std::vector<std::size_t> cells(kGridRows * kGridCols);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    rng_.shuffle(cells);
    // Types are unique within a scene, so the type word alone identifies an
    // object; colours repeat freely.
    std::vector<std::size_t> types(kTypesPerDomain);
    for (std::size_t i = 0; i < types.size(); ++i) types[i] = i;
    rng_.shuffle(types);

    const std::size_t type_base = 0;
    for (std::size_t k = 0; k < n; ++k) {
      ObjectInfo o;
      o.index = first_index + static_cast<int>(k);
      o.type = type_base + types[k];
      o.color = rng_.below(kNumColors);
      o.row = cells[k] / kGridCols;
      o.col = cells[k] % kGridCols;
      info.objects.push_back(o);

      SceneObject obj;
      obj.index = o.index;
      obj.coords = {(static_cast<double>(o.col) - 1.5) * 2.5 + rng_.uniform(-0.2, 0.2),
                    (o.row == 0 ? 1.5 : -1.5) + rng_.uniform(-0.2, 0.2), rng_.uniform(-3.0, -1.0)};
      obj.bbox = {static_cast<int>(100 + 200 * o.col + rng_.below(20)),
                  static_cast<int>(100 + 250 * o.row + rng_.below(20)),
                  static_cast<int>(60 + rng_.below(120)), static_cast<int>(60 + rng_.below(120))};
      obj.kb_id = next_kb_id_++;
      obj.feature_id = scene_id + ":" + std::to_string(o.index);
      scene.objects.push_back(obj);

      ds.kb[obj.kb_id] = make_kb_entry(obj.kb_id, domain, obj.feature_id);
      add_image_features(obj.feature_id, o);
    }

    // Nearest occupied neighbour in each direction; (a, left, b) means b is
    // immediately left of a.
    for (const auto& a : info.objects) {
      const ObjectInfo* left = nullptr;
      const ObjectInfo* right = nullptr;
      const ObjectInfo* vertical = nullptr;
      for (const auto& b : info.objects) {
        if (&a == &b) continue;
        if (b.row == a.row && b.col < a.col && (!left || b.col > left->col)) left = &b;
        if (b.row == a.row && b.col > a.col && (!right || b.col < right->col)) right = &b;
        if (b.col == a.col && b.row != a.row) vertical = &b;
      }
      if (vertical) {
        scene.relations.push_back(
            {a.index, a.row == 1 ? Relation::kUp : Relation::kDown, vertical->index});
      }
      if (left) scene.relations.push_back({a.index, Relation::kLeft, left->index});
      if (right) scene.relations.push_back({a.index, Relation::kRight, right->index});
    }

    auto scene_vec = noise_vector(cfg_.image_dim);
    scene_vec[kNumTypes + kNumColors] += domain == Domain::kFashion ? 1.0 : -1.0;
    bank_.channels["img_a"].vectors[scene_id] = scene_vec;
    bank_.channels["img_b"].vectors[scene_id] = noise_vector(cfg_.image_dim);

    ds.scenes[scene_id] = std::move(scene);
    return info;
  }

  void add_image_features(const std::string& id, const ObjectInfo& o) {
    auto a = noise_vector(cfg_.image_dim);
    a[o.type] += 1.0;
    a[kNumTypes + o.color] += 1.0;
    bank_.channels["img_a"].vectors[id] = std::move(a);
    auto b = noise_vector(cfg_.image_dim);
    b[o.color] += 1.0;
    b[kNumColors + o.type] += 1.0;
    bank_.channels["img_b"].vectors[id] = std::move(b);
  }

  KBEntry make_kb_entry(int kb_id, Domain domain, const std::string& feature_id) {
    KBEntry e;
    e.item_id = kb_id;
    const std::size_t brand =
        (domain == Domain::kFashion ? 0 : kBrandsPerDomain) + rng_.below(kBrandsPerDomain);
    e.brand = kBrands[brand];
    e.customer_review = static_cast<double>(10 + rng_.below(41)) / 10.0;
    double price = 0.0;
    if (domain == Domain::kFashion) {
      price = static_cast<double>(10 + rng_.below(190)) + 0.99;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", price);
      e.price = buf;
      e.size = rng_.pick(kSizes);
      std::vector<std::string> sizes;
      for (const auto& s : kSizes) {
        if (s == *e.size || rng_.chance(0.3)) sizes.push_back(s);
      }
      e.available_sizes = sizes;
    } else {
      price = static_cast<double>(50 + rng_.below(950));
      e.price = std::to_string(static_cast<int>(price));
      e.materials = std::vector<std::string>{rng_.pick(kMaterials)};
    }
    auto a = noise_vector(cfg_.kb_dim);
    a[brand] += 1.0;
    a[2 * kBrandsPerDomain] += price / 1000.0;
    bank_.channels["kb_a"].vectors[feature_id] = std::move(a);
    auto b = noise_vector(cfg_.kb_dim);
    b[0] += e.customer_review / 5.0;
    b[1 + brand] += 1.0;
    bank_.channels["kb_b"].vectors[feature_id] = std::move(b);
    return e;
  }

  static std::optional<int> neighbour(const Dataset& ds, const std::string& scene_id, int index,
                                      Relation r) {
    for (const auto& e : ds.scenes.at(scene_id).relations) {
      if (e.subject == index && e.relation == r) return e.object;
    }
    return std::nullopt;
  }

  // A user turn referencing objects of the active scene by attributes or,
  // in the positional family, by a left/right neighbour.
  Turn reference_turn(const Dataset& ds, const SceneInfo& scene) {
    Turn turn;
    turn.speaker = Speaker::kUser;
    turn.scene_id = scene.scene_id;
    if (cfg_.family == FixtureFamily::kPositional && rng_.chance(cfg_.positional_probability)) {
      struct Option {
        const ObjectInfo* anchor;
        Relation relation;
        int target;
      };
      std::vector<Option> options;
      for (const auto& o : scene.objects) {
        if (auto t = neighbour(ds, scene.scene_id, o.index, Relation::kLeft)) {
          options.push_back({&o, Relation::kLeft, *t});
        }
      }
      if (!options.empty()) {
        const auto& opt = rng_.pick(options);
        std::string text = replace_all(rng_.pick(kPositionalTemplates), "{d}",
                                       std::string(to_string(opt.relation)));
        turn.text = replace_all(text, "{a}", describe(*opt.anchor));
        turn.gold_mentions = std::vector<int>{opt.target};
        turn.tag = kPositionalTag;
        return turn;
      }
    }
    std::vector<std::size_t> order(scene.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);
    const ObjectInfo& first = scene.objects[order[0]];
    if (rng_.chance(0.3)) {
      const ObjectInfo& second = scene.objects[order[1]];
      std::string text = replace_all(rng_.pick(kDoubleTemplates), "{a}", describe(first));
      turn.text = replace_all(text, "{b}", describe(second));
      std::vector<int> gold{first.index, second.index};
      std::sort(gold.begin(), gold.end());
      turn.gold_mentions = gold;
    } else {
      turn.text = replace_all(rng_.pick(kSingleTemplates), "{a}", describe(first));
      turn.gold_mentions = std::vector<int>{first.index};
    }
    turn.tag = kAttributeTag;
    return turn;
  }

  Dialog make_dialog(Dataset& ds, const std::string& dialog_id) {
    Dialog dialog;
    dialog.dialog_id = dialog_id;
    dialog.domain = rng_.chance(0.5) ? Domain::kFashion : Domain::kFurniture;

    std::vector<SceneInfo> scenes;
    int recommended = -1;
    scenes.push_back(make_scene(ds, dialog_id + "-s0", dialog.domain, 0));
    const bool switches = cfg_.user_turns >= 3 && rng_.chance(cfg_.second_scene_probability);

    for (std::size_t u = 0; u < cfg_.user_turns; ++u) {
      if (switches && u == cfg_.user_turns - 1) {
        scenes.push_back(make_scene(ds, dialog_id + "-s1", dialog.domain,
                                    static_cast<int>(scenes[0].objects.size())));
      }
      const SceneInfo& active = scenes.back();
      if (u == 0) {
        dialog.turns.push_back(reference_turn(ds, active));
        continue;
      }
      if (u > 1 && cfg_.family == FixtureFamily::kAnaphoric && scenes.size() == 1 &&
          rng_.chance(cfg_.anaphoric_probability)) {
        anaphoric_pair(dialog, active, recommended);
        continue;
      }
      if (u > 1) {
        Turn system;
        system.speaker = Speaker::kSystem;
        system.scene_id = active.scene_id;
        system.text = rng_.pick(kSystemPlainTemplates);
        system.system_mentions = std::vector<int>{};
        dialog.turns.push_back(system);
        dialog.turns.push_back(reference_turn(ds, active));
        continue;
      }
      Turn system;
      system.speaker = Speaker::kSystem;
      system.scene_id = active.scene_id;
      if (u % 2 == 1) {
        recommended = rng_.pick(active.objects).index;
        anaphoric_pair(dialog, active, recommended);
      } else {
        system.text = rng_.pick(kSystemPlainTemplates);
        system.system_mentions = std::vector<int>{};
        dialog.turns.push_back(system);
        dialog.turns.push_back(reference_turn(ds, active));
      }
    }
    return dialog;
  }

  // system recommends `mentioned`, the user answers with "that one"
  void anaphoric_pair(Dialog& dialog, const SceneInfo& active, int mentioned) {
    Turn system;
    system.speaker = Speaker::kSystem;
    system.scene_id = active.scene_id;
    system.text = rng_.pick(kSystemMentionTemplates);
    system.system_mentions = std::vector<int>{mentioned};
    dialog.turns.push_back(system);

    Turn user;
    user.speaker = Speaker::kUser;
    user.scene_id = active.scene_id;
    user.text = rng_.pick(kAnaphoricTemplates);
    user.gold_mentions = std::vector<int>{mentioned};
    user.tag = kAnaphoricTag;
    dialog.turns.push_back(user);
  }

  FixtureConfig cfg_;
  Rng rng_;
  FeatureBank bank_;
  int next_kb_id_ = 1;
};

}  // namespace

FixtureSet generate_fixtures(const FixtureConfig& config) {
  Generator gen(config);
  FixtureSet set;
  set.train = gen.make_split("train", config.train_dialogs);
  set.dev = gen.make_split("dev", config.dev_dialogs);
  set.features = gen.take_bank();
  validate_dataset(set.train);
  validate_dataset(set.dev);
  return set;
}

void write_fixtures(const FixtureSet& fixtures, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(fixtures.train, dir / "train.json");
  save_dataset(fixtures.dev, dir / "dev.json");
  save_feature_bank(fixtures.features, dir / "features");
}

TinyExample make_tiny_example(std::uint64_t seed) {
  Rng rng(seed);
  TinyExample ex;
  Scene scene;
  scene.scene_id = "tiny";
  scene.feature_id = "tiny";
  const std::array<std::array<double, 3>, 3> coords{{{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0, -1.0, 0.0}}};
  for (int i = 0; i < 3; ++i) {
    SceneObject obj;
    obj.index = i;
    obj.bbox = {10 * i, 20, 30, 40};
    obj.coords = coords[static_cast<std::size_t>(i)];
    obj.kb_id = i + 1;
    obj.feature_id = "tiny:" + std::to_string(i);
    scene.objects.push_back(obj);
    ex.dataset.kb[obj.kb_id] = KBEntry{obj.kb_id, "10", "Acme", std::nullopt, std::nullopt, 4.0,
                                      std::nullopt};
  }
  // 0 and 1 side by side, 2 below 1.
  scene.relations = {{0, Relation::kRight, 1},
                     {1, Relation::kLeft, 0},
                     {1, Relation::kDown, 2},
                     {2, Relation::kUp, 1}};
  ex.dataset.scenes[scene.scene_id] = scene;

  Turn turn;
  turn.speaker = Speaker::kUser;
  turn.text = "the red shirt on left";
  turn.scene_id = "tiny";
  turn.gold_mentions = std::vector<int>{1};
  ex.dataset.dialogs.push_back(Dialog{"tiny-0", Domain::kFashion, {turn}});
  validate_dataset(ex.dataset);

  constexpr std::size_t kDim = 4;
  for (const char* name : {"img_a", "kb_a"}) {
    FeatureChannel ch{name, kDim, {}};
    auto vec = [&] {
      std::vector<double> v(kDim);
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
      return v;
    };
    for (const auto& obj : scene.objects) ch.vectors[obj.feature_id] = vec();
    if (std::string(name) == "img_a") ch.vectors[scene.feature_id] = vec();
    ex.features.channels[name] = std::move(ch);
  }

  ex.vocab = build_vocab(ex.dataset);
  ModelConfig& c = ex.config;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff_dim = 16;
  c.max_text_len = 6;
  c.max_seq_len = 10;
  c.max_objects = 3;
  c.max_scenes = 1;
  c.index_dim = 4;
  c.flag_dim = 4;
  c.vocab_size = ex.vocab.size();
  c.image_channels = {{"img_a", kDim}};
  c.kb_channels = {{"kb_a", kDim}};
  c.init_seed = seed;
  c.validate();
  return ex;
}

}  // namespace mmcoref
