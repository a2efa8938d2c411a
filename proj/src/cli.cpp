#include "mmcoref/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmcoref/checkpoint.hpp"
#include "mmcoref/data_model.hpp"
#include "mmcoref/embeddings.hpp"
#include "mmcoref/errors.hpp"
#include "mmcoref/evaluation.hpp"
#include "mmcoref/feature_bank.hpp"
#include "mmcoref/fixtures.hpp"
#include "mmcoref/training.hpp"

namespace mmcoref::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Flags {
  std::string config, data, features, checkpoint, out, mode, family, domain;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> item;
  double eps = 1e-5;
  bool vote = false;
  std::vector<std::string> inputs;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

const std::map<std::string, FixtureFamily> kFamilies{{"standard", FixtureFamily::kStandard},
                                                     {"positional", FixtureFamily::kPositional},
                                                     {"anaphoric", FixtureFamily::kAnaphoric}};

std::string family_name(FixtureFamily family) {
  for (const auto& [name, f] : kFamilies) {
    if (f == family) return name;
  }
  return "standard";
}

fs::path default_features(const fs::path& data) {
  return (fs::is_directory(data) ? data : data.parent_path()) / "features";
}

json gen_fixtures(const Flags& f) {
  FixtureConfig cfg;
  if (!f.config.empty()) {
    const json j = read_json(f.config);
    cfg.train_dialogs = j.value("train_dialogs", cfg.train_dialogs);
    cfg.dev_dialogs = j.value("dev_dialogs", cfg.dev_dialogs);
    cfg.min_objects = j.value("min_objects", cfg.min_objects);
    cfg.max_objects = j.value("max_objects", cfg.max_objects);
    cfg.second_scene_probability = j.value("second_scene_probability", cfg.second_scene_probability);
    cfg.positional_probability = j.value("positional_probability", cfg.positional_probability);
    cfg.anaphoric_probability = j.value("anaphoric_probability", cfg.anaphoric_probability);
    cfg.noise = j.value("noise", cfg.noise);
    cfg.user_turns = j.value("user_turns", cfg.user_turns);
    if (j.contains("family")) {
      const auto fam = j.at("family").get<std::string>();
      if (!kFamilies.count(fam)) throw ParseError("unknown fixture family '" + fam + "'");
      cfg.family = kFamilies.at(fam);
    }
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.family.empty()) {
    cfg.family = kFamilies.at(f.family);
  }
  const auto set = generate_fixtures(cfg);
  write_fixtures(set, f.out);
  return {{"command", "gen-fixtures"},
          {"out", f.out},
          {"seed", cfg.seed},
          {"family", family_name(cfg.family)},
          {"train_dialogs", set.train.dialogs.size()},
          {"dev_dialogs", set.dev.dialogs.size()}};
}

struct TrainInputs {
  ModelConfig model;
  TrainRunConfig run;
  fs::path train, dev, features;
};

// Run config: model keys (see config_to_json) and run keys at top level, or
// under "model" / "train"; "data" names a fixture directory and "features"
// a feature directory, both relative to the config file.
TrainInputs train_inputs(const Flags& f) {
  TrainInputs in;
  in.model.image_channels = {{"img_a", 0}, {"img_b", 0}};
  in.model.kb_channels = {{"kb_a", 0}, {"kb_b", 0}};
  fs::path data, features;
  if (!f.config.empty()) {
    const json j = read_json(f.config);
    const fs::path base = fs::path(f.config).parent_path();
    in.model = config_from_json(j.contains("model") ? j.at("model") : j, in.model);
    in.run = run_config_from_json(j.contains("train") ? j.at("train") : j, in.run);
    if (j.contains("data")) data = base / j.at("data").get<std::string>();
    if (j.contains("features")) features = base / j.at("features").get<std::string>();
  }
  if (!f.data.empty()) data = f.data;
  if (!f.features.empty()) features = f.features;
  if (data.empty()) throw ContractError("no training data: pass --data DIR or set \"data\"");
  if (features.empty()) features = default_features(data);
  if (!f.mode.empty()) in.model.mode = parse_attention_mode(f.mode);
  if (f.seed) {
    in.run.seed = *f.seed;
    in.model.init_seed = *f.seed;
  }
  if (f.jobs) in.run.jobs = *f.jobs;
  if (f.threshold) in.run.threshold = *f.threshold;
  in.train = data / "train.json";
  in.dev = data / "dev.json";
  in.features = features;
  return in;
}

json train_cmd(const Flags& f) {
  auto in = train_inputs(f);
  const Dataset train_data = load_dataset(in.train);
  const Dataset dev_data = load_dataset(in.dev);
  const FeatureBank bank = load_feature_bank(in.features);
  const fs::path out = f.out.empty() ? fs::path(".") : fs::path(f.out);
  fs::create_directories(out);
  auto result = train_model(train_data, dev_data, bank, in.model, in.run);
  save_checkpoint(result.best, out / "model.ckpt");
  write_history(result.history, out / "history.jsonl");
  return {{"command", "train"},
          {"mode", to_string(result.best.config.mode)},
          {"best_dev_f1", result.best_f1},
          {"best_epoch", result.best_epoch},
          {"epochs", result.history.size()},
          {"parameters", result.best.params.count()},
          {"checkpoint", (out / "model.ckpt").string()},
          {"history", (out / "history.jsonl").string()}};
}

struct EvalInputs {
  Model model;
  Dataset data;
  std::vector<Instance> instances;
};

EvalInputs eval_inputs(const Flags& f) {
  if (f.checkpoint.empty()) throw ContractError("--checkpoint is required");
  if (f.data.empty()) throw ContractError("--data is required");
  EvalInputs in{load_checkpoint(f.checkpoint), load_dataset(f.data), {}};
  const FeatureBank bank =
      load_feature_bank(f.features.empty() ? default_features(f.data) : fs::path(f.features));
  if (!f.mode.empty()) in.model.config.mode = parse_attention_mode(f.mode);
  in.instances = build_instances(in.data, bank, in.model.vocab, in.model.config);
  return in;
}

json eval_cmd(const Flags& f) {
  auto in = eval_inputs(f);
  std::vector<Instance> labelled;
  for (auto& inst : in.instances) {
    if (inst.has_labels()) labelled.push_back(std::move(inst));
  }
  const auto preds = predict_all(in.model, labelled, f.threshold.value_or(0.5), f.jobs.value_or(1));
  const auto golds = gold_sets(in.data);
  const auto report = object_f1(preds, golds);
  json summary = to_json(report);
  summary["command"] = "eval";
  summary["turns"] = labelled.size();
  json by_tag = json::object();
  for (const auto& [tag, r] : object_f1_by_tag(preds, labelled)) by_tag[tag] = to_json(r);
  summary["by_tag"] = by_tag;
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_prob_file(to_records(preds), fs::path(f.out) / "probs.jsonl");
    std::ofstream errors(fs::path(f.out) / "errors.jsonl");
    const auto rows = error_report(preds, golds, in.data);
    for (const auto& row : rows) errors << to_json(row).dump() << '\n';
    summary["error_turns"] = rows.size();
  }
  return summary;
}

json predict_cmd(const Flags& f) {
  if (f.out.empty()) throw ContractError("--out is required");
  auto in = eval_inputs(f);
  const auto preds =
      predict_all(in.model, in.instances, f.threshold.value_or(0.5), f.jobs.value_or(1));
  const auto records = to_records(preds);
  if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
  write_prob_file(records, f.out);
  std::size_t predicted = 0;
  for (const auto& p : preds) predicted += p.predicted.size();
  return {{"command", "predict"},
          {"turns", preds.size()},
          {"objects", records.size()},
          {"predicted", predicted},
          {"out", f.out}};
}

json ensemble_cmd(const Flags& f) {
  if (f.inputs.empty()) throw ContractError("ensemble needs probability files");
  std::vector<std::vector<ProbRecord>> models;
  for (const auto& path : f.inputs) models.push_back(read_prob_file(path));
  const auto preds = ensemble(models, f.threshold.value_or(0.5),
                              f.vote ? Combiner::kMajorityVote : Combiner::kMean);
  json summary{{"command", "ensemble"},
               {"models", models.size()},
               {"combiner", f.vote ? "vote" : "mean"},
               {"turns", preds.size()}};
  if (!f.out.empty()) {
    write_prob_file(to_records(preds), f.out);
    summary["out"] = f.out;
  }
  if (!f.data.empty()) {
    const Dataset data = load_dataset(f.data);
    MentionSets golds = gold_sets(data);
    summary["score"] = to_json(object_f1(preds, golds));
  }
  return summary;
}

json grad_check_cmd(const Flags& f) {
  const std::uint64_t seed = f.seed.value_or(1);
  std::vector<AttentionMode> modes{AttentionMode::kVanilla, AttentionMode::kAttnBias,
                                   AttentionMode::kRelAware};
  if (!f.mode.empty()) modes = {parse_attention_mode(f.mode)};
  const auto ex = make_tiny_example(seed);
  const auto instances = build_instances(ex.dataset, ex.features, ex.vocab, ex.config);
  json results = json::array();
  bool passed = true;
  for (auto mode : modes) {
    Model model{ex.config, ex.vocab, init_params(ex.config)};
    perturb_relation_params(model.params, seed + 1, 0.5);
    const auto report = model_grad_check(model, instances.at(0), mode, LossConfig{}, f.eps);
    passed = passed && report.max_rel_error < 1e-4;
    results.push_back({{"mode", to_string(mode)}, {"max_rel_error", report.max_rel_error}});
  }
  return {{"command", "grad-check"}, {"eps", f.eps}, {"results", results}, {"passed", passed}};
}

std::optional<Domain> scene_domain(const Dataset& ds, const std::string& scene_id) {
  for (const auto& d : ds.dialogs) {
    for (const auto& t : d.turns) {
      if (t.scene_id == scene_id) return d.domain;
    }
  }
  return std::nullopt;
}

json verbalize_cmd(const Flags& f) {
  if (f.data.empty() && f.config.empty()) throw ContractError("--kb is required");
  if (!f.item) throw ContractError("--item is required");
  const Dataset ds = load_dataset(f.data);
  for (const auto& [scene_id, scene] : ds.scenes) {
    const SceneObject* obj = scene.find(*f.item);
    if (!obj) continue;
    auto kb = ds.kb.find(obj->kb_id);
    if (kb == ds.kb.end()) {
      throw LookupError("object " + std::to_string(*f.item) + " points at missing kb item " +
                        std::to_string(obj->kb_id));
    }
    std::optional<Domain> domain;
    if (!f.domain.empty()) {
      domain = parse_domain(f.domain);
      if (!domain) throw ContractError("unknown domain '" + f.domain + "'");
    }
    if (!domain) domain = scene_domain(ds, scene_id);
    if (!domain) {
      const auto& e = kb->second;
      domain = e.size || e.available_sizes ? Domain::kFashion : Domain::kFurniture;
    }
    return {{"command", "verbalize"},
            {"item", *f.item},
            {"scene_id", scene_id},
            {"domain", to_string(*domain)},
            {"text", verbalize_kb(kb->second, *obj, *domain)}};
  }
  throw LookupError("no object with index " + std::to_string(*f.item));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal coreference resolution toolkit", "mmcoref"};
  app.require_subcommand(1, 1);
  Flags f;

  auto common = [&](CLI::App* sub, bool data, bool checkpoint) {
    sub->add_option("--config", f.config, "Config JSON file")->check(CLI::ExistingFile);
    if (data) sub->add_option("--data", f.data, "Dataset file or fixture directory");
    if (data) sub->add_option("--features", f.features, "Feature bank directory");
    if (checkpoint) sub->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
    sub->add_option("--out", f.out, "Output path");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto mode_opt = [&](CLI::App* sub) {
    sub->add_option("--mode", f.mode, "Attention mode")
        ->check(CLI::IsMember({"vanilla", "attn_bias", "rel_aware"}));
  };
  auto threshold_opt = [&](CLI::App* sub) {
    sub->add_option("--threshold", f.threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  };

  auto* gen = app.add_subcommand("gen-fixtures", "Write a seeded synthetic corpus");
  common(gen, false, false);
  gen->add_option("--family", f.family, "Fixture family")
      ->check(CLI::IsMember({"standard", "positional", "anaphoric"}));
  gen->get_option("--out")->required();

  auto* train = app.add_subcommand("train", "Train a model with early stopping");
  common(train, true, false);
  mode_opt(train);
  threshold_opt(train);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  common(eval, true, true);
  mode_opt(eval);
  threshold_opt(eval);

  auto* predict = app.add_subcommand("predict", "Write per-object probabilities");
  common(predict, true, true);
  mode_opt(predict);
  threshold_opt(predict);

  auto* ens = app.add_subcommand("ensemble", "Average probability files");
  ens->add_option("inputs", f.inputs, "Probability files")->required()->check(CLI::ExistingFile);
  ens->add_option("--data", f.data, "Dataset with gold mentions (optional)");
  ens->add_option("--out", f.out, "Output probability file");
  ens->add_flag("--vote", f.vote, "Majority vote instead of mean probability");
  threshold_opt(ens);

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the tiny model");
  gc->add_option("--seed", f.seed, "Random seed");
  gc->add_option("--eps", f.eps, "Finite-difference step");
  mode_opt(gc);

  auto* verb = app.add_subcommand("verbalize", "Render one object's KB entry");
  verb->add_option("--kb", f.data, "Dataset JSON holding scenes and kb")
      ->required()
      ->check(CLI::ExistingFile);
  verb->add_option("--item", f.item, "Object index")->required();
  verb->add_option("--domain", f.domain, "fashion or furniture");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    err << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    json summary;
    if (gen->parsed()) summary = gen_fixtures(f);
    if (train->parsed()) summary = train_cmd(f);
    if (eval->parsed()) summary = eval_cmd(f);
    if (predict->parsed()) summary = predict_cmd(f);
    if (ens->parsed()) summary = ensemble_cmd(f);
    if (gc->parsed()) summary = grad_check_cmd(f);
    if (verb->parsed()) summary = verbalize_cmd(f);
    summary["status"] = "ok";
    out << summary.dump() << '\n';
    if (gc->parsed() && !summary.at("passed").get<bool>()) return kExitFailure;
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    out << json{{"status", "error"}, {"message", e.what()}}.dump() << '\n';
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mmcoref::cli
