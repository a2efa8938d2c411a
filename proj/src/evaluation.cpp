#include "mmcoref/evaluation.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <tuple>

#include "mmcoref/encoder.hpp"
#include "mmcoref/errors.hpp"

namespace mmcoref {

nlohmann::json to_json(const F1Report& r) {
  return {{"tp", r.tp},           {"fp", r.fp},         {"fn", r.fn},
          {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

MentionPrediction decide(const std::string& dialog_id, std::size_t turn_index,
                         const std::map<int, double>& probs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ContractError("threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  MentionPrediction out{dialog_id, turn_index, {}, probs};
  for (const auto& [index, p] : probs) {
    if (p >= threshold) out.predicted.insert(index);
  }
  return out;
}

MentionPrediction predict(const Model& model, const Instance& instance, double threshold) {
  auto trace = forward(instance, model);
  const auto p = trace.probs.data();
  std::map<int, double> probs;
  for (std::size_t i = 0; i < instance.num_objects(); ++i) probs[instance.object_indices[i]] = p[i];
  return decide(instance.dialog_id, instance.turn_index, probs, threshold);
}

std::vector<MentionPrediction> predict_all(const Model& model, const std::vector<Instance>& instances,
                                           double threshold, int jobs) {
  std::vector<MentionPrediction> out(instances.size());
  std::vector<std::exception_ptr> errors(instances.size());
#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(instances.size()); ++k) {
    try {
      out[k] = predict(model, instances[k], threshold);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

namespace {

std::string key_list(const std::vector<TurnKey>& keys) {
  std::string s;
  for (std::size_t k = 0; k < keys.size() && k < 10; ++k) {
    if (k) s += ", ";
    s += keys[k].dialog_id + "#" + std::to_string(keys[k].turn);
  }
  if (keys.size() > 10) s += ", ... (" + std::to_string(keys.size()) + " total)";
  return s;
}

}  // namespace

F1Report object_f1(const MentionSets& predictions, const MentionSets& golds) {
  std::vector<TurnKey> missing_pred, missing_gold;
  for (const auto& [key, _] : golds) {
    if (!predictions.count(key)) missing_pred.push_back(key);
  }
  for (const auto& [key, _] : predictions) {
    if (!golds.count(key)) missing_gold.push_back(key);
  }
  if (!missing_pred.empty() || !missing_gold.empty()) {
    std::string msg = "prediction and gold turns differ";
    if (!missing_pred.empty()) msg += "; no prediction for: " + key_list(missing_pred);
    if (!missing_gold.empty()) msg += "; no gold for: " + key_list(missing_gold);
    throw ContractError(msg);
  }
  F1Report r;
  for (const auto& [key, gold] : golds) {
    const auto& pred = predictions.at(key);
    for (int i : pred) {
      if (gold.count(i)) {
        ++r.tp;
      } else {
        ++r.fp;
      }
    }
    for (int i : gold) {
      if (!pred.count(i)) ++r.fn;
    }
  }
  const double tp = static_cast<double>(r.tp);
  r.precision = r.tp + r.fp == 0 ? 0.0 : tp / static_cast<double>(r.tp + r.fp);
  r.recall = r.tp + r.fn == 0 ? 0.0 : tp / static_cast<double>(r.tp + r.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0
                                       : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

MentionSets prediction_sets(const std::vector<MentionPrediction>& predictions) {
  MentionSets out;
  for (const auto& p : predictions) {
    if (!out.emplace(p.key(), p.predicted).second) {
      throw ContractError("duplicate prediction for " + p.dialog_id + "#" +
                          std::to_string(p.turn_index));
    }
  }
  return out;
}

F1Report object_f1(const std::vector<MentionPrediction>& predictions, const MentionSets& golds) {
  return object_f1(prediction_sets(predictions), golds);
}

std::map<std::string, F1Report> object_f1_by_tag(const std::vector<MentionPrediction>& predictions,
                                                 const std::vector<Instance>& instances) {
  const MentionSets all_preds = prediction_sets(predictions);
  std::map<std::string, MentionSets> preds, golds;
  for (const auto& inst : instances) {
    if (!inst.has_labels()) continue;
    const TurnKey key{inst.dialog_id, inst.turn_index};
    auto it = all_preds.find(key);
    if (it == all_preds.end()) {
      throw ContractError("no prediction for " + inst.dialog_id + "#" +
                          std::to_string(inst.turn_index));
    }
    preds[inst.tag][key] = it->second;
    auto& gold = golds[inst.tag][key];
    for (std::size_t i = 0; i < inst.num_objects(); ++i) {
      if (inst.labels[i] == 1.0) gold.insert(inst.object_indices[i]);
    }
  }
  std::map<std::string, F1Report> out;
  for (const auto& [tag, gold] : golds) out[tag] = object_f1(preds[tag], gold);
  return out;
}

MentionSets gold_sets(const Dataset& dataset) {
  MentionSets out;
  for (const auto& d : dataset.dialogs) {
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& turn = d.turns[t];
      if (turn.speaker != Speaker::kUser || !turn.gold_mentions) continue;
      out[{d.dialog_id, t}] = std::set<int>(turn.gold_mentions->begin(), turn.gold_mentions->end());
    }
  }
  return out;
}

MentionSets gold_sets(const std::vector<Instance>& instances) {
  MentionSets out;
  for (const auto& inst : instances) {
    if (!inst.has_labels()) continue;
    auto& set = out[{inst.dialog_id, inst.turn_index}];
    for (std::size_t i = 0; i < inst.num_objects(); ++i) {
      if (inst.labels[i] == 1.0) set.insert(inst.object_indices[i]);
    }
  }
  return out;
}

std::vector<ProbRecord> to_records(const std::vector<MentionPrediction>& predictions) {
  std::vector<ProbRecord> out;
  for (const auto& p : predictions) {
    for (const auto& [index, prob] : p.probs) out.push_back({p.dialog_id, p.turn_index, index, prob});
  }
  return out;
}

void write_prob_file(const std::vector<ProbRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    out << nlohmann::json{{"dialog_id", r.dialog_id},
                          {"turn", r.turn},
                          {"object_index", r.object_index},
                          {"prob", r.prob}}
               .dump()
        << '\n';
  }
}

std::vector<ProbRecord> read_prob_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<ProbRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("dialog_id").get<std::string>(), j.at("turn").get<std::size_t>(),
                     j.at("object_index").get<int>(), j.at("prob").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MentionPrediction> ensemble(const std::vector<std::vector<ProbRecord>>& models,
                                        double threshold, Combiner combiner) {
  if (models.empty()) throw ContractError("ensemble needs at least one probability file");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ContractError("threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  using ObjKey = std::tuple<std::string, std::size_t, int>;
  auto index = [](const std::vector<ProbRecord>& recs, std::size_t m) {
    std::map<ObjKey, double> out;
    for (const auto& r : recs) {
      if (!out.emplace(ObjKey{r.dialog_id, r.turn, r.object_index}, r.prob).second) {
        throw ContractError("model " + std::to_string(m) + " lists " + r.dialog_id + "#" +
                            std::to_string(r.turn) + " object " + std::to_string(r.object_index) +
                            " twice");
      }
    }
    return out;
  };
  std::vector<std::map<ObjKey, double>> maps;
  for (std::size_t m = 0; m < models.size(); ++m) maps.push_back(index(models[m], m));
  for (std::size_t m = 1; m < maps.size(); ++m) {
    if (maps[m].size() != maps[0].size() ||
        !std::equal(maps[m].begin(), maps[m].end(), maps[0].begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw ContractError("probability file " + std::to_string(m) +
                          " does not cover the same (dialog, turn, object) keys as file 0");
    }
  }
  std::map<TurnKey, MentionPrediction> turns;
  const double k = static_cast<double>(maps.size());
  for (const auto& [key, _] : maps[0]) {
    const auto& [dialog, turn, object] = key;
    double total = 0.0;
    std::size_t votes = 0;
    for (const auto& m : maps) {
      const double p = m.at(key);
      total += p;
      if (p >= threshold) ++votes;
    }
    const double mean = total / k;
    auto& pred = turns[{dialog, turn}];
    pred.dialog_id = dialog;
    pred.turn_index = turn;
    pred.probs[object] = mean;
    const bool chosen =
        combiner == Combiner::kMean ? mean >= threshold : 2 * votes > maps.size();
    if (chosen) pred.predicted.insert(object);
  }
  std::vector<MentionPrediction> out;
  for (auto& [_, p] : turns) out.push_back(std::move(p));
  return out;
}

std::vector<ErrorRow> error_report(const std::vector<MentionPrediction>& predictions,
                                   const MentionSets& golds, const Dataset& dataset) {
  std::vector<ErrorRow> rows;
  for (const auto& p : predictions) {
    auto it = golds.find(p.key());
    if (it == golds.end() || it->second == p.predicted) continue;
    const Dialog& dialog = dataset.dialog(p.dialog_id);
    if (p.turn_index >= dialog.turns.size()) {
      throw ContractError("turn " + std::to_string(p.turn_index) + " out of range in " +
                          p.dialog_id);
    }
    const Turn& turn = dialog.turns[p.turn_index];
    ErrorRow row{p.dialog_id, p.turn_index, turn.text, turn.scene_id, p.predicted, it->second,
                 p.probs, {}, {}};
    std::set<int> mentioned;
    for (std::size_t t = 0; t < p.turn_index; ++t) {
      const auto& earlier = dialog.turns[t];
      if (earlier.speaker == Speaker::kSystem && earlier.system_mentions) {
        mentioned.insert(earlier.system_mentions->begin(), earlier.system_mentions->end());
      }
    }
    const Scene& active = dataset.scene(turn.scene_id);
    for (int g : row.gold) {
      if (!mentioned.count(g)) row.gold_never_system_mentioned.push_back(g);
      if (!active.find(g)) row.gold_outside_active_scene.push_back(g);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const ErrorRow& row) {
  nlohmann::json probs = nlohmann::json::object();
  for (const auto& [i, p] : row.probs) probs[std::to_string(i)] = p;
  return {{"dialog_id", row.dialog_id},
          {"turn", row.turn},
          {"utterance", row.utterance},
          {"active_scene", row.active_scene},
          {"predicted", row.predicted},
          {"gold", row.gold},
          {"probs", probs},
          {"gold_never_system_mentioned", row.gold_never_system_mentioned},
          {"gold_outside_active_scene", row.gold_outside_active_scene}};
}

}  // namespace mmcoref
