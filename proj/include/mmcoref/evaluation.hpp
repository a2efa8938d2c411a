#pragma once

// Mention decisions, object F1, ensembling and error reports.

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmcoref/data_model.hpp"
#include "mmcoref/embeddings.hpp"
#include "mmcoref/model.hpp"

namespace mmcoref {

struct TurnKey {
  std::string dialog_id;
  std::size_t turn = 0;
  auto operator<=>(const TurnKey&) const = default;
};

struct MentionPrediction {
  std::string dialog_id;
  std::size_t turn_index = 0;
  std::set<int> predicted;
  std::map<int, double> probs;

  TurnKey key() const { return {dialog_id, turn_index}; }
};

using MentionSets = std::map<TurnKey, std::set<int>>;

struct F1Report {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

nlohmann::json to_json(const F1Report& report);

/// object i is predicted iff prob_i >= threshold. threshold must lie in [0, 1].
MentionPrediction decide(const std::string& dialog_id, std::size_t turn_index,
                         const std::map<int, double>& probs, double threshold);
MentionPrediction predict(const Model& model, const Instance& instance, double threshold = 0.5);
/// Parallel over instances; `jobs` threads.
std::vector<MentionPrediction> predict_all(const Model& model, const std::vector<Instance>& instances,
                                           double threshold = 0.5, int jobs = 1);

/// Micro-aggregated over turns. Key sets must match exactly; otherwise a
/// ContractError lists the missing keys.
F1Report object_f1(const MentionSets& predictions, const MentionSets& golds);
F1Report object_f1(const std::vector<MentionPrediction>& predictions, const MentionSets& golds);

/// object_f1 restricted to the turns of each instance tag (untagged turns
/// are grouped under "").
std::map<std::string, F1Report> object_f1_by_tag(const std::vector<MentionPrediction>& predictions,
                                                 const std::vector<Instance>& instances);

MentionSets prediction_sets(const std::vector<MentionPrediction>& predictions);
/// Gold sets of every user turn that carries gold_mentions.
MentionSets gold_sets(const Dataset& dataset);
MentionSets gold_sets(const std::vector<Instance>& instances);

// ---- probability files --------------------------------------------------------
// JSON Lines: {"dialog_id": ..., "turn": ..., "object_index": ..., "prob": ...}

struct ProbRecord {
  std::string dialog_id;
  std::size_t turn = 0;
  int object_index = 0;
  double prob = 0.0;
};

std::vector<ProbRecord> to_records(const std::vector<MentionPrediction>& predictions);
void write_prob_file(const std::vector<ProbRecord>& records, const std::filesystem::path& path);
std::vector<ProbRecord> read_prob_file(const std::filesystem::path& path);

enum class Combiner { kMean, kMajorityVote };

/// Per object: mean probability across models, then threshold (or, with
/// kMajorityVote, predicted iff more than half the models reach the
/// threshold). All inputs must cover identical (dialog, turn, object) keys.
std::vector<MentionPrediction> ensemble(const std::vector<std::vector<ProbRecord>>& models,
                                        double threshold, Combiner combiner = Combiner::kMean);

// ---- error report -----------------------------------------------------------------

struct ErrorRow {
  std::string dialog_id;
  std::size_t turn = 0;
  std::string utterance;
  std::string active_scene;
  std::set<int> predicted;
  std::set<int> gold;
  std::map<int, double> probs;
  std::vector<int> gold_never_system_mentioned;
  std::vector<int> gold_outside_active_scene;
};

/// One row per turn whose predicted set differs from the gold set.
std::vector<ErrorRow> error_report(const std::vector<MentionPrediction>& predictions,
                                   const MentionSets& golds, const Dataset& dataset);
nlohmann::json to_json(const ErrorRow& row);

}  // namespace mmcoref
