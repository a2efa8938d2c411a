#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mmcoref/encoder.hpp"
#include "mmcoref/errors.hpp"
#include "mmcoref/evaluation.hpp"
#include "mmcoref/fixtures.hpp"
#include "mmcoref/random.hpp"

using namespace mmcoref;
namespace fs = std::filesystem;

namespace {

MentionSets one(const std::string& d, std::size_t t, std::set<int> s) { return {{{d, t}, std::move(s)}}; }

// Counts with a membership table instead of set algebra.
F1Report brute_force(const MentionSets& preds, const MentionSets& golds) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [key, gold] : golds) {
    const auto& pred = preds.at(key);
    bool in_gold[64] = {}, in_pred[64] = {};
    for (int g : gold) in_gold[g] = true;
    for (int p : pred) in_pred[p] = true;
    for (int i = 0; i < 64; ++i) {
      tp += in_gold[i] && in_pred[i];
      fp += !in_gold[i] && in_pred[i];
      fn += in_gold[i] && !in_pred[i];
    }
  }
  F1Report r{tp, fp, fn};
  r.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  r.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::set<int> random_set(Rng& rng) {
  std::set<int> s;
  const std::size_t n = rng.below(6);
  for (std::size_t i = 0; i < n; ++i) s.insert(static_cast<int>(rng.below(30)));
  return s;
}

std::vector<ProbRecord> recs(std::vector<double> probs) {
  std::vector<ProbRecord> out;
  for (std::size_t i = 0; i < probs.size(); ++i) out.push_back({"d", 2, static_cast<int>(i), probs[i]});
  return out;
}

Dataset table4_dataset() {
  return parse_dataset(nlohmann::json::parse(R"({
    "dialogs": [{"dialog_id": "t4", "domain": "fashion", "turns": [
      {"speaker": "user", "text": "any black jackets", "scene_id": "b", "gold_mentions": [29]},
      {"speaker": "system", "text": "what about this one", "scene_id": "a", "system_mentions": [4]},
      {"speaker": "user", "text": "the one left of the black jacket", "scene_id": "a", "gold_mentions": [4, 29]}]}],
    "scenes": {
      "a": {"feature_id": "a", "objects": [
        {"index": 4, "bbox": [0, 0, 10, 10], "coords": [0, 0, 0], "kb_id": 1, "feature_id": "a:4"},
        {"index": 10, "bbox": [20, 0, 10, 10], "coords": [1, 0, 0], "kb_id": 1, "feature_id": "a:10"}],
        "relations": [[4, "left", 10], [10, "right", 4]]},
      "b": {"feature_id": "b", "objects": [
        {"index": 29, "bbox": [0, 0, 5, 5], "coords": [0, 0, 1], "kb_id": 1, "feature_id": "b:29"}],
        "relations": []}
    },
    "kb": {"1": {"price": "10", "brand": "X", "customer_review": 3.5}}
  })"));
}

MentionPrediction pred(const std::string& d, std::size_t t, std::set<int> s) {
  MentionPrediction p{d, t, std::move(s), {}};
  for (int i : p.predicted) p.probs[i] = 0.9;
  return p;
}

}  // namespace

TEST_CASE("decide thresholds each object") {
  auto p = decide("d", 0, {{0, 0.9}, {1, 0.1}}, 0.5);
  CHECK(p.predicted == std::set<int>{0});
  CHECK(p.probs.at(1) == 0.1);
  CHECK(decide("d", 0, {{0, 0.3}, {1, 0.1}}, 0.5).predicted.empty());
  CHECK(decide("d", 0, {{0, 0.3}, {1, 0.0}}, 0.0).predicted == std::set<int>{0, 1});
  CHECK(decide("d", 0, {{0, 0.5}}, 0.5).predicted == std::set<int>{0});
  CHECK_THROWS_AS(decide("d", 0, {{0, 0.5}}, 1.5), ContractError);
  CHECK_THROWS_AS(decide("d", 0, {{0, 0.5}}, -0.1), ContractError);
}

TEST_CASE("predict uses the model probabilities") {
  auto ex = make_tiny_example(4);
  Model m{ex.config, ex.vocab, init_params(ex.config)};
  const auto insts = build_instances(ex.dataset, ex.features, ex.vocab, ex.config);
  const auto trace = forward(insts[0], m);
  const double mid = trace.probs.data()[1];
  const auto p = predict(m, insts[0], mid);
  CHECK(p.dialog_id == "tiny-0");
  CHECK(p.probs.at(1) == mid);
  for (int i = 0; i < 3; ++i) CHECK(p.predicted.count(i) == (trace.probs.data()[i] >= mid ? 1u : 0u));
  const auto all = predict_all(m, insts, 0.5, 2);
  REQUIRE(all.size() == 1);
  CHECK(all[0].probs == predict(m, insts[0]).probs);
}

TEST_CASE("object F1 on the worked cases") {
  auto r = object_f1(one("x", 3, {4, 10}), one("x", 3, {4, 29}));
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.f1 == 0.5);
  r = object_f1(one("x", 1, {28}), one("x", 1, {19}));
  CHECK(r.tp == 0);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.f1 == 0.0);
  MentionSets both = one("x", 3, {4, 10, 29});
  both[{"y", 1}] = {19};
  CHECK(object_f1(both, both).f1 == 1.0);
}

TEST_CASE("turns with empty gold and empty prediction count for nothing") {
  MentionSets p = one("x", 3, {4, 10}), g = one("x", 3, {4, 29});
  p[{"x", 5}] = {};
  g[{"x", 5}] = {};
  const auto r = object_f1(p, g);
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(object_f1(one("x", 0, {}), one("x", 0, {})).f1 == 0.0);
}

TEST_CASE("key mismatch lists the missing turns") {
  MentionSets g = one("x", 3, {1});
  g[{"y", 7}] = {2};
  try {
    object_f1(one("x", 3, {1}), g);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("y") != std::string::npos);
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
  CHECK_THROWS_AS(object_f1(g, one("x", 3, {1})), ContractError);
}

TEST_CASE("object F1 agrees with a brute-force count") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    MentionSets p, g;
    const std::size_t turns = 1 + rng.below(5);
    for (std::size_t t = 0; t < turns; ++t) {
      p[{"d", t}] = random_set(rng);
      g[{"d", t}] = random_set(rng);
    }
    const auto a = object_f1(p, g), b = brute_force(p, g);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.fn == b.fn);
    CHECK(std::abs(a.f1 - b.f1) < 1e-15);
  }
}

TEST_CASE("object F1 does not depend on turn order") {
  Rng rng(5);
  std::vector<MentionPrediction> preds;
  MentionSets golds;
  for (std::size_t t = 0; t < 12; ++t) {
    preds.push_back(pred("d", t, random_set(rng)));
    golds[{"d", t}] = random_set(rng);
  }
  const auto base = object_f1(preds, golds);
  for (int k = 0; k < 10; ++k) {
    rng.shuffle(preds);
    const auto r = object_f1(preds, golds);
    CHECK(r.tp == base.tp);
    CHECK(r.f1 == base.f1);
  }
  preds.push_back(preds.front());
  CHECK_THROWS_AS(prediction_sets(preds), ContractError);
}

TEST_CASE("raising the threshold never grows predictions or recall") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<int, double> probs;
    for (int i = 0; i < 8; ++i) probs[i] = rng.unit();
    const MentionSets gold = one("d", 0, random_set(rng));
    std::size_t prev_size = 100;
    double prev_recall = 2.0;
    for (double th = 0.0; th <= 1.0; th += 0.05) {
      const auto p = decide("d", 0, probs, th);
      const auto r = object_f1({p}, gold);
      CHECK(p.predicted.size() <= prev_size);
      CHECK(r.recall <= prev_recall);
      prev_size = p.predicted.size();
      prev_recall = r.recall;
    }
  }
}

TEST_CASE("ensemble averages probabilities") {
  auto out = ensemble({recs({0.9}), recs({0.2})}, 0.5);
  REQUIRE(out.size() == 1);
  CHECK(std::abs(out[0].probs.at(0) - 0.55) < 1e-12);
  CHECK(out[0].predicted == std::set<int>{0});

  out = ensemble({recs({0.3, 0.4}), recs({0.6, 0.5}), recs({0.9, 0.45})}, 0.5);
  CHECK(std::abs(out[0].probs.at(0) - 0.6) < 1e-12);
  CHECK(std::abs(out[0].probs.at(1) - 0.45) < 1e-12);
  CHECK(out[0].predicted == std::set<int>{0});
}

TEST_CASE("ensembling identical inputs changes nothing") {
  Rng rng(9);
  std::vector<ProbRecord> base;
  for (std::size_t t = 0; t < 5; ++t)
    for (int i = 0; i < 4; ++i) base.push_back({"d" + std::to_string(t % 2), t, i, rng.unit()});
  const auto single = ensemble({base}, 0.5);
  for (const auto& p : single) {
    for (const auto& [i, prob] : p.probs) {
      const auto it = std::find_if(base.begin(), base.end(), [&](const ProbRecord& r) {
        return r.dialog_id == p.dialog_id && r.turn == p.turn_index && r.object_index == i;
      });
      CHECK(it->prob == prob);
    }
  }
  for (std::size_t k : {2, 3, 5}) {
    const auto many = ensemble(std::vector<std::vector<ProbRecord>>(k, base), 0.5);
    REQUIRE(many.size() == single.size());
    for (std::size_t j = 0; j < many.size(); ++j) CHECK(many[j].predicted == single[j].predicted);
  }
}

TEST_CASE("ensemble rejects coverage mismatches") {
  CHECK_THROWS_AS(ensemble({recs({0.9, 0.1}), recs({0.2})}, 0.5), ContractError);
  auto other = recs({0.9});
  other[0].turn = 3;
  CHECK_THROWS_AS(ensemble({recs({0.9}), other}, 0.5), ContractError);
  CHECK_THROWS_AS(ensemble({}, 0.5), ContractError);
}

TEST_CASE("majority vote needs more than half the models") {
  auto out = ensemble({recs({0.6}), recs({0.6}), recs({0.1})}, 0.5, Combiner::kMajorityVote);
  CHECK(out[0].predicted == std::set<int>{0});
  CHECK(std::abs(out[0].probs.at(0) - (0.6 + 0.6 + 0.1) / 3) < 1e-12);
  out = ensemble({recs({0.6}), recs({0.1})}, 0.5, Combiner::kMajorityVote);
  CHECK(out[0].predicted.empty());
}

TEST_CASE("probability files round trip") {
  const auto path = fs::temp_directory_path() / "mmcoref_probs_test.jsonl";
  std::vector<ProbRecord> records{{"a", 0, 3, 0.125}, {"b", 4, 1, 0.1 + 0.2}};
  write_prob_file(records, path);
  const auto back = read_prob_file(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].dialog_id == "b");
  CHECK(back[1].turn == 4);
  CHECK(back[1].object_index == 1);
  CHECK(back[1].prob == 0.1 + 0.2);
  {
    std::ofstream out(path, std::ios::app);
    out << "{not json\n";
  }
  try {
    read_prob_file(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("error report flags the worked case") {
  const Dataset ds = table4_dataset();
  const auto golds = gold_sets(ds);
  REQUIRE(golds.size() == 2);
  std::vector<MentionPrediction> preds{pred("t4", 0, {29}), pred("t4", 2, {4, 10})};
  const auto rows = error_report(preds, golds, ds);
  REQUIRE(rows.size() == 1);
  const auto& r = rows[0];
  CHECK(r.turn == 2);
  CHECK(r.predicted == std::set<int>{4, 10});
  CHECK(r.gold == std::set<int>{4, 29});
  CHECK(r.utterance == "the one left of the black jacket");
  CHECK(r.active_scene == "a");
  CHECK(r.gold_never_system_mentioned == std::vector<int>{29});
  CHECK(r.gold_outside_active_scene == std::vector<int>{29});
  const auto j = to_json(r);
  CHECK(j["predicted"] == nlohmann::json::array({4, 10}));

  preds[1] = pred("t4", 2, {4, 29});
  CHECK(error_report(preds, golds, ds).empty());
}

TEST_CASE("error report has one row per wrong turn") {
  auto fx = generate_fixtures(FixtureConfig{.seed = 2, .train_dialogs = 1, .dev_dialogs = 6});
  const auto golds = gold_sets(fx.dev);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<MentionPrediction> preds;
    std::size_t wrong = 0;
    for (const auto& [key, gold] : golds) {
      std::set<int> s = gold;
      if (rng.chance(0.4)) {
        s.insert(static_cast<int>(rng.below(40)));
        if (rng.chance(0.5) && !s.empty()) s.erase(s.begin());
      }
      wrong += s != gold;
      preds.push_back(pred(key.dialog_id, key.turn, s));
    }
    CHECK(error_report(preds, golds, fx.dev).size() == wrong);
  }
}

TEST_CASE("per-tag F1 splits turns by tag") {
  Instance a, b;
  a.dialog_id = b.dialog_id = "d";
  a.turn_index = 0;
  b.turn_index = 2;
  a.tag = "attribute";
  b.tag = "anaphoric";
  a.object_indices = b.object_indices = {0, 1, 2};
  a.labels = {1, 0, 0};
  b.labels = {0, 1, 0};
  const std::vector<MentionPrediction> preds{pred("d", 0, {0}), pred("d", 2, {2})};
  const auto by = object_f1_by_tag(preds, {a, b});
  CHECK(by.at("attribute").f1 == 1.0);
  CHECK(by.at("anaphoric").f1 == 0.0);
  const auto all = object_f1(preds, gold_sets(std::vector<Instance>{a, b}));
  CHECK(all.tp == 1);
  CHECK(all.fp == 1);
  CHECK(all.fn == 1);
}
