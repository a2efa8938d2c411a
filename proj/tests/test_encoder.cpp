#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mmcoref/checkpoint.hpp"
#include "mmcoref/encoder.hpp"
#include "mmcoref/errors.hpp"
#include "mmcoref/fixtures.hpp"
#include "mmcoref/random.hpp"
#include "mmcoref/training.hpp"
#include "oracle.hpp"

using namespace mmcoref;

namespace {

constexpr AttentionMode kModes[] = {AttentionMode::kVanilla, AttentionMode::kAttnBias,
                                    AttentionMode::kRelAware};

void randomize(ModelParams& p, std::uint64_t seed, double bound = 0.8) {
  Rng rng(seed);
  p.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  });
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::from({r, c}, std::move(v));
}

ModelConfig small_config(std::size_t d, std::size_t heads, std::size_t layers) {
  ModelConfig c;
  c.d_model = d;
  c.heads = heads;
  c.layers = layers;
  c.ff_dim = 2 * d;
  c.max_text_len = 4;
  c.max_seq_len = 12;
  c.vocab_size = 6;
  c.max_objects = 4;
  c.max_scenes = 1;
  c.index_dim = 2;
  c.flag_dim = 2;
  return c;
}

void set_edge(RelationMasks& m, Relation r, std::size_t i, std::size_t j) {
  m.g[static_cast<std::size_t>(r)][i * m.size + j] = 1.0;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct Tiny {
  TinyExample ex;
  ModelParams params;
  Instance inst;
  explicit Tiny(std::uint64_t seed, std::size_t extra_seq = 0) : ex(make_tiny_example(seed)) {
    ex.config.max_seq_len += extra_seq;
    params = init_params(ex.config);
    inst = build_instance(ex.dataset, ex.dataset.dialogs[0], 0, ex.features, ex.vocab, ex.config);
  }
};

std::vector<bool> no_pad(std::size_t n) { return std::vector<bool>(n, false); }

}  // namespace

TEST_CASE("one-layer one-head forward matches a hand oracle") {
  // 2 text positions, 2 objects, d = 4
  const ModelConfig c = small_config(4, 1, 1);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelParams p = init_params(c);
    randomize(p, seed);
    Rng rng(seed + 100);
    const Tensor seq = random_matrix(rng, 4, 4);
    RelationMasks masks = RelationMasks::empty(4);
    set_edge(masks, Relation::kLeft, 2, 3);
    set_edge(masks, Relation::kRight, 3, 2);
    for (auto mode : kModes) {
      const auto trace = encode(seq, 2, 2, masks, {}, p, c, mode);
      const auto expect = oracle::probs(seq, 2, 2, masks, no_pad(4), p, c, mode);
      REQUIRE(trace.probs.size() == 2);
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(trace.probs.data()[i] - expect[i]) < 1e-12);
        CHECK(trace.probs.data()[i] > 0.0);
        CHECK(trace.probs.data()[i] < 1.0);
      }
    }
  }
}

TEST_CASE("tiny full model matches the oracle in every mode") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Tiny t(seed);
    randomize(t.params, seed * 7);
    const auto in = embed_instance(t.inst, t.params, t.ex.config);
    for (auto mode : kModes) {
      const auto trace = forward(t.inst, t.params, t.ex.config, mode);
      const auto expect = oracle::probs(in.sequence, t.inst.text_len(), 3, t.inst.masks,
                                        no_pad(t.inst.seq_len()), t.params, t.ex.config, mode);
      for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(trace.probs.data()[i] - expect[i]) < 1e-12);
    }
  }
}

TEST_CASE("attn_bias with zero beta is bitwise vanilla") {
  auto fx = generate_fixtures(FixtureConfig{.seed = 3, .train_dialogs = 4, .dev_dialogs = 1});
  Model m;
  m.vocab = build_vocab(fx.train);
  m.config.d_model = 16;
  m.config.heads = 2;
  m.config.ff_dim = 32;
  m.config.vocab_size = m.vocab.size();
  m.config.image_channels = {{"img_a", fx.features.dim("img_a")}};
  m.config.kb_channels = {{"kb_a", fx.features.dim("kb_a")}};
  m.params = init_params(m.config);
  const auto insts = build_instances(fx.train, fx.features, m.vocab, m.config);
  REQUIRE(insts.size() > 10);
  for (const auto& inst : insts) {
    const auto a = forward(inst, m.params, m.config, AttentionMode::kVanilla);
    const auto b = forward(inst, m.params, m.config, AttentionMode::kAttnBias);
    CHECK(values(a.probs) == values(b.probs));
  }
}

TEST_CASE("rel_aware with empty masks equals vanilla") {
  Tiny t(2);
  perturb_relation_params(t.params, 9, 0.5);
  Instance inst = t.inst;
  inst.masks = RelationMasks::empty(inst.seq_len());
  const auto a = forward(inst, t.params, t.ex.config, AttentionMode::kVanilla);
  const auto b = forward(inst, t.params, t.ex.config, AttentionMode::kRelAware);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a.probs.data()[i] - b.probs.data()[i]) < 1e-12);
}

TEST_CASE("relation layer passes h through when no relation has an edge") {
  const ModelConfig c = small_config(4, 2, 1);
  ModelParams p = init_params(c);
  randomize(p, 4);
  Rng rng(4);
  const Tensor h = random_matrix(rng, 5, 4);
  const Tensor out = relation_aware_layer(h, p.layers[0], c, RelationMasks::empty(5), {});
  CHECK(values(out) == values(h));
}

TEST_CASE("beta of ln 3 on one pair gives weights 1/4 and 3/4") {
  ModelConfig c = small_config(2, 1, 1);
  ModelParams p = init_params(c);
  LayerParams& l = p.layers[0];
  l.wq = Tensor::zeros({2, 2});
  l.wk = Tensor::zeros({2, 2});
  l.beta.mutable_data()[static_cast<std::size_t>(Relation::kLeft)] = std::log(3.0);
  RelationMasks masks = RelationMasks::empty(2);
  set_edge(masks, Relation::kLeft, 0, 1);
  const Tensor h = Tensor::from({2, 2}, {0.3, -0.2, 0.5, 0.1});
  LayerTrace trace;
  const auto rel = relation_mask_tensors(masks);
  attention_head(h, l, 0, c, &rel, {}, &trace);
  const Tensor& w = trace.attention[0];
  CHECK(std::abs(w.at(0, 0) - 0.25) < 1e-15);
  CHECK(std::abs(w.at(0, 1) - 0.75) < 1e-15);
  CHECK(std::abs(w.at(1, 0) - 0.5) < 1e-15);
}

TEST_CASE("pair in two relations receives both biases") {
  ModelConfig c = small_config(4, 2, 1);
  ModelParams p = init_params(c);
  randomize(p, 11);
  LayerParams& l = p.layers[0];
  RelationMasks masks = RelationMasks::empty(3);
  set_edge(masks, Relation::kLeft, 0, 1);
  set_edge(masks, Relation::kUp, 0, 1);
  const auto rel = relation_mask_tensors(masks);
  Rng rng(5);
  const Tensor h = random_matrix(rng, 3, 4);
  for (std::size_t hd = 0; hd < 2; ++hd) {
    LayerTrace trace;
    attention_head(h, l, hd, c, &rel, {}, &trace);
    const double expect = l.beta.at(hd, static_cast<std::size_t>(Relation::kLeft)) +
                          l.beta.at(hd, static_cast<std::size_t>(Relation::kUp));
    const double got = trace.biased_scores[0].at(0, 1) - trace.scores[0].at(0, 1);
    CHECK(std::abs(got - expect) < 1e-14);
    CHECK(trace.biased_scores[0].at(1, 0) == trace.scores[0].at(1, 0));
  }
}

TEST_CASE("raising beta never lowers the related pair's attention") {
  ModelConfig c = small_config(4, 2, 1);
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ModelParams p = init_params(c);
    randomize(p, seed);
    Rng rng(seed);
    const std::size_t n = 4;
    const std::size_t i = rng.below(n), j = (i + 1 + rng.below(n - 1)) % n;
    const auto r = static_cast<Relation>(rng.below(4));
    RelationMasks masks = RelationMasks::empty(n);
    set_edge(masks, r, i, j);
    const auto rel = relation_mask_tensors(masks);
    const Tensor h = random_matrix(rng, n, 4);
    const std::size_t hd = rng.below(2);
    double prev = -1.0;
    for (double b : {-5.0, -1.0, 0.0, 0.5, 2.0, 10.0}) {
      p.layers[0].beta.mutable_data()[hd * 4 + static_cast<std::size_t>(r)] = b;
      LayerTrace trace;
      attention_head(h, p.layers[0], hd, c, &rel, {}, &trace);
      const double w = trace.attention[0].at(i, j);
      CHECK(w >= prev);
      prev = w;
    }
    LayerTrace base;
    p.layers[0].beta.mutable_data()[hd * 4 + static_cast<std::size_t>(r)] = 0.0;
    attention_head(h, p.layers[0], hd, c, &rel, {}, &base);
    p.layers[0].beta.mutable_data()[hd * 4 + static_cast<std::size_t>(r)] = 10.0;
    LayerTrace up;
    attention_head(h, p.layers[0], hd, c, &rel, {}, &up);
    CHECK(up.attention[0].at(i, j) > base.attention[0].at(i, j));
  }
}

TEST_CASE("relation layer with a single left edge matches hand computation") {
  // d = 2, one head, positions 0 and 1, edge (0, left, 1)
  ModelConfig c = small_config(2, 1, 1);
  ModelParams p = init_params(c);
  randomize(p, 21);
  const LayerParams& l = p.layers[0];
  RelationMasks masks = RelationMasks::empty(2);
  set_edge(masks, Relation::kLeft, 0, 1);
  const double h[2][2] = {{0.4, -0.7}, {1.1, 0.2}};
  const Tensor ht = Tensor::from({2, 2}, {h[0][0], h[0][1], h[1][0], h[1][1]});
  auto proj = [&](const Tensor& w, std::size_t row, std::size_t col) {
    return h[row][0] * w.at(0, col) + h[row][1] * w.at(1, col);
  };
  const std::size_t L = static_cast<std::size_t>(Relation::kLeft);
  const double q0[2] = {proj(l.rel_wq, 0, 0), proj(l.rel_wq, 0, 1)};
  double k[2][2], v[2][2];
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t t = 0; t < 2; ++t) {
      k[j][t] = proj(l.rel_wk, j, t);
      v[j][t] = proj(l.rel_wv, j, t);
    }
  const double kr[2] = {l.rel_key.at(L, 0), l.rel_key.at(L, 1)};
  const double vr[2] = {l.rel_value.at(L, 0), l.rel_value.at(L, 1)};
  const double s00 = (q0[0] * k[0][0] + q0[1] * k[0][1]) / std::sqrt(2.0);
  const double s01 = (q0[0] * (k[1][0] + kr[0]) + q0[1] * (k[1][1] + kr[1])) / std::sqrt(2.0);
  const double u01 = std::exp(s01) / (std::exp(s00) + std::exp(s01));
  LayerTrace trace;
  const Tensor out = relation_aware_layer(ht, l, c, masks, {}, &trace);
  const Tensor& contrib = trace.relation_contribution;
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(std::abs(contrib.at(0, t) - u01 * (v[1][t] + vr[t])) < 1e-12);
    CHECK(contrib.at(1, t) == 0.0);
    CHECK(out.at(1, t) == h[1][t]);
  }
}

TEST_CASE("doubling the left value vector doubles the left contribution") {
  ModelConfig c = small_config(4, 2, 1);
  ModelParams p = init_params(c);
  randomize(p, 31);
  LayerParams& l = p.layers[0];
  l.rel_wv = Tensor::zeros({4, 4});  // isolate the v_r term
  RelationMasks masks = RelationMasks::empty(3);
  set_edge(masks, Relation::kLeft, 0, 1);
  set_edge(masks, Relation::kLeft, 2, 1);
  Rng rng(31);
  const Tensor h = random_matrix(rng, 3, 4);
  LayerTrace a;
  relation_aware_layer(h, l, c, masks, {}, &a);
  const std::size_t dk = c.head_dim(), left = static_cast<std::size_t>(Relation::kLeft);
  for (std::size_t t = 0; t < dk; ++t) l.rel_value.mutable_data()[left * dk + t] *= 2.0;
  LayerTrace b;
  relation_aware_layer(h, l, c, masks, {}, &b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 4; ++t)
      CHECK(std::abs(b.relation_contribution.at(i, t) - 2.0 * a.relation_contribution.at(i, t)) < 1e-15);
  CHECK(a.relation_contribution.at(0, 0) != 0.0);
  // u is unaffected by the value vectors
  CHECK(values(a.relation_weights[0][2]) == values(b.relation_weights[0][2]));
}

TEST_CASE("classify saturates and centres correctly") {
  const Tensor h = Tensor::zeros({3, 4});
  auto [z, y] = classify(h, Tensor::zeros({4, 1}), Tensor::zeros({1, 1}));
  for (double v : y.data()) CHECK(v == 0.5);
  auto [z2, y2] = classify(h, Tensor::zeros({4, 1}), Tensor::full({1, 1}, 20.0));
  for (double v : y2.data()) CHECK(v > 0.999999);
  CHECK_THROWS_AS(classify(Tensor::zeros({0, 4}), Tensor::zeros({4, 1}), Tensor::zeros({1, 1})),
                  ContractError);
}

TEST_CASE("permuting objects permutes the probabilities") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Tiny t(seed);
    randomize(t.params, seed + 40);
    const auto in = embed_instance(t.inst, t.params, t.ex.config);
    const std::size_t T = t.inst.text_len(), n = t.inst.seq_len();
    const std::size_t perm[3] = {2, 0, 1};  // new slot s holds old object perm[s]
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    for (std::size_t s = 0; s < 3; ++s) pos[T + s] = T + perm[s];
    std::vector<std::size_t> where(n);
    for (std::size_t i = 0; i < n; ++i) where[pos[i]] = i;
    const Tensor seq = gather_rows(in.sequence, pos);
    RelationMasks masks = RelationMasks::empty(n);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          masks.g[r][where[i] * n + where[j]] = t.inst.masks.g[r][i * n + j];
    for (auto mode : kModes) {
      const auto a = encode(in.sequence, T, 3, t.inst.masks, {}, t.params, t.ex.config, mode);
      const auto b = encode(seq, T, 3, masks, {}, t.params, t.ex.config, mode);
      for (std::size_t s = 0; s < 3; ++s)
        CHECK(std::abs(b.probs.data()[s] - a.probs.data()[perm[s]]) < 1e-12);
    }
  }
}

TEST_CASE("padding the text does not move object probabilities") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Tiny t(seed, 8);
    randomize(t.params, seed + 50);
    for (std::size_t pad : {1, 3, 6}) {
      const Instance padded = with_text_padding(t.inst, pad);
      for (auto mode : kModes) {
        const auto a = forward(t.inst, t.params, t.ex.config, mode);
        const auto b = forward(padded, t.params, t.ex.config, mode);
        for (std::size_t i = 0; i < 3; ++i)
          CHECK(std::abs(a.probs.data()[i] - b.probs.data()[i]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("sequence longer than max_seq_len is rejected") {
  Tiny t(1, 2);
  const Instance padded = with_text_padding(t.inst, 3);
  CHECK_THROWS_AS(forward(padded, t.params, t.ex.config, AttentionMode::kVanilla), ContractError);
}

TEST_CASE("masks must be sized to the sequence") {
  Tiny t(1);
  const auto in = embed_instance(t.inst, t.params, t.ex.config);
  CHECK_THROWS_AS(encode(in.sequence, t.inst.text_len(), 3, RelationMasks::empty(3), {}, t.params,
                         t.ex.config, AttentionMode::kRelAware),
                  DimensionError);
}

TEST_CASE("parameter counts follow the configuration") {
  const ModelConfig c = small_config(4, 2, 3);
  ModelParams p = init_params(c);
  REQUIRE(p.layers.size() == 3);
  std::size_t betas = 0;
  for (const auto& l : p.layers) {
    betas += l.beta.size();
    CHECK(l.rel_key.rows() == 4);
    CHECK(l.rel_value.rows() == 4);
    CHECK(l.rel_key.cols() == c.head_dim());
    for (double v : l.beta.data()) CHECK(v == 0.0);
    for (double v : l.rel_key.data()) CHECK(v == 0.0);
    for (double v : l.rel_value.data()) CHECK(v == 0.0);
  }
  CHECK(betas == 3 * 2 * 4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Tiny t(5);
  randomize(t.params, 77);
  Model m{t.ex.config, t.ex.vocab, t.params};
  m.config.mode = AttentionMode::kRelAware;
  const auto path = std::filesystem::temp_directory_path() / "mmcoref_ckpt_test.json";
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.config == m.config);
  CHECK(back.vocab == m.vocab);
  std::vector<std::vector<double>> a, b;
  m.params.visit([&](const std::string&, const Tensor& x) { a.push_back(values(x)); });
  back.params.visit([&](const std::string&, const Tensor& x) { b.push_back(values(x)); });
  CHECK(a == b);
  CHECK(values(forward(t.inst, m).probs) == values(forward(t.inst, back).probs));
}

TEST_CASE("full model gradient check in every mode") {
  auto ex = make_tiny_example(2);
  Model m{ex.config, ex.vocab, init_params(ex.config)};
  perturb_relation_params(m.params, 3, 0.5);
  const auto inst = build_instance(ex.dataset, ex.dataset.dialogs[0], 0, ex.features, ex.vocab, ex.config);
  for (auto mode : kModes) {
    const auto report = model_grad_check(m, inst, mode, LossConfig{});
    CHECK(report.max_rel_error < 1e-4);
    bool saw_beta = false, saw_key = false;
    for (const auto& e : report.per_param) {
      saw_beta |= e.name.find("beta") != std::string::npos;
      saw_key |= e.name.find("rel.key") != std::string::npos;
    }
    CHECK(saw_beta);
    CHECK(saw_key);
  }
}
