#include "mmcoref/model.hpp"

#include <cctype>
#include <cmath>

#include "mmcoref/data_model.hpp"
#include "mmcoref/embeddings.hpp"
#include "mmcoref/errors.hpp"
#include "mmcoref/random.hpp"

namespace mmcoref {

using nlohmann::json;

std::string_view to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kVanilla: return "vanilla";
    case AttentionMode::kAttnBias: return "attn_bias";
    case AttentionMode::kRelAware: return "rel_aware";
  }
  return "?";
}

AttentionMode parse_attention_mode(std::string_view text) {
  if (text == "vanilla") return AttentionMode::kVanilla;
  if (text == "attn_bias") return AttentionMode::kAttnBias;
  if (text == "rel_aware") return AttentionMode::kRelAware;
  throw ContractError("unknown attention mode '" + std::string(text) +
                      "' (expected vanilla, attn_bias or rel_aware)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ContractError("d_model must be a positive multiple of heads");
  }
  if (layers == 0 || ff_dim == 0) throw ContractError("layers and ff_dim must be positive");
  if (max_text_len == 0 || max_seq_len <= max_text_len) {
    throw ContractError("max_seq_len must exceed max_text_len");
  }
  if (vocab_size < 4) throw ContractError("vocab_size must include the four special tokens");
}

namespace {

json channels_to_json(const std::vector<ChannelSpec>& channels) {
  json out = json::array();
  for (const auto& c : channels) out.push_back({{"name", c.name}, {"dim", c.dim}});
  return out;
}

std::vector<ChannelSpec> channels_from_json(const json& j) {
  std::vector<ChannelSpec> out;
  for (const auto& c : j) {
    if (c.is_string()) {
      out.push_back({c.get<std::string>(), 0});
    } else {
      out.push_back({c.at("name").get<std::string>(), c.value("dim", std::size_t{0})});
    }
  }
  return out;
}

}  // namespace

json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ff_dim", c.ff_dim},
          {"max_text_len", c.max_text_len},
          {"max_seq_len", c.max_seq_len},
          {"max_objects", c.max_objects},
          {"max_scenes", c.max_scenes},
          {"index_dim", c.index_dim},
          {"flag_dim", c.flag_dim},
          {"vocab_size", c.vocab_size},
          {"image_channels", channels_to_json(c.image_channels)},
          {"kb_channels", channels_to_json(c.kb_channels)},
          {"use_index", c.use_index},
          {"use_coords", c.use_coords},
          {"use_kb", c.use_kb},
          {"use_scene_active", c.use_scene_active},
          {"use_prev_mentioned", c.use_prev_mentioned},
          {"mode", std::string(to_string(c.mode))},
          {"rel_mask_before_softmax", c.rel_mask_before_softmax},
          {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const json& j, ModelConfig c) {
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.max_scenes = j.value("max_scenes", c.max_scenes);
    c.index_dim = j.value("index_dim", c.index_dim);
    c.flag_dim = j.value("flag_dim", c.flag_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    if (j.contains("image_channels")) c.image_channels = channels_from_json(j.at("image_channels"));
    if (j.contains("kb_channels")) c.kb_channels = channels_from_json(j.at("kb_channels"));
    c.use_index = j.value("use_index", c.use_index);
    c.use_coords = j.value("use_coords", c.use_coords);
    c.use_kb = j.value("use_kb", c.use_kb);
    c.use_scene_active = j.value("use_scene_active", c.use_scene_active);
    c.use_prev_mentioned = j.value("use_prev_mentioned", c.use_prev_mentioned);
    if (j.contains("mode")) c.mode = parse_attention_mode(j.at("mode").get<std::string>());
    c.rel_mask_before_softmax = j.value("rel_mask_before_softmax", c.rel_mask_before_softmax);
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- vocabulary --------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{"[PAD]", "[UNK]", "[USR]", "[SYS]"}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  for (auto& t : tokens) add(t);
}

std::size_t Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (!std::isspace(c)) out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

Vocab build_vocab(const Dataset& train) {
  Vocab vocab;
  for (const auto& d : train.dialogs) {
    for (const auto& t : d.turns) {
      for (const auto& w : tokenize(t.text)) vocab.add(w);
    }
  }
  return vocab;
}

// ---- parameters ----------------------------------------------------------------

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("emb.token", token);
  fn("emb.position", position);
  fn("emb.segment", segment);
  fn("emb.index", index);
  fn("emb.scene_active", scene_active);
  fn("emb.prev_mentioned", prev_mentioned);
  fn("emb.object_dense.w", object_w);
  fn("emb.object_dense.b", object_b);
  fn("emb.scene_dense.w", scene_w);
  fn("emb.scene_dense.b", scene_b);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "attn.wq", p.wq);
    fn(pre + "attn.wk", p.wk);
    fn(pre + "attn.wv", p.wv);
    fn(pre + "attn.wo", p.wo);
    fn(pre + "attn.bo", p.bo);
    fn(pre + "ln1.gain", p.ln1_gain);
    fn(pre + "ln1.shift", p.ln1_shift);
    fn(pre + "ffn.w1", p.ff_w1);
    fn(pre + "ffn.b1", p.ff_b1);
    fn(pre + "ffn.w2", p.ff_w2);
    fn(pre + "ffn.b2", p.ff_b2);
    fn(pre + "ln2.gain", p.ln2_gain);
    fn(pre + "ln2.shift", p.ln2_shift);
    fn(pre + "bias.beta", p.beta);
    fn(pre + "rel.wq", p.rel_wq);
    fn(pre + "rel.wk", p.rel_wk);
    fn(pre + "rel.wv", p.rel_wv);
    fn(pre + "rel.key", p.rel_key);
    fn(pre + "rel.value", p.rel_value);
  }
  fn("head.w", head_w);
  fn("head.b", head_b);
}

void ModelParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ModelParams*>(this)->visit(
      [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
}

ModelParams ModelParams::clone(bool requires_grad) const {
  ModelParams copy = *this;
  copy.visit([&](const std::string&, Tensor& t) { t = t.detach_copy(requires_grad); });
  return copy;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

namespace {

Tensor uniform(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return uniform(rng, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

// Tables get rows of roughly unit norm.
Tensor table(Rng& rng, std::size_t rows, std::size_t width) {
  return uniform(rng, rows, width, std::sqrt(3.0 / static_cast<double>(width)));
}

Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor::zeros({rows, cols}, true); }
Tensor ones(std::size_t cols) { return Tensor::full({1, cols}, 1.0, true); }

}  // namespace

ModelParams init_params(const ModelConfig& c) {
  c.validate();
  Rng rng(c.init_seed);
  const std::size_t d = c.d_model, dk = c.head_dim();
  ModelParams p;
  p.token = table(rng, c.vocab_size, d);
  p.position = table(rng, c.max_seq_len, d);
  p.segment = table(rng, 3, d);
  p.index = table(rng, c.max_objects + c.max_scenes, c.index_dim);
  p.scene_active = table(rng, 2, c.flag_dim);
  p.prev_mentioned = table(rng, 2, c.flag_dim);
  p.object_w = weight(rng, object_concat_dim(c), d);
  p.object_b = zeros(1, d);
  p.scene_w = weight(rng, scene_concat_dim(c), d);
  p.scene_b = zeros(1, d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    LayerParams lp;
    lp.wq = weight(rng, d, d);
    lp.wk = weight(rng, d, d);
    lp.wv = weight(rng, d, d);
    lp.wo = weight(rng, d, d);
    lp.bo = zeros(1, d);
    lp.ln1_gain = ones(d);
    lp.ln1_shift = zeros(1, d);
    lp.ff_w1 = weight(rng, d, c.ff_dim);
    lp.ff_b1 = zeros(1, c.ff_dim);
    lp.ff_w2 = weight(rng, c.ff_dim, d);
    lp.ff_b2 = zeros(1, d);
    lp.ln2_gain = ones(d);
    lp.ln2_shift = zeros(1, d);
    lp.beta = zeros(c.heads, kNumRelations);
    lp.rel_wq = weight(rng, d, d);
    lp.rel_wk = weight(rng, d, d);
    lp.rel_wv = weight(rng, d, d);
    lp.rel_key = zeros(kNumRelations, dk);
    lp.rel_value = zeros(kNumRelations, dk);
    p.layers.push_back(std::move(lp));
  }
  p.head_w = weight(rng, d, 1);
  p.head_b = zeros(1, 1);
  return p;
}

void perturb_relation_params(ModelParams& params, std::uint64_t seed, double bound) {
  Rng rng(seed);
  for (auto& layer : params.layers) {
    for (Tensor* t : {&layer.beta, &layer.rel_key, &layer.rel_value}) {
      for (double& v : t->mutable_data()) v = rng.uniform(-bound, bound);
    }
  }
}

}  // namespace mmcoref
