#pragma once

// Model configuration, vocabulary and the full trainable parameter set.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mmcoref/tensor.hpp"

namespace mmcoref {

enum class AttentionMode { kVanilla, kAttnBias, kRelAware };

std::string_view to_string(AttentionMode mode);
AttentionMode parse_attention_mode(std::string_view text);  // throws ContractError

struct ChannelSpec {
  std::string name;
  std::size_t dim = 0;
  bool operator==(const ChannelSpec&) const = default;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 128;
  std::size_t max_text_len = 64;
  std::size_t max_seq_len = 128;
  std::size_t max_objects = 32;  // object-index rows; scene rows follow
  std::size_t max_scenes = 4;
  std::size_t index_dim = 8;
  std::size_t flag_dim = 8;
  std::size_t vocab_size = 0;  // filled from the vocabulary

  std::vector<ChannelSpec> image_channels;
  std::vector<ChannelSpec> kb_channels;

  bool use_index = true;
  bool use_coords = true;
  bool use_kb = true;
  bool use_scene_active = true;
  bool use_prev_mentioned = true;

  AttentionMode mode = AttentionMode::kVanilla;
  // Experimental: mask relation scores before the softmax instead of after.
  bool rel_mask_before_softmax = false;

  std::uint64_t init_seed = 1;

  std::size_t head_dim() const { return d_model / heads; }
  /// Throws ContractError on inconsistent sizes.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are ignored.
ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {});

// ---- vocabulary --------------------------------------------------------------

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kUser = 2;
  static constexpr std::size_t kSystem = 3;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;  // kUnk when absent
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Lowercased runs of letters, digits and apostrophes; every other
/// non-space character is a token on its own.
std::vector<std::string> tokenize(std::string_view text);

struct Dataset;
Vocab build_vocab(const Dataset& train);

// ---- parameters ----------------------------------------------------------------

struct LayerParams {
  Tensor wq, wk, wv;  // d_model x d_model; head h owns columns [h*d_k, (h+1)*d_k)
  Tensor wo, bo;
  Tensor ln1_gain, ln1_shift;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor ln2_gain, ln2_shift;
  Tensor beta;  // heads x 4, one scalar per (head, relation)
  // relation-aware layer following this attention block
  Tensor rel_wq, rel_wk, rel_wv;  // d_model x d_model, same head split
  Tensor rel_key, rel_value;      // 4 x d_k, shared by all heads
};

struct ModelParams {
  Tensor token, position, segment;
  Tensor index, scene_active, prev_mentioned;
  Tensor object_w, object_b;
  Tensor scene_w, scene_b;
  std::vector<LayerParams> layers;
  Tensor head_w, head_b;

  /// Visits every parameter with its stable name, in checkpoint order.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  /// Deep copy with fresh leaves (no shared storage, no gradients).
  ModelParams clone(bool requires_grad) const;
  std::size_t count() const;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer-norm gains 1; biases,
/// beta, relation key/value vectors 0.
ModelParams init_params(const ModelConfig& config);

/// Overwrites beta and the relation key/value vectors with U(-bound, bound)
/// draws, so the relation paths carry signal before any training.
void perturb_relation_params(ModelParams& params, std::uint64_t seed, double bound);

struct Model {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
};

}  // namespace mmcoref
