#pragma once

// Single-stream transformer over [text; objects; scenes] with three attention
// modes and the per-object sigmoid head.
//
//   vanilla    softmax(Q K^T / sqrt(d_k)) V per head
//   attn_bias  adds sum_r beta[layer, head, r] * g^r to the scores
//   rel_aware  after each attention block, h += sum_r g^r o u^r (V + g^r v_r),
//              u^r = softmax(Q (K + g^r k_r)^T / sqrt(d_k)); the mask is
//              applied after the softmax, so masked rows are not renormalised

#include <array>
#include <vector>

#include "mmcoref/data_model.hpp"
#include "mmcoref/embeddings.hpp"
#include "mmcoref/model.hpp"
#include "mmcoref/tensor.hpp"

namespace mmcoref {

struct LayerTrace {
  std::vector<Tensor> scores;         // alpha per head
  std::vector<Tensor> biased_scores;  // alpha' per head (equals scores outside attn_bias)
  std::vector<Tensor> attention;      // post-softmax weights per head
  // u^r per head; empty tensors for relations with no edges.
  std::vector<std::array<Tensor, kNumRelations>> relation_weights;
  Tensor relation_contribution;       // rel_aware only
  Tensor output;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Tensor hidden;  // H, n x d_model
  Tensor logits;  // Z, I x 1
  Tensor probs;   // Y-hat, I x 1
};

/// The four g^r matrices as constant tensors.
std::vector<Tensor> relation_mask_tensors(const RelationMasks& masks);

/// One attention head of layer `layer`. `relations` is null for plain
/// attention; otherwise beta[head, r] * g^r is added to the scores.
/// `pad_mask` is an optional 1 x n additive key mask.
Tensor attention_head(const Tensor& h, const LayerParams& layer, std::size_t head,
                      const ModelConfig& config, const std::vector<Tensor>* relations,
                      const Tensor& pad_mask, LayerTrace* trace = nullptr);

/// Multi-head attention followed by the output projection.
Tensor self_attention(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                      const std::vector<Tensor>* relations, const Tensor& pad_mask,
                      LayerTrace* trace = nullptr);

/// h + relation-aware contribution. Returns `h` itself when no relation has
/// an edge.
Tensor relation_aware_layer(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                            const RelationMasks& masks, const Tensor& pad_mask,
                            LayerTrace* trace = nullptr);

/// One full transformer layer (attention, add&norm, [relation layer],
/// feed-forward, add&norm).
Tensor encoder_layer(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                     AttentionMode mode, const RelationMasks& masks,
                     const std::vector<Tensor>& mask_tensors, const Tensor& pad_mask,
                     LayerTrace* trace = nullptr);

/// Encodes an already embedded sequence.
ForwardTrace encode(const Tensor& sequence, std::size_t object_begin, std::size_t num_objects,
                    const RelationMasks& masks, const Tensor& pad_mask, const ModelParams& params,
                    const ModelConfig& config, AttentionMode mode);

/// Sigmoid of one dense layer applied to each object hidden state.
/// Returns {logits, probabilities}, both I x 1.
std::pair<Tensor, Tensor> classify(const Tensor& object_hidden, const Tensor& head_w,
                                   const Tensor& head_b);

/// Embeds and encodes one instance. ContractError when the sequence exceeds
/// max_seq_len or the object span is empty.
ForwardTrace forward(const Instance& instance, const ModelParams& params, const ModelConfig& config,
                     AttentionMode mode);
inline ForwardTrace forward(const Instance& instance, const Model& model) {
  return forward(instance, model.params, model.config, model.config.mode);
}

}  // namespace mmcoref
