#include "mmcoref/encoder.hpp"

#include <cmath>

#include "mmcoref/errors.hpp"
#include "mmcoref/kernels.hpp"

namespace mmcoref {

std::vector<Tensor> relation_mask_tensors(const RelationMasks& masks) {
  std::vector<Tensor> out;
  for (const auto& g : masks.g) out.push_back(Tensor::from({masks.size, masks.size}, g));
  return out;
}

Tensor attention_head(const Tensor& h, const LayerParams& layer, std::size_t head,
                      const ModelConfig& config, const std::vector<Tensor>* relations,
                      const Tensor& pad_mask, LayerTrace* trace) {
  const std::size_t dk = config.head_dim();
  const std::size_t col = head * dk;
  Tensor q = matmul(h, slice_cols(layer.wq, col, dk));
  Tensor k = matmul(h, slice_cols(layer.wk, col, dk));
  Tensor v = matmul(h, slice_cols(layer.wv, col, dk));
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor biased = scores;
  if (relations) biased = add(scores, weighted_sum(slice_rows(layer.beta, head, 1), *relations));
  Tensor weights = softmax_rows(biased, pad_mask);
  if (trace) {
    trace->scores.push_back(scores);
    trace->biased_scores.push_back(biased);
    trace->attention.push_back(weights);
  }
  return matmul(weights, v);
}

Tensor self_attention(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                      const std::vector<Tensor>* relations, const Tensor& pad_mask,
                      LayerTrace* trace) {
  std::vector<Tensor> heads;
  for (std::size_t hd = 0; hd < config.heads; ++hd) {
    heads.push_back(attention_head(h, layer, hd, config, relations, pad_mask, trace));
  }
  return dense(concat(heads, 1), layer.wo, layer.bo);
}

Tensor relation_aware_layer(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                            const RelationMasks& masks, const Tensor& pad_mask, LayerTrace* trace) {
  const std::size_t n = h.rows();
  if (masks.size != n) {
    throw DimensionError("relation masks cover " + std::to_string(masks.size) +
                         " positions, sequence has " + std::to_string(n));
  }
  std::array<bool, kNumRelations> active{};
  bool any = false;
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    for (double v : masks.g[r]) {
      if (v != 0.0) {
        active[r] = true;
        any = true;
        break;
      }
    }
  }
  if (trace) trace->relation_weights.assign(config.heads, {});
  if (!any) return h;

  const std::size_t dk = config.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor ones_row = Tensor::full({1, n}, 1.0);
  const Tensor ones_col = Tensor::full({n, 1}, 1.0);
  std::array<Tensor, kNumRelations> g;
  std::array<Tensor, kNumRelations> pre_mask;
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    if (!active[r]) continue;
    g[r] = Tensor::from({n, n}, masks.g[r]);
    if (config.rel_mask_before_softmax) {
      std::vector<double> m(n * n);
      for (std::size_t i = 0; i < n * n; ++i) {
        m[i] = masks.g[r][i] != 0.0 ? 0.0 : kernels::kMaskedScore;
        if (pad_mask && pad_mask.data()[i % n] <= kernels::kMaskedThreshold) {
          m[i] = kernels::kMaskedScore;
        }
      }
      pre_mask[r] = Tensor::from({n, n}, std::move(m));
    }
  }

  Tensor q_all = matmul(h, layer.rel_wq);
  Tensor k_all = matmul(h, layer.rel_wk);
  Tensor v_all = matmul(h, layer.rel_wv);
  std::vector<Tensor> heads;
  for (std::size_t hd = 0; hd < config.heads; ++hd) {
    const std::size_t col = hd * dk;
    Tensor q = slice_cols(q_all, col, dk);
    Tensor k = slice_cols(k_all, col, dk);
    Tensor v = slice_cols(v_all, col, dk);
    Tensor base = matmul(q, transpose(k));
    Tensor head_out;
    for (std::size_t r = 0; r < kNumRelations; ++r) {
      if (!active[r]) continue;
      Tensor key_r = slice_rows(layer.rel_key, r, 1);
      Tensor value_r = slice_rows(layer.rel_value, r, 1);
      // q_i . (k_j + g_ij k_r) = q_i . k_j + g_ij (q_i . k_r)
      Tensor q_dot_kr = matmul(q, transpose(key_r));
      Tensor scores = scale(add(base, mul(matmul(q_dot_kr, ones_row), g[r])), inv_sqrt);
      Tensor u = config.rel_mask_before_softmax ? softmax_rows(scores, pre_mask[r])
                                                : softmax_rows(scores, pad_mask);
      Tensor gated = mul(u, g[r]);
      // sum_j g_ij u_ij (v_j + g_ij v_r) = (g o u) V + rowsum(g o u) v_r
      Tensor part = add(matmul(gated, v), matmul(matmul(gated, ones_col), value_r));
      head_out = head_out ? add(head_out, part) : part;
      if (trace) trace->relation_weights[hd][r] = u;
    }
    heads.push_back(head_out);
  }
  Tensor contribution = concat(heads, 1);
  if (trace) trace->relation_contribution = contribution;
  return add(h, contribution);
}

Tensor encoder_layer(const Tensor& h, const LayerParams& layer, const ModelConfig& config,
                     AttentionMode mode, const RelationMasks& masks,
                     const std::vector<Tensor>& mask_tensors, const Tensor& pad_mask,
                     LayerTrace* trace) {
  const std::vector<Tensor>* relations = mode == AttentionMode::kAttnBias ? &mask_tensors : nullptr;
  Tensor attn = self_attention(h, layer, config, relations, pad_mask, trace);
  Tensor h1 = layer_norm(add(h, attn), layer.ln1_gain, layer.ln1_shift);
  if (mode == AttentionMode::kRelAware) h1 = relation_aware_layer(h1, layer, config, masks, pad_mask, trace);
  Tensor ff = dense(gelu(dense(h1, layer.ff_w1, layer.ff_b1)), layer.ff_w2, layer.ff_b2);
  Tensor out = layer_norm(add(h1, ff), layer.ln2_gain, layer.ln2_shift);
  if (trace) trace->output = out;
  return out;
}

std::pair<Tensor, Tensor> classify(const Tensor& object_hidden, const Tensor& head_w,
                                   const Tensor& head_b) {
  if (object_hidden.rows() == 0) throw ContractError("classify: object span is empty");
  Tensor logits = dense(object_hidden, head_w, head_b);
  return {logits, sigmoid(logits)};
}

ForwardTrace encode(const Tensor& sequence, std::size_t object_begin, std::size_t num_objects,
                    const RelationMasks& masks, const Tensor& pad_mask, const ModelParams& params,
                    const ModelConfig& config, AttentionMode mode) {
  if (masks.size != sequence.rows()) {
    throw DimensionError("relation masks cover " + std::to_string(masks.size) +
                         " positions, sequence has " + std::to_string(sequence.rows()));
  }
  std::vector<Tensor> mask_tensors;
  if (mode == AttentionMode::kAttnBias) mask_tensors = relation_mask_tensors(masks);
  ForwardTrace trace;
  Tensor h = sequence;
  for (const auto& layer : params.layers) {
    trace.layers.emplace_back();
    h = encoder_layer(h, layer, config, mode, masks, mask_tensors, pad_mask, &trace.layers.back());
  }
  trace.hidden = h;
  auto [logits, probs] = classify(slice_rows(h, object_begin, num_objects), params.head_w, params.head_b);
  trace.logits = logits;
  trace.probs = probs;
  return trace;
}

ForwardTrace forward(const Instance& instance, const ModelParams& params, const ModelConfig& config,
                     AttentionMode mode) {
  if (instance.seq_len() > config.max_seq_len) {
    throw ContractError("sequence of " + std::to_string(instance.seq_len()) +
                        " positions exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  if (instance.num_objects() == 0) throw ContractError("instance has no candidate objects");
  EncoderInput input = embed_instance(instance, params, config);
  return encode(input.sequence, instance.text_len(), instance.num_objects(), instance.masks,
                padding_mask(instance), params, config, mode);
}

}  // namespace mmcoref
