#include "mmcoref/embeddings.hpp"

#include <algorithm>
#include <numeric>

#include "mmcoref/errors.hpp"
#include "mmcoref/kernels.hpp"

namespace mmcoref {

std::vector<LayoutBlock> object_concat_layout(const ModelConfig& c) {
  std::vector<LayoutBlock> blocks;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::size_t width) {
    blocks.push_back({std::move(name), offset, width});
    offset += width;
  };
  if (c.use_index) push("index", c.index_dim);
  for (const auto& ch : c.image_channels) push(ch.name, ch.dim);
  if (c.use_coords) push("coords", 3);
  if (c.use_kb) {
    for (const auto& ch : c.kb_channels) push(ch.name, ch.dim);
  }
  if (c.use_scene_active) push("scene_active", c.flag_dim);
  if (c.use_prev_mentioned) push("prev_mentioned", c.flag_dim);
  return blocks;
}

std::vector<LayoutBlock> scene_concat_layout(const ModelConfig& c) {
  std::vector<LayoutBlock> blocks;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::size_t width) {
    blocks.push_back({std::move(name), offset, width});
    offset += width;
  };
  if (c.use_index) push("index", c.index_dim);
  for (const auto& ch : c.image_channels) push(ch.name, ch.dim);
  if (c.use_scene_active) push("scene_active", c.flag_dim);
  if (c.use_prev_mentioned) push("prev_mentioned", c.flag_dim);
  return blocks;
}

namespace {

std::size_t total_width(const std::vector<LayoutBlock>& blocks) {
  std::size_t w = 0;
  for (const auto& b : blocks) w += b.width;
  return w;
}

}  // namespace

std::size_t object_concat_dim(const ModelConfig& c) { return total_width(object_concat_layout(c)); }
std::size_t scene_concat_dim(const ModelConfig& c) { return total_width(scene_concat_layout(c)); }

// ---- text ----------------------------------------------------------------------

TextTokens tokenize_dialog(const Dialog& dialog, std::size_t turn_index, const Vocab& vocab,
                           std::size_t max_text_len) {
  if (turn_index >= dialog.turns.size()) {
    throw ContractError("turn index " + std::to_string(turn_index) + " out of range for dialog '" +
                        dialog.dialog_id + "'");
  }
  if (max_text_len < 2) throw ContractError("max_text_len must be at least 2");
  std::vector<std::vector<std::size_t>> turns;
  for (std::size_t t = 0; t <= turn_index; ++t) {
    const auto& turn = dialog.turns[t];
    const auto words = tokenize(turn.text);
    if (t == turn_index && words.empty()) {
      throw ContractError("dialog '" + dialog.dialog_id + "' turn " + std::to_string(t) +
                          ": current user turn is empty");
    }
    std::vector<std::size_t> ids{turn.speaker == Speaker::kUser ? Vocab::kUser : Vocab::kSystem};
    for (const auto& w : words) ids.push_back(vocab.id(w));
    turns.push_back(std::move(ids));
  }

  TextTokens out;
  std::size_t total = 0;
  for (const auto& t : turns) total += t.size();
  std::size_t first = 0;
  while (total > max_text_len && first + 1 < turns.size()) {
    total -= turns[first].size();
    ++first;
  }
  out.dropped_turns = first;
  for (std::size_t t = first; t < turns.size(); ++t) {
    out.ids.insert(out.ids.end(), turns[t].begin(), turns[t].end());
  }
  if (out.ids.size() > max_text_len) out.ids.resize(max_text_len);
  const std::size_t n = out.ids.size();
  out.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.positions[i] = n - 1 - i;
  return out;
}

// ---- instances -------------------------------------------------------------------

namespace {

void append_channels(std::vector<double>& row, const FeatureBank& bank,
                     const std::vector<ChannelSpec>& channels, const std::string& feature_id) {
  for (const auto& ch : channels) {
    const auto vec = bank.lookup(ch.name, feature_id);
    if (vec.size() != ch.dim) {
      throw ValidationError("channel '" + ch.name + "' has dimension " + std::to_string(vec.size()) +
                            " but the model expects " + std::to_string(ch.dim));
    }
    row.insert(row.end(), vec.begin(), vec.end());
  }
}

std::size_t channel_width(const std::vector<ChannelSpec>& channels) {
  std::size_t w = 0;
  for (const auto& ch : channels) w += ch.dim;
  return w;
}

std::vector<std::size_t> to_index(const std::vector<int>& flags) {
  return {flags.begin(), flags.end()};
}

RelationMasks shift_masks(const RelationMasks& in, std::size_t at, std::size_t count) {
  RelationMasks out = RelationMasks::empty(in.size + count);
  auto remap = [&](std::size_t p) { return p >= at ? p + count : p; };
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    for (std::size_t i = 0; i < in.size; ++i) {
      for (std::size_t j = 0; j < in.size; ++j) {
        const double v = in.g[r][i * in.size + j];
        if (v != 0.0) out.g[r][remap(i) * out.size + remap(j)] = v;
      }
    }
  }
  return out;
}

}  // namespace

Instance build_instance(const Dataset& dataset, const Dialog& dialog, std::size_t turn_index,
                        const FeatureBank& bank, const Vocab& vocab, const ModelConfig& config) {
  if (turn_index >= dialog.turns.size() || dialog.turns[turn_index].speaker != Speaker::kUser) {
    throw ContractError("instance turn " + std::to_string(turn_index) + " of dialog '" +
                        dialog.dialog_id + "' is not a user turn");
  }
  const Turn& turn = dialog.turns[turn_index];
  Instance inst;
  inst.dialog_id = dialog.dialog_id;
  inst.turn_index = turn_index;
  inst.tag = turn.tag;
  inst.active_scene = turn.scene_id;
  inst.text = tokenize_dialog(dialog, turn_index, vocab, config.max_text_len);

  const auto candidates = candidate_objects(dataset, dialog, turn_index);
  const auto active = compute_scene_active(dataset, dialog, turn_index);
  inst.object_active = to_index(active.objects);
  inst.object_prev = to_index(compute_prev_mentioned(dataset, dialog, turn_index));
  inst.scene_active = to_index(active.scenes);
  inst.scene_prev = to_index(compute_scene_prev_mentioned(dataset, dialog, turn_index));
  inst.scene_ids = visited_scenes(dialog, turn_index);

  const std::size_t img_w = channel_width(config.image_channels);
  const std::size_t kb_w = channel_width(config.kb_channels);
  std::vector<double> image, coords, kb;
  for (const auto& ref : candidates) {
    const auto& o = *ref.object;
    if (o.index < 0 || static_cast<std::size_t>(o.index) >= config.max_objects) {
      throw LookupError("object index " + std::to_string(o.index) + " outside the index table (" +
                        std::to_string(config.max_objects) + " object rows)");
    }
    inst.object_indices.push_back(o.index);
    inst.object_scenes.push_back(ref.scene->scene_id);
    inst.object_index_rows.push_back(static_cast<std::size_t>(o.index));
    append_channels(image, bank, config.image_channels, o.feature_id);
    coords.insert(coords.end(), o.coords.begin(), o.coords.end());
    append_channels(kb, bank, config.kb_channels, o.feature_id);
    inst.layout.objects.push_back({ref.scene->scene_id, o.index});
  }
  const std::size_t n_obj = candidates.size();
  inst.object_image = Tensor::from({n_obj, img_w}, std::move(image));
  inst.object_coords = Tensor::from({n_obj, 3}, std::move(coords));
  inst.object_kb = Tensor::from({n_obj, kb_w}, std::move(kb));

  std::vector<double> scene_image;
  for (std::size_t j = 0; j < inst.scene_ids.size(); ++j) {
    if (j >= config.max_scenes) {
      throw LookupError("dialog '" + dialog.dialog_id + "' visits more than " +
                        std::to_string(config.max_scenes) + " scenes");
    }
    inst.scene_index_rows.push_back(config.max_objects + j);
    append_channels(scene_image, bank, config.image_channels,
                    dataset.scene(inst.scene_ids[j]).feature_id);
  }
  inst.scene_image = Tensor::from({inst.scene_ids.size(), img_w}, std::move(scene_image));

  inst.layout.text_len = inst.text.ids.size();
  inst.layout.scenes = inst.scene_ids;
  inst.masks = build_relation_masks(dataset, inst.layout);

  if (turn.gold_mentions) {
    for (int idx : inst.object_indices) {
      const auto& gold = *turn.gold_mentions;
      inst.labels.push_back(std::find(gold.begin(), gold.end(), idx) != gold.end() ? 1.0 : 0.0);
    }
  }
  return inst;
}

std::vector<Instance> build_instances(const Dataset& dataset, const FeatureBank& bank,
                                      const Vocab& vocab, const ModelConfig& config) {
  std::vector<Instance> out;
  for (const auto& d : dataset.dialogs) {
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].speaker == Speaker::kUser) {
        out.push_back(build_instance(dataset, d, t, bank, vocab, config));
      }
    }
  }
  return out;
}

Instance with_text_padding(const Instance& instance, std::size_t count) {
  Instance out = instance;
  const std::size_t at = instance.text_len();
  out.pad_tokens += count;
  out.layout.text_len += count;
  out.masks = shift_masks(instance.masks, at, count);
  return out;
}

Tensor padding_mask(const Instance& inst) {
  if (inst.pad_tokens == 0) return {};
  std::vector<double> mask(inst.seq_len(), 0.0);
  for (std::size_t p = inst.text.ids.size(); p < inst.text_len(); ++p) {
    mask[p] = kernels::kMaskedScore;
  }
  const std::size_t n = mask.size();
  return Tensor::from({1, n}, std::move(mask));
}

// ---- embedding -------------------------------------------------------------------

namespace {

Tensor repeat_row(const Tensor& table, std::size_t row, std::size_t count) {
  std::vector<std::size_t> ids(count, row);
  return embedding_lookup(table, ids);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

Tensor embed_text(const Instance& inst, const ModelParams& p) {
  std::vector<std::size_t> ids = inst.text.ids;
  std::vector<std::size_t> positions = inst.text.positions;
  const std::size_t real = ids.size();
  for (std::size_t k = 0; k < inst.pad_tokens; ++k) {
    ids.push_back(Vocab::kPad);
    positions.push_back(real + k);
  }
  Tensor tokens = embedding_lookup(p.token, ids);
  return add(add(tokens, embedding_lookup(p.position, positions)),
             repeat_row(p.segment, kTextSegment, ids.size()));
}

Tensor object_concat(const Instance& inst, const ModelParams& p, const ModelConfig& c) {
  std::vector<Tensor> parts;
  if (c.use_index) parts.push_back(embedding_lookup(p.index, inst.object_index_rows));
  if (inst.object_image.cols() > 0) parts.push_back(inst.object_image);
  if (c.use_coords) parts.push_back(inst.object_coords);
  if (c.use_kb && inst.object_kb.cols() > 0) parts.push_back(inst.object_kb);
  if (c.use_scene_active) parts.push_back(embedding_lookup(p.scene_active, inst.object_active));
  if (c.use_prev_mentioned) parts.push_back(embedding_lookup(p.prev_mentioned, inst.object_prev));
  if (parts.empty()) throw ContractError("object embedding has no enabled blocks");
  return concat(parts, 1);
}

Tensor embed_objects(const Instance& inst, const ModelParams& p, const ModelConfig& c) {
  const std::size_t n = inst.num_objects();
  Tensor projected = dense(object_concat(inst, p, c), p.object_w, p.object_b);
  return add(add(projected, embedding_lookup(p.position, iota(n))),
             repeat_row(p.segment, kObjectSegment, n));
}

Tensor scene_concat(const Instance& inst, const ModelParams& p, const ModelConfig& c) {
  std::vector<Tensor> parts;
  if (c.use_index) parts.push_back(embedding_lookup(p.index, inst.scene_index_rows));
  if (inst.scene_image.cols() > 0) parts.push_back(inst.scene_image);
  if (c.use_scene_active) parts.push_back(embedding_lookup(p.scene_active, inst.scene_active));
  if (c.use_prev_mentioned) parts.push_back(embedding_lookup(p.prev_mentioned, inst.scene_prev));
  if (parts.empty()) throw ContractError("scene embedding has no enabled blocks");
  return concat(parts, 1);
}

Tensor embed_scenes(const Instance& inst, const ModelParams& p, const ModelConfig& c) {
  const std::size_t n = inst.num_scenes();
  Tensor projected = dense(scene_concat(inst, p, c), p.scene_w, p.scene_b);
  return add(add(projected, embedding_lookup(p.position, iota(n))),
             repeat_row(p.segment, kSceneSegment, n));
}

EncoderInput embed_instance(const Instance& inst, const ModelParams& p, const ModelConfig& c) {
  EncoderInput in;
  in.text = embed_text(inst, p);
  in.objects = embed_objects(inst, p, c);
  in.scenes = embed_scenes(inst, p, c);
  in.sequence = concat({in.text, in.objects, in.scenes}, 0);
  return in;
}

}  // namespace mmcoref
