// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Compact transformer encoder for spectrogram classification: patch + CLS +
// position embedding, pre-norm MSA/MLP blocks with residuals, and a 4-class
// head. The beit variant adds a learnable per-head relative position bias to
// the attention scores; everything else is shared.

#ifndef SERKIT_VIT_HPP_
#define SERKIT_VIT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ser/melspec.hpp"
#include "ser/tensor.hpp"

namespace ser::vit {

SERKIT_DEFINE_ERROR(BadMagic);
SERKIT_DEFINE_ERROR(VersionUnsupported);
SERKIT_DEFINE_ERROR(CrcMismatch);
SERKIT_DEFINE_ERROR(ConfigMismatch);

enum class Variant { kVit, kBeit };

const char* variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct ModelConfig {
  int image_size = 224;
  int channels = 3;
  int patch_size = 16;
  int embed_dim = 64;
  int heads = 4;
  int depth = 4;
  int mlp_dim = 128;
  int n_classes = 4;
  Variant variant = Variant::kVit;

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int seq_len() const { return n_patches() + 1; }
  int head_dim() const { return embed_dim / heads; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  // Relative offsets (2g-1)^2 plus three special entries for the CLS row,
  // column, and diagonal.
  int rel_table_size() const {
    const int span = 2 * grid() - 1;
    return span * span + 3;
  }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Desk-scale config that trains on CPU in minutes.
ModelConfig toy_config(Variant variant = Variant::kVit);
// ViT-Base/16 at 224: D=768, 12 heads, 12 blocks, MLP 3072.
ModelConfig base_config(Variant variant = Variant::kVit);

template <typename S>
struct BlockParamsT {
  nn::TensorT<S> qkv;       // [D x 3*Dh*k], head h owns columns [3*Dh*h, 3*Dh*(h+1))
  nn::TensorT<S> msa;       // [k*Dh x D]
  nn::TensorT<S> ln1_gain, ln1_bias;  // [D]
  nn::TensorT<S> ln2_gain, ln2_bias;  // [D]
  nn::TensorT<S> mlp_w1;    // [D x mlp_dim]
  nn::TensorT<S> mlp_w2;    // [mlp_dim x D]
  nn::TensorT<S> rel_bias;  // beit: [k x rel_table_size], otherwise undefined
};

template <typename S>
struct ModelT {
  ModelConfig config;
  nn::TensorT<S> patch_proj;  // [P*P*C x D]
  nn::TensorT<S> patch_bias;  // [D]
  nn::TensorT<S> cls_token;   // [1 x D]
  nn::TensorT<S> pos_embed;   // [(N+1) x D]
  std::vector<BlockParamsT<S>> blocks;
  nn::TensorT<S> final_ln_gain, final_ln_bias;  // [D]
  nn::TensorT<S> head;        // [D x n_classes]
  std::vector<int> rel_index;  // [(N+1)^2] into the bias table, beit only

  // All learnable tensors in checkpoint order.
  std::vector<nn::TensorT<S>> parameters() const;
  void zero_grads();
};

using Model = ModelT<float>;

// CLS/patch-pair index map into the relative position bias table.
std::vector<int> relative_position_index(const ModelConfig& config);

// Truncated-normal (sigma 0.02) projections and position embeddings, zero
// biases and CLS, unit layer-norm gains, zero relative bias.
template <typename S>
ModelT<S> init_model(const ModelConfig& config, std::uint64_t seed);

// Non-overlapping P x P x C patches, flattened row-major; a constant leaf of
// shape [N x P*P*C].
template <typename S>
nn::TensorT<S> patchify(const melspec::Image& image, const ModelConfig& config);

// [x_CLS; patches * W + b] + pos_embed -> [(N+1) x D]
template <typename S>
nn::TensorT<S> embed_sequence(const nn::TensorT<S>& patches, const ModelT<S>& model);

// softmax(q k^T / sqrt(Dh) [+ bias]) v for one head. `u_qkv` is the per-head
// [D x 3*Dh] slice; `bias`, when defined, is an [(N+1) x (N+1)] score offset.
template <typename S>
nn::TensorT<S> self_attention(const nn::TensorT<S>& z_norm, const nn::TensorT<S>& u_qkv,
                              int head_dim, const nn::TensorT<S>& bias = {});

// Per-head attention outputs concatenated and projected by U_msa.
template <typename S>
nn::TensorT<S> multi_head_attention(const nn::TensorT<S>& z_norm,
                                    const BlockParamsT<S>& block,
                                    const ModelConfig& config,
                                    const std::vector<int>& rel_index);

// One pre-norm block: h = MSA(LN(z)) + z; out = h + MLP(LN(h)).
template <typename S>
nn::TensorT<S> encoder_block(const nn::TensorT<S>& z, const BlockParamsT<S>& block,
                             const ModelConfig& config,
                             const std::vector<int>& rel_index);

// Embedding, `depth` blocks, final layer norm -> [(N+1) x D].
template <typename S>
nn::TensorT<S> encode(const nn::TensorT<S>& patches, const ModelT<S>& model);

// Full forward pass to 4 logits (shape [1 x n_classes]).
template <typename S>
nn::TensorT<S> forward_logits(const melspec::Image& image, const ModelT<S>& model);

std::vector<float> forward_logit_values(const melspec::Image& image, const Model& model);

// Final-layer-norm CLS vector, for embedding dumps.
std::vector<float> cls_embedding(const melspec::Image& image, const Model& model);

// Argmax with ties broken toward the lowest class index.
int argmax_class(const std::vector<float>& logits);

enum class FlopMode {
  kParametricMac,  // MACs of the learned linear maps only
  kTotalMac,       // adds the two attention matmuls per block
};

// Closed-form multiply-accumulate count for one forward pass of one image.
std::uint64_t count_macs(const ModelConfig& config, FlopMode mode);
double count_flops_gmac(const ModelConfig& config, FlopMode mode);

// Checkpoint file: magic SERC, version u32, length-prefixed config JSON,
// parameter arrays as little-endian float32 in declaration order, trailing
// CRC32 of all prior bytes.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Template definitions.

template <typename S>
std::vector<nn::TensorT<S>> ModelT<S>::parameters() const {
  std::vector<nn::TensorT<S>> params = {patch_proj, patch_bias, cls_token, pos_embed};
  for (const auto& b : blocks) {
    params.push_back(b.qkv);
    params.push_back(b.msa);
    params.push_back(b.ln1_gain);
    params.push_back(b.ln1_bias);
    params.push_back(b.ln2_gain);
    params.push_back(b.ln2_bias);
    params.push_back(b.mlp_w1);
    params.push_back(b.mlp_w2);
    if (config.variant == Variant::kBeit) params.push_back(b.rel_bias);
  }
  params.push_back(final_ln_gain);
  params.push_back(final_ln_bias);
  params.push_back(head);
  return params;
}

template <typename S>
void ModelT<S>::zero_grads() {
  for (auto& p : parameters()) p.zero_grad();
}

template <typename S>
ModelT<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "init"));
  auto trunc = [&rng](std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<S> data(n);
    for (auto& v : data) v = static_cast<S>(rng.truncated_normal(0.02));
    return nn::TensorT<S>::leaf(std::move(shape), std::move(data), true);
  };
  auto constant = [](std::vector<int> shape, S value) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return nn::TensorT<S>::leaf(std::move(shape), std::vector<S>(n, value), true);
  };

  const int d = config.embed_dim;
  ModelT<S> m;
  m.config = config;
  m.patch_proj = trunc({config.patch_dim(), d});
  m.patch_bias = constant({d}, S(0));
  m.cls_token = constant({1, d}, S(0));
  m.pos_embed = trunc({config.seq_len(), d});
  for (int i = 0; i < config.depth; ++i) {
    BlockParamsT<S> b;
    b.qkv = trunc({d, 3 * d});
    b.msa = trunc({d, d});
    b.ln1_gain = constant({d}, S(1));
    b.ln1_bias = constant({d}, S(0));
    b.ln2_gain = constant({d}, S(1));
    b.ln2_bias = constant({d}, S(0));
    b.mlp_w1 = trunc({d, config.mlp_dim});
    b.mlp_w2 = trunc({config.mlp_dim, d});
    if (config.variant == Variant::kBeit) {
      b.rel_bias = constant({config.heads, config.rel_table_size()}, S(0));
    }
    m.blocks.push_back(std::move(b));
  }
  m.final_ln_gain = constant({d}, S(1));
  m.final_ln_bias = constant({d}, S(0));
  m.head = trunc({d, config.n_classes});
  if (config.variant == Variant::kBeit) {
    m.rel_index = relative_position_index(config);
  }
  return m;
}

template <typename S>
nn::TensorT<S> patchify(const melspec::Image& image, const ModelConfig& config) {
  if (image.h != config.image_size || image.w != config.image_size ||
      image.c != config.channels) {
    throw nn::ShapeMismatch("patchify: image does not match model config");
  }
  const int g = config.grid();
  const int p = config.patch_size;
  std::vector<S> out(static_cast<std::size_t>(config.n_patches()) * config.patch_dim());
  std::size_t pos = 0;
  for (int py = 0; py < g; ++py) {
    for (int px = 0; px < g; ++px) {
      for (int dy = 0; dy < p; ++dy) {
        for (int dx = 0; dx < p; ++dx) {
          for (int ch = 0; ch < config.channels; ++ch) {
            out[pos++] = static_cast<S>(image.at(py * p + dy, px * p + dx, ch));
          }
        }
      }
    }
  }
  return nn::TensorT<S>::leaf({config.n_patches(), config.patch_dim()}, std::move(out));
}

template <typename S>
nn::TensorT<S> embed_sequence(const nn::TensorT<S>& patches, const ModelT<S>& model) {
  auto projected = nn::add_rowvec(nn::matmul(patches, model.patch_proj),
                                  model.patch_bias);
  auto seq = nn::concat_rows<S>({model.cls_token, projected});
  return nn::add(seq, model.pos_embed);
}

template <typename S>
nn::TensorT<S> self_attention(const nn::TensorT<S>& z_norm, const nn::TensorT<S>& u_qkv,
                              int head_dim, const nn::TensorT<S>& bias) {
  if (u_qkv.ndim() != 2 || u_qkv.dim(1) != 3 * head_dim) {
    throw nn::ShapeMismatch("self_attention: U_qkv must be [D x 3*head_dim]");
  }
  auto qkv = nn::matmul(z_norm, u_qkv);
  auto q = nn::slice_cols(qkv, 0, head_dim);
  auto k = nn::slice_cols(qkv, head_dim, head_dim);
  auto v = nn::slice_cols(qkv, 2 * head_dim, head_dim);
  auto scores = nn::scale(nn::matmul(q, nn::transpose2d(k)),
                          static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  if (bias.defined()) scores = nn::add(scores, bias);
  return nn::matmul(nn::softmax_lastdim(scores), v);
}

template <typename S>
nn::TensorT<S> multi_head_attention(const nn::TensorT<S>& z_norm,
                                    const BlockParamsT<S>& block,
                                    const ModelConfig& config,
                                    const std::vector<int>& rel_index) {
  const int dh = config.head_dim();
  const int n = z_norm.dim(0);
  std::vector<nn::TensorT<S>> heads;
  heads.reserve(config.heads);
  for (int h = 0; h < config.heads; ++h) {
    nn::TensorT<S> bias;
    if (config.variant == Variant::kBeit) {
      auto row = nn::reshape(nn::slice_rows(block.rel_bias, h, 1),
                             {config.rel_table_size()});
      bias = nn::gather_table(row, rel_index, n, n);
    }
    auto u_head = nn::slice_cols(block.qkv, 3 * dh * h, 3 * dh);
    heads.push_back(self_attention(z_norm, u_head, dh, bias));
  }
  return nn::matmul(nn::concat_cols(heads), block.msa);
}

template <typename S>
nn::TensorT<S> encoder_block(const nn::TensorT<S>& z, const BlockParamsT<S>& block,
                             const ModelConfig& config,
                             const std::vector<int>& rel_index) {
  auto z_norm = nn::layer_norm(z, block.ln1_gain, block.ln1_bias);
  auto h = nn::add(multi_head_attention(z_norm, block, config, rel_index), z);
  auto h_norm = nn::layer_norm(h, block.ln2_gain, block.ln2_bias);
  auto mlp = nn::matmul(nn::gelu(nn::matmul(h_norm, block.mlp_w1)), block.mlp_w2);
  return nn::add(h, mlp);
}

template <typename S>
nn::TensorT<S> encode(const nn::TensorT<S>& patches, const ModelT<S>& model) {
  auto z = embed_sequence(patches, model);
  for (const auto& block : model.blocks) {
    z = encoder_block(z, block, model.config, model.rel_index);
  }
  return nn::layer_norm(z, model.final_ln_gain, model.final_ln_bias);
}

template <typename S>
nn::TensorT<S> forward_logits(const melspec::Image& image, const ModelT<S>& model) {
  auto encoded = encode(patchify<S>(image, model.config), model);
  return nn::matmul(nn::slice_rows(encoded, 0, 1), model.head);
}

}  // namespace ser::vit

#endif  // SERKIT_VIT_HPP_
