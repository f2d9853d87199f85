// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/vit.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace ser::vit {

using nlohmann::json;

const char* variant_name(Variant v) {
  return v == Variant::kVit ? "vit" : "beit";
}

Variant variant_from_name(std::string_view name) {
  if (name == "vit") return Variant::kVit;
  if (name == "beit") return Variant::kBeit;
  throw Error("unknown model variant: '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw Error("image_size must be a positive multiple of patch_size");
  }
  if (channels <= 0) throw Error("channels must be positive");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    throw Error("embed_dim must be a positive multiple of heads");
  }
  if (depth <= 0) throw Error("depth must be positive");
  if (mlp_dim <= 0) throw Error("mlp_dim must be positive");
  if (n_classes != kNumEmotions) {
    throw Error("n_classes must be 4 for the four-emotion task");
  }
}

ModelConfig toy_config(Variant variant) {
  ModelConfig c;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 4;
  c.mlp_dim = 128;
  c.variant = variant;
  return c;
}

ModelConfig base_config(Variant variant) {
  ModelConfig c;
  c.embed_dim = 768;
  c.heads = 12;
  c.depth = 12;
  c.mlp_dim = 3072;
  c.variant = variant;
  return c;
}

std::vector<int> relative_position_index(const ModelConfig& config) {
  const int g = config.grid();
  const int span = 2 * g - 1;
  const int n_spatial = span * span;
  const int seq = config.seq_len();
  std::vector<int> index(static_cast<std::size_t>(seq) * seq);
  for (int i = 0; i < seq; ++i) {
    for (int j = 0; j < seq; ++j) {
      int idx;
      if (i == 0 && j == 0) {
        idx = n_spatial + 2;  // CLS attending to itself
      } else if (i == 0) {
        idx = n_spatial;      // CLS -> patch
      } else if (j == 0) {
        idx = n_spatial + 1;  // patch -> CLS
      } else {
        const int pi = i - 1, pj = j - 1;
        const int dy = pi / g - pj / g + g - 1;
        const int dx = pi % g - pj % g + g - 1;
        idx = dy * span + dx;
      }
      index[static_cast<std::size_t>(i) * seq + j] = idx;
    }
  }
  return index;
}

std::vector<float> forward_logit_values(const melspec::Image& image, const Model& model) {
  return forward_logits(image, model).value();
}

std::vector<float> cls_embedding(const melspec::Image& image, const Model& model) {
  auto encoded = encode(patchify<float>(image, model.config), model);
  const int d = model.config.embed_dim;
  return {encoded.value().begin(), encoded.value().begin() + d};
}

int argmax_class(const std::vector<float>& logits) {
  if (logits.empty()) throw Error("argmax_class: empty logits");
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

std::uint64_t count_macs(const ModelConfig& config, FlopMode mode) {
  config.validate();
  const std::uint64_t n = config.n_patches();
  const std::uint64_t seq = config.seq_len();
  const std::uint64_t d = config.embed_dim;
  const std::uint64_t mlp = config.mlp_dim;

  const std::uint64_t patch_proj = n * config.patch_dim() * d;
  const std::uint64_t qkv = seq * d * 3 * d;
  const std::uint64_t attn_out = seq * d * d;
  const std::uint64_t mlp_macs = 2 * seq * d * mlp;
  const std::uint64_t head = d * config.n_classes;

  std::uint64_t per_block = qkv + attn_out + mlp_macs;
  if (mode == FlopMode::kTotalMac) {
    per_block += 2 * seq * seq * d;  // q k^T and attn * v
  }
  return patch_proj + config.depth * per_block + head;
}

double count_flops_gmac(const ModelConfig& config, FlopMode mode) {
  return static_cast<double>(count_macs(config, mode)) / 1e9;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.

namespace {

constexpr char kMagic[4] = {'S', 'E', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
  out.push_back(static_cast<char>(v >> 16 & 0xff));
  out.push_back(static_cast<char>(v >> 24 & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

json config_to_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size}, {"channels", c.channels},
              {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
              {"heads", c.heads},           {"depth", c.depth},
              {"mlp_dim", c.mlp_dim},       {"n_classes", c.n_classes},
              {"variant", variant_name(c.variant)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.depth = j.at("depth").get<int>();
  c.mlp_dim = j.at("mlp_dim").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string out(kMagic, 4);
  append_u32(out, kVersion);
  const std::string config_blob = config_to_json(model.config).dump();
  append_u32(out, static_cast<std::uint32_t>(config_blob.size()));
  out += config_blob;

  static_assert(sizeof(float) == 4);
  for (const auto& param : model.parameters()) {
    const auto& data = param.value();
    const std::size_t offset = out.size();
    out.resize(offset + data.size() * 4);
    std::memcpy(out.data() + offset, data.data(), data.size() * 4);
  }
  append_u32(out, crc32(0, out.data(), out.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 16) throw BadMagic(path + ": file too small");
  if (std::memcmp(p, kMagic, 4) != 0) throw BadMagic(path + ": bad magic");
  const std::uint32_t version = read_u32(p + 4);
  if (version != kVersion) {
    throw VersionUnsupported(path + ": checkpoint version " +
                             std::to_string(version));
  }

  const std::uint32_t stored_crc = read_u32(p + bytes.size() - 4);
  const std::uint32_t actual_crc = crc32(0, bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) {
    throw CrcMismatch(path + ": checkpoint is corrupt");
  }

  const std::uint32_t config_len = read_u32(p + 8);
  if (12 + static_cast<std::size_t>(config_len) + 4 > bytes.size()) {
    throw BadMagic(path + ": config blob overruns file");
  }
  ModelConfig config;
  try {
    config = config_from_json(json::parse(bytes.substr(12, config_len)));
  } catch (const json::exception& e) {
    throw BadMagic(path + ": bad config blob: " + e.what());
  }

  // Build an empty model with the right shapes, then fill the arrays.
  Model model = init_model<float>(config, 0);
  std::size_t pos = 12 + config_len;
  for (auto& param : model.parameters()) {
    auto& data = param.mutable_value();
    const std::size_t n_bytes = data.size() * 4;
    if (pos + n_bytes + 4 > bytes.size()) {
      throw BadMagic(path + ": parameter data truncated");
    }
    std::memcpy(data.data(), bytes.data() + pos, n_bytes);
    pos += n_bytes;
  }
  if (pos + 4 != bytes.size()) {
    throw BadMagic(path + ": trailing bytes after parameters");
  }
  return model;
}

}  // namespace ser::vit
