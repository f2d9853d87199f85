// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include <cstring>
#include <fstream>

#include "doctest.h"
#include "ser/vit.hpp"
#include "testutil.hpp"

using namespace ser;
using namespace ser::vit;
using sertest::TempDir;

namespace {

// Small enough for exhaustive checks: 32x32 image, N=4 patches.
ModelConfig tiny_config(Variant variant = Variant::kVit) {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 16;
  c.embed_dim = 16;
  c.heads = 2;
  c.depth = 1;
  c.mlp_dim = 32;
  c.variant = variant;
  return c;
}

melspec::Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  melspec::Image image;
  image.h = image.w = size;
  image.c = 3;
  image.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (auto& p : image.pixels) p = static_cast<float>(rng.uniform());
  return image;
}

nn::TensorD random_d(std::vector<int> shape, Rng& rng, double scale = 0.5) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.uniform(-scale, scale);
  return nn::TensorD::leaf(std::move(shape), std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("vit");

TEST_CASE("patchify geometry at the paper dimensions") {
  ModelConfig config;  // defaults: 224, P=16, C=3
  config.embed_dim = 64;
  CHECK(config.n_patches() == 196);
  CHECK(config.patch_dim() == 768);
  CHECK(config.seq_len() == 197);

  const auto image = random_image(224, 3);
  const auto patches = patchify<float>(image, config);
  CHECK(patches.shape() == std::vector<int>{196, 768});

  const auto model = init_model<float>(config, 1);
  const auto seq = embed_sequence(patches, model);
  CHECK(seq.shape() == std::vector<int>{197, 64});
}

TEST_CASE("patchify is local: one changed patch moves one row") {
  const ModelConfig config = tiny_config();
  auto a = random_image(32, 5);
  auto b = a;
  // Perturb a pixel inside patch (1, 0) -> patch index 2 in row-major grid.
  b.pixels[((17 * 32) + 3) * 3 + 1] += 0.25f;
  const auto pa = patchify<float>(a, config);
  const auto pb = patchify<float>(b, config);
  for (int p = 0; p < 4; ++p) {
    bool differs = false;
    for (int i = 0; i < config.patch_dim(); ++i) {
      differs |= pa.value()[p * config.patch_dim() + i] !=
                 pb.value()[p * config.patch_dim() + i];
    }
    CHECK(differs == (p == 2));
  }
}

TEST_CASE("zero image embeds to projection bias plus position rows") {
  const ModelConfig config = tiny_config();
  auto model = init_model<float>(config, 9);
  melspec::Image zero;
  zero.h = zero.w = 32;
  zero.c = 3;
  zero.pixels.assign(32 * 32 * 3, 0.0f);

  const auto seq = embed_sequence(patchify<float>(zero, model), model);
  const int d = config.embed_dim;
  for (int p = 0; p < config.n_patches(); ++p) {
    for (int c = 0; c < d; ++c) {
      const float expected =
          model.patch_bias.value()[c] + model.pos_embed.value()[(p + 1) * d + c];
      CHECK(seq.value()[(p + 1) * d + c] == expected);
    }
  }
}

TEST_CASE("self-attention of a singleton sequence returns v") {
  Rng rng(77);
  const int d = 8, dh = 4;
  auto z = random_d({1, d}, rng);
  auto u = random_d({d, 3 * dh}, rng);
  auto out = self_attention(z, u, dh);
  REQUIRE(out.shape() == std::vector<int>{1, dh});

  // v = z U[:, 2*dh:3*dh]
  for (int j = 0; j < dh; ++j) {
    double v = 0.0;
    for (int k = 0; k < d; ++k) v += z.value()[k] * u.value()[k * 3 * dh + 2 * dh + j];
    CHECK(out.value()[j] == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("zero query projection gives uniform attention") {
  Rng rng(78);
  const int n = 6, d = 8, dh = 4;
  auto z = random_d({n, d}, rng);
  auto u_data = random_d({d, 3 * dh}, rng).value();
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < dh; ++c) u_data[r * 3 * dh + c] = 0.0;  // q columns
  }
  auto u = nn::TensorD::leaf({d, 3 * dh}, std::move(u_data));
  auto out = self_attention(z, u, dh);

  // Each output row equals the column mean of v.
  std::vector<double> v_mean(dh, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dh; ++j) {
      double v = 0.0;
      for (int k = 0; k < d; ++k) {
        v += z.value()[i * d + k] * u.value()[k * 3 * dh + 2 * dh + j];
      }
      v_mean[j] += v / n;
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dh; ++j) {
      CHECK(out.value()[i * dh + j] == doctest::Approx(v_mean[j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("multi-head attention with one head is SA plus projection") {
  Rng rng(79);
  ModelConfig config = tiny_config();
  config.heads = 1;
  auto model = init_model<double>(config, 4);
  auto z = random_d({config.seq_len(), config.embed_dim}, rng);

  const auto& block = model.blocks[0];
  auto mha = multi_head_attention(z, block, config, model.rel_index);
  auto sa = nn::matmul(
      self_attention(z, block.qkv, config.embed_dim), block.msa);
  REQUIRE(mha.shape() == sa.shape());
  for (std::size_t i = 0; i < mha.numel(); ++i) {
    CHECK(mha.value()[i] == doctest::Approx(sa.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention keeps the sequence shape for every head count") {
  Rng rng(80);
  for (int heads : {1, 2, 4, 8}) {
    ModelConfig config = tiny_config();
    config.heads = heads;
    auto model = init_model<double>(config, 4);
    auto z = random_d({config.seq_len(), config.embed_dim}, rng);
    auto out = multi_head_attention(z, model.blocks[0], config, model.rel_index);
    CHECK(out.shape() == std::vector<int>{config.seq_len(), config.embed_dim});
  }
}

TEST_CASE("encoder block with zeroed branches is the identity") {
  Rng rng(81);
  const ModelConfig config = tiny_config();
  auto model = init_model<float>(config, 12);
  auto& block = model.blocks[0];
  std::fill(block.msa.mutable_value().begin(), block.msa.mutable_value().end(), 0.0f);
  std::fill(block.mlp_w2.mutable_value().begin(), block.mlp_w2.mutable_value().end(),
            0.0f);

  std::vector<float> z_data(static_cast<std::size_t>(config.seq_len()) *
                            config.embed_dim);
  for (auto& v : z_data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto z = nn::Tensor::leaf({config.seq_len(), config.embed_dim}, z_data);
  auto out = encoder_block(z, block, config, model.rel_index);
  REQUIRE(out.shape() == z.shape());
  CHECK(std::memcmp(out.value().data(), z_data.data(), z_data.size() * 4) == 0);
}

TEST_CASE("encoder block output is permutation-equivariant without positions") {
  Rng rng(82);
  const ModelConfig config = tiny_config();  // vit: no relative bias
  auto model = init_model<double>(config, 2);
  const int seq = config.seq_len(), d = config.embed_dim;

  auto z = random_d({seq, d}, rng);
  // Permutation of the non-CLS rows.
  std::vector<int> perm = {0, 3, 1, 4, 2};
  std::vector<double> permuted(z.numel());
  for (int r = 0; r < seq; ++r) {
    std::copy_n(z.value().begin() + perm[r] * d, d, permuted.begin() + r * d);
  }
  auto out1 = encoder_block(z, model.blocks[0], config, model.rel_index);
  auto out2 = encoder_block(nn::TensorD::leaf({seq, d}, permuted), model.blocks[0],
                            config, model.rel_index);
  for (int r = 0; r < seq; ++r) {
    for (int c = 0; c < d; ++c) {
      CHECK(out2.value()[r * d + c] ==
            doctest::Approx(out1.value()[perm[r] * d + c]).epsilon(1e-6));
    }
  }
}

TEST_CASE("encoder block gradients pass the finite-difference check") {
  Rng rng(83);
  const ModelConfig config = tiny_config();
  auto model = init_model<double>(config, 21);
  const int seq = config.seq_len(), d = config.embed_dim;
  const auto& block = model.blocks[0];

  auto by_input = [&](const nn::TensorD& z) {
    return nn::mean_all(encoder_block(z, block, config, model.rel_index));
  };
  auto report = nn::gradcheck(by_input, random_d({seq, d}, rng));
  CHECK_MESSAGE(report.ok(), "input gradcheck: ", report.max_rel_error);

  const auto z0 = random_d({seq, d}, rng);
  auto by_qkv = [&](const nn::TensorD& w) {
    BlockParamsT<double> patched = block;
    patched.qkv = w;
    return nn::mean_all(encoder_block(z0, patched, config, model.rel_index));
  };
  auto wreport = nn::gradcheck(by_qkv, nn::TensorD::leaf(block.qkv.shape(),
                                                         block.qkv.value()));
  CHECK_MESSAGE(wreport.ok(), "qkv gradcheck: ", wreport.max_rel_error);
}

TEST_CASE("beit with zero bias matches vit, nonzero bias changes the output") {
  const ModelConfig vit_cfg = tiny_config(Variant::kVit);
  const ModelConfig beit_cfg = tiny_config(Variant::kBeit);
  auto vit_model = init_model<float>(vit_cfg, 33);
  auto beit_model = init_model<float>(beit_cfg, 33);
  const auto image = random_image(32, 14);

  const auto vit_logits = forward_logit_values(image, vit_model);
  const auto beit_logits = forward_logit_values(image, beit_model);
  REQUIRE(vit_logits.size() == 4);
  for (int c = 0; c < 4; ++c) CHECK(vit_logits[c] == beit_logits[c]);

  auto& table = beit_model.blocks[0].rel_bias.mutable_value();
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = 0.1f * (i % 7);
  const auto biased = forward_logit_values(image, beit_model);
  bool changed = false;
  for (int c = 0; c < 4; ++c) changed |= biased[c] != beit_logits[c];
  CHECK(changed);
}

TEST_CASE("beit relative bias gradients pass gradcheck") {
  Rng rng(84);
  const ModelConfig config = tiny_config(Variant::kBeit);
  auto model = init_model<double>(config, 5);
  const auto z0 = random_d({config.seq_len(), config.embed_dim}, rng);
  auto fn = [&](const nn::TensorD& table) {
    BlockParamsT<double> patched = model.blocks[0];
    patched.rel_bias = table;
    return nn::mean_all(encoder_block(z0, patched, config, model.rel_index));
  };
  auto x0 = random_d({config.heads, config.rel_table_size()}, rng, 0.3);
  auto report = nn::gradcheck(fn, x0);
  CHECK_MESSAGE(report.ok(), "rel_bias gradcheck: ", report.max_rel_error);
}

TEST_CASE("forward_logits yields a valid softmax and is deterministic") {
  const ModelConfig config = tiny_config();
  const auto model = init_model<float>(config, 44);
  const auto image = random_image(32, 91);

  const auto a = forward_logit_values(image, model);
  const auto b = forward_logit_values(image, model);
  REQUIRE(a.size() == 4);
  CHECK(std::memcmp(a.data(), b.data(), 16) == 0);

  auto probs = nn::softmax_lastdim(nn::Tensor::leaf({4}, a));
  double sum = 0.0;
  for (float p : probs.value()) sum += p;
  CHECK(std::fabs(sum - 1.0) < 1e-6);
}

TEST_CASE("count_macs reproduces the ViT-Base complexity figure") {
  const ModelConfig config = base_config();
  const double parametric = count_flops_gmac(config, FlopMode::kParametricMac);
  CHECK(std::fabs(parametric - 16.87) / 16.87 < 0.02);
  CHECK(count_macs(config, FlopMode::kParametricMac) == 16847735808ULL);

  // total mode adds 2 (N+1)^2 D per block: 12 * 2 * 197^2 * 768.
  const std::uint64_t attn = 12ULL * 2 * 197 * 197 * 768;
  CHECK(attn == 715327488ULL);
  CHECK(count_macs(config, FlopMode::kTotalMac) ==
        count_macs(config, FlopMode::kParametricMac) + attn);
}

TEST_CASE("count_macs matches a hand-summed toy model") {
  ModelConfig config = tiny_config();
  // N=4, P^2 C = 768, D=16, mlp=32, L=1:
  //   patch 4*768*16 = 49152, qkv 5*16*48 = 3840, attn-out 5*16*16 = 1280,
  //   mlp 2*5*16*32 = 5120, head 16*4 = 64  -> 59456
  CHECK(count_macs(config, FlopMode::kParametricMac) == 59456ULL);
  // attention matmuls add 2*25*16 = 800
  CHECK(count_macs(config, FlopMode::kTotalMac) == 60256ULL);
}

TEST_CASE("count_macs is monotone in each dimension") {
  const ModelConfig base = tiny_config();
  const std::uint64_t ref = count_macs(base, FlopMode::kTotalMac);

  ModelConfig wider = base;
  wider.embed_dim = 32;
  CHECK(count_macs(wider, FlopMode::kTotalMac) > ref);

  ModelConfig deeper = base;
  deeper.depth = 2;
  CHECK(count_macs(deeper, FlopMode::kTotalMac) > ref);

  ModelConfig fatter = base;
  fatter.mlp_dim = 64;
  CHECK(count_macs(fatter, FlopMode::kTotalMac) > ref);

  ModelConfig larger = base;
  larger.image_size = 64;  // more patches
  CHECK(count_macs(larger, FlopMode::kTotalMac) > ref);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir("ckpt");
  const auto model = init_model<float>(tiny_config(Variant::kBeit), 55);
  save_checkpoint(model, dir.file("m.serc"));
  const Model back = load_checkpoint(dir.file("m.serc"));
  CHECK(back.config == model.config);

  const auto src = model.parameters();
  const auto dst = back.parameters();
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    REQUIRE(src[i].numel() == dst[i].numel());
    CHECK(std::memcmp(src[i].value().data(), dst[i].value().data(),
                      src[i].numel() * 4) == 0);
  }
}

TEST_CASE("checkpoint integrity failures are detected") {
  TempDir dir("ckpt-bad");
  const auto model = init_model<float>(tiny_config(), 56);
  save_checkpoint(model, dir.file("m.serc"));

  auto bytes = sertest::read_bytes(dir.file("m.serc"));
  {
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    std::ofstream f(dir.file("flip.serc"), std::ios::binary);
    f.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("flip.serc")), CrcMismatch);
  }
  {
    auto wrong = bytes;
    wrong[0] = 'X';
    std::ofstream f(dir.file("magic.serc"), std::ios::binary);
    f.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("magic.serc")), BadMagic);
  }
  {
    auto future = bytes;
    future[4] = 99;  // version precedes the CRC check
    std::ofstream f(dir.file("ver.serc"), std::ios::binary);
    f.write(future.data(), static_cast<std::streamsize>(future.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("ver.serc")), VersionUnsupported);
  }
}

TEST_SUITE_END();
