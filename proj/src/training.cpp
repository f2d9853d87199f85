// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace ser::train {

void TrainConfig::validate() const {
  if (learning_rate < 0) throw Error("learning_rate must be nonnegative");
  if (epochs < 0) throw Error("epochs must be nonnegative");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw Error("AdamW betas must lie in [0, 1)");
  }
  if (eps <= 0) throw Error("AdamW eps must be positive");
  if (weight_decay < 0) throw Error("weight_decay must be nonnegative");
}

namespace {

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    std::swap(indices[i - 1], indices[rng.below(i)]);
  }
}

// Per-class entry indices, shuffled with one shared stream in class order.
std::vector<std::vector<std::size_t>> shuffled_class_buckets(
    const audio::DatasetManifest& manifest, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> buckets(kNumEmotions);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    buckets[static_cast<int>(manifest.entries[i].emotion)].push_back(i);
  }
  Rng rng(seed);
  for (auto& bucket : buckets) shuffle_indices(bucket, rng);
  return buckets;
}

}  // namespace

std::pair<audio::DatasetManifest, audio::DatasetManifest> stratified_split(
    const audio::DatasetManifest& manifest, const SplitSpec& spec,
    std::uint64_t seed) {
  if (spec.train_per_class < 0 || spec.test_per_class < 0) {
    throw Error("split counts must be nonnegative");
  }
  auto buckets = shuffled_class_buckets(manifest, seed);
  const std::size_t need =
      static_cast<std::size_t>(spec.train_per_class) + spec.test_per_class;
  for (int c = 0; c < kNumEmotions; ++c) {
    if (buckets[c].size() < need) {
      throw InsufficientClassSamples(
          std::string("class '") + emotion_name(static_cast<Emotion>(c)) +
          "' has " + std::to_string(buckets[c].size()) + " clips, need " +
          std::to_string(need));
    }
  }

  // Selected indices are sorted back to manifest order so the output order
  // does not leak shuffle state.
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < kNumEmotions; ++c) {
    for (int i = 0; i < spec.train_per_class; ++i) train_idx.push_back(buckets[c][i]);
    for (int i = 0; i < spec.test_per_class; ++i) {
      test_idx.push_back(buckets[c][spec.train_per_class + i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  std::pair<audio::DatasetManifest, audio::DatasetManifest> out;
  for (std::size_t i : train_idx) out.first.entries.push_back(manifest.entries[i]);
  for (std::size_t i : test_idx) out.second.entries.push_back(manifest.entries[i]);
  return out;
}

std::vector<std::pair<audio::DatasetManifest, audio::DatasetManifest>>
kfold_partition(const audio::DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw TooFewSamples("k-fold needs k >= 2, got " + std::to_string(k));
  if (manifest.entries.size() < static_cast<std::size_t>(k)) {
    throw TooFewSamples("manifest has " + std::to_string(manifest.entries.size()) +
                        " entries, fewer than k = " + std::to_string(k));
  }
  auto buckets = shuffled_class_buckets(manifest, seed);

  // Round-robin deal per class keeps folds stratified with sizes off by at
  // most one.
  std::vector<std::vector<std::size_t>> folds(k);
  for (int c = 0; c < kNumEmotions; ++c) {
    for (std::size_t i = 0; i < buckets[c].size(); ++i) {
      folds[i % k].push_back(buckets[c][i]);
    }
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());

  std::vector<std::pair<audio::DatasetManifest, audio::DatasetManifest>> out(k);
  for (int f = 0; f < k; ++f) {
    std::set<std::size_t> held(folds[f].begin(), folds[f].end());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      auto& dst = held.count(i) ? out[f].second : out[f].first;
      dst.entries.push_back(manifest.entries[i]);
    }
  }
  return out;
}

audio::DatasetManifest mix_datasets(
    const std::vector<audio::DatasetManifest>& manifests) {
  audio::DatasetManifest out;
  std::set<std::string> seen;
  for (const auto& m : manifests) {
    for (const auto& e : m.entries) {
      if (!seen.insert(e.clip_path).second) {
        throw audio::DuplicatePath("duplicate clip path in dataset union: '" +
                                   e.clip_path + "'");
      }
      out.entries.push_back(e);
    }
  }
  return out;
}

AdamW::AdamW(std::vector<nn::Tensor> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const float lr = static_cast<float>(config_.learning_rate);
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float eps = static_cast<float>(config_.eps);
  const float wd = static_cast<float>(config_.weight_decay);
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t_));

  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (!params_[p].has_grad()) continue;
    const auto& g = params_[p].grad();
    auto& value = params_[p].mutable_value();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float m_hat = m[i] / bc1;
      const float v_hat = v[i] / bc2;
      value[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * value[i]);
    }
  }
}

std::vector<EpochStats> train(vit::Model& model,
                              const std::vector<LabeledImage>& data,
                              const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw TooFewSamples("training set is empty");

  AdamW optimizer(model.parameters(), config);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> trace;
  trace.reserve(config.epochs);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_indices(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      model.zero_grads();
      std::vector<nn::Tensor> losses;
      losses.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const LabeledImage& example = data[order[i]];
        auto logits = vit::forward_logits(example.image, model);
        if (vit::argmax_class(logits.value()) == static_cast<int>(example.label)) {
          ++correct;
        }
        losses.push_back(
            nn::cross_entropy(logits, {static_cast<int>(example.label)}));
        loss_sum += losses.back().item();
      }
      auto batch_loss = nn::mean_stack(losses);
      if (!std::isfinite(static_cast<double>(batch_loss.item()))) {
        throw NonFiniteLoss("batch loss is not finite at epoch " +
                            std::to_string(epoch));
      }
      nn::backward(batch_loss);
      optimizer.step();
    }

    trace.push_back({epoch, loss_sum / static_cast<double>(data.size()),
                     static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return trace;
}

vit::Model clone_model(const vit::Model& model) {
  vit::Model copy = vit::init_model<float>(model.config, 0);
  auto src = model.parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].mutable_value() = src[i].value();
  }
  return copy;
}

std::pair<vit::Model, std::vector<EpochStats>> fine_tune(
    const vit::Model& checkpoint, const vit::ModelConfig& expected,
    const std::vector<LabeledImage>& data, const TrainConfig& config) {
  if (!(checkpoint.config == expected)) {
    throw vit::ConfigMismatch("checkpoint config does not match the run config");
  }
  vit::Model model = clone_model(checkpoint);
  if (config.epochs == 0) return {std::move(model), {}};
  auto trace = train(model, data, config);
  return {std::move(model), std::move(trace)};
}

double evaluate_accuracy(const vit::Model& model,
                         const std::vector<LabeledImage>& data) {
  if (data.empty()) throw TooFewSamples("evaluation set is empty");
  std::size_t correct = 0;
  for (const auto& example : data) {
    const auto logits = vit::forward_logit_values(example.image, model);
    if (vit::argmax_class(logits) == static_cast<int>(example.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void write_trace_jsonl(const std::string& path,
                       const std::vector<EpochStats>& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  for (const auto& stats : trace) {
    nlohmann::json record{{"epoch", stats.epoch},
                          {"mean_loss", stats.mean_loss},
                          {"train_accuracy", stats.train_accuracy}};
    out << record.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

}  // namespace ser::train
