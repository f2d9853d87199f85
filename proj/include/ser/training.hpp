// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_TRAINING_HPP_
#define SERKIT_TRAINING_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ser/audio.hpp"
#include "ser/melspec.hpp"
#include "ser/vit.hpp"

namespace ser::train {

SERKIT_DEFINE_ERROR(InsufficientClassSamples);
SERKIT_DEFINE_ERROR(TooFewSamples);
SERKIT_DEFINE_ERROR(NonFiniteLoss);

struct TrainConfig {
  double learning_rate = 2e-5;  // constant; no schedule
  int epochs = 50;
  int batch_size = 8;
  std::uint64_t seed = 0;
  // AdamW constants.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct SplitSpec {
  int train_per_class = 6;
  int test_per_class = 4;
};

// Seeded per-class shuffle, then exactly `train_per_class` / `test_per_class`
// entries per emotion. Classes must hold at least train+test entries.
std::pair<audio::DatasetManifest, audio::DatasetManifest> stratified_split(
    const audio::DatasetManifest& manifest, const SplitSpec& spec,
    std::uint64_t seed);

// k class-stratified folds; element i is (train, validation) with validation
// folds pairwise disjoint and covering the manifest. Per-class fold sizes
// differ by at most one.
std::vector<std::pair<audio::DatasetManifest, audio::DatasetManifest>>
kfold_partition(const audio::DatasetManifest& manifest, int k, std::uint64_t seed);

// Union of manifests, preserving dataset tags. Duplicate clip paths are
// rejected.
audio::DatasetManifest mix_datasets(
    const std::vector<audio::DatasetManifest>& manifests);

struct LabeledImage {
  melspec::Image image;
  Emotion label = Emotion::kNeutral;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

// Decoupled-weight-decay Adam over the given parameter tensors. Moments are
// float, matching the training dtype.
class AdamW {
 public:
  AdamW(std::vector<nn::Tensor> params, const TrainConfig& config);

  // Applies one update from the currently accumulated grads.
  void step();
  long steps_taken() const { return t_; }

 private:
  std::vector<nn::Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  TrainConfig config_;
  long t_ = 0;
};

// Mini-batch cross-entropy training with a fixed seeded shuffle per epoch and
// the last short batch kept. Deterministic for a given (model, data, config).
std::vector<EpochStats> train(vit::Model& model,
                              const std::vector<LabeledImage>& data,
                              const TrainConfig& config);

// Same loop, but starting from a copy of `checkpoint`. The checkpoint config
// must match `expected`; zero epochs returns the copy untouched.
std::pair<vit::Model, std::vector<EpochStats>> fine_tune(
    const vit::Model& checkpoint, const vit::ModelConfig& expected,
    const std::vector<LabeledImage>& data, const TrainConfig& config);

// Deep copy; the result shares no parameter storage with the source.
vit::Model clone_model(const vit::Model& model);

double evaluate_accuracy(const vit::Model& model,
                         const std::vector<LabeledImage>& data);

// One JSON object per epoch: {"epoch": ..., "mean_loss": ..., "train_accuracy": ...}
void write_trace_jsonl(const std::string& path,
                       const std::vector<EpochStats>& trace);

}  // namespace ser::train

#endif  // SERKIT_TRAINING_HPP_
