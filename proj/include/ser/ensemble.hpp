// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_ENSEMBLE_HPP_
#define SERKIT_ENSEMBLE_HPP_

#include <string>
#include <utility>
#include <vector>

#include "ser/melspec.hpp"
#include "ser/vit.hpp"

namespace ser::ensemble {

SERKIT_DEFINE_ERROR(EmptyEnsemble);
SERKIT_DEFINE_ERROR(LengthMismatch);

enum class Kind {
  kHomogeneous,  // same architecture, different init seeds
  kPerDataset,   // one member per benchmark dataset
};

const char* kind_name(Kind k);
Kind kind_from_name(std::string_view name);

// The five benchmark corpus tags a per-dataset ensemble must cover.
const std::vector<std::string>& benchmark_dataset_tags();

struct EnsembleSpec {
  Kind kind = Kind::kHomogeneous;
  std::vector<std::string> member_paths;   // checkpoint files
  std::vector<std::string> dataset_tags;   // per_dataset: parallel to members
};

// JSON file: {"kind": ..., "members": [...], "dataset_tags": [...]}
EnsembleSpec load_ensemble_spec(const std::string& path);
void save_ensemble_spec(const std::string& path, const EnsembleSpec& spec);

struct Ensemble {
  Kind kind = Kind::kHomogeneous;
  std::vector<vit::Model> members;
};

// Loads all member checkpoints. Per-dataset specs must carry exactly one
// member per benchmark tag.
Ensemble load_ensemble(const EnsembleSpec& spec);

// Elementwise arithmetic mean, accumulated in double so that averaging n
// identical vectors reproduces the vector exactly.
std::vector<float> average_logits(const std::vector<std::vector<float>>& logit_vectors);

// Mean of the members' raw logits; class is the argmax with ties broken
// toward the lowest class index.
std::pair<Emotion, std::vector<float>> ensemble_predict(const melspec::Image& image,
                                                        const Ensemble& ensemble);

}  // namespace ser::ensemble

#endif  // SERKIT_ENSEMBLE_HPP_
