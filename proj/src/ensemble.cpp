// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/ensemble.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace ser::ensemble {

using nlohmann::json;

const char* kind_name(Kind k) {
  return k == Kind::kHomogeneous ? "homogeneous" : "per_dataset";
}

Kind kind_from_name(std::string_view name) {
  if (name == "homogeneous") return Kind::kHomogeneous;
  if (name == "per_dataset") return Kind::kPerDataset;
  throw Error("unknown ensemble kind: '" + std::string(name) + "'");
}

const std::vector<std::string>& benchmark_dataset_tags() {
  static const std::vector<std::string> tags = {"RAVDESS", "TESS", "CREMA-D",
                                                "ESD", "MELD"};
  return tags;
}

EnsembleSpec load_ensemble_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ensemble spec: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(path + ": bad JSON: " + e.what());
  }
  EnsembleSpec spec;
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  spec.member_paths = j.at("members").get<std::vector<std::string>>();
  if (j.contains("dataset_tags")) {
    spec.dataset_tags = j.at("dataset_tags").get<std::vector<std::string>>();
  }
  return spec;
}

void save_ensemble_spec(const std::string& path, const EnsembleSpec& spec) {
  json j{{"kind", kind_name(spec.kind)}, {"members", spec.member_paths}};
  if (!spec.dataset_tags.empty()) j["dataset_tags"] = spec.dataset_tags;
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << j.dump(2) << '\n';
}

Ensemble load_ensemble(const EnsembleSpec& spec) {
  if (spec.member_paths.empty()) {
    throw EmptyEnsemble("ensemble spec lists no members");
  }
  if (spec.kind == Kind::kPerDataset) {
    std::vector<std::string> tags = spec.dataset_tags;
    std::sort(tags.begin(), tags.end());
    std::vector<std::string> expected = benchmark_dataset_tags();
    std::sort(expected.begin(), expected.end());
    if (spec.dataset_tags.size() != spec.member_paths.size() || tags != expected) {
      throw Error(
          "per_dataset ensemble needs exactly one member per benchmark tag "
          "(RAVDESS, TESS, CREMA-D, ESD, MELD)");
    }
  }
  Ensemble ensemble;
  ensemble.kind = spec.kind;
  ensemble.members.reserve(spec.member_paths.size());
  for (const auto& path : spec.member_paths) {
    ensemble.members.push_back(vit::load_checkpoint(path));
  }
  return ensemble;
}

std::vector<float> average_logits(
    const std::vector<std::vector<float>>& logit_vectors) {
  if (logit_vectors.empty()) throw EmptyEnsemble("no logit vectors to average");
  const std::size_t len = logit_vectors.front().size();
  std::vector<double> acc(len, 0.0);
  for (const auto& logits : logit_vectors) {
    if (logits.size() != len) {
      throw LengthMismatch("logit vectors differ in length");
    }
    for (std::size_t i = 0; i < len; ++i) acc[i] += logits[i];
  }
  std::vector<float> mean(len);
  for (std::size_t i = 0; i < len; ++i) {
    mean[i] = static_cast<float>(acc[i] / static_cast<double>(logit_vectors.size()));
  }
  return mean;
}

std::pair<Emotion, std::vector<float>> ensemble_predict(const melspec::Image& image,
                                                        const Ensemble& ensemble) {
  if (ensemble.members.empty()) throw EmptyEnsemble("ensemble has no members");
  std::vector<std::vector<float>> logits;
  logits.reserve(ensemble.members.size());
  for (const auto& member : ensemble.members) {
    logits.push_back(vit::forward_logit_values(image, member));
  }
  std::vector<float> mean = average_logits(logits);
  return {static_cast<Emotion>(vit::argmax_class(mean)), std::move(mean)};
}

}  // namespace ser::ensemble
