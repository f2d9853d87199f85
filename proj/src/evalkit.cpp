// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/evalkit.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace ser::eval {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (std::int64_t v : row) n += v;
  }
  return n;
}

std::int64_t ConfusionMatrix::diagonal() const {
  std::int64_t n = 0;
  for (int c = 0; c < kNumEmotions; ++c) n += counts[c][c];
  return n;
}

ConfusionMatrix confusion(const std::vector<Emotion>& truth,
                          const std::vector<Emotion>& pred) {
  if (truth.empty()) throw EmptyInput("no labels to score");
  if (truth.size() != pred.size()) {
    throw LengthMismatch("truth and prediction lengths differ");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    cm.counts[static_cast<int>(truth[i])][static_cast<int>(pred[i])]++;
  }
  return cm;
}

EvalReport compute_metrics(const std::vector<Emotion>& truth,
                           const std::vector<Emotion>& pred,
                           Averaging averaging) {
  const ConfusionMatrix cm = confusion(truth, pred);
  const std::int64_t total = cm.total();

  EvalReport report;
  report.n_samples = total;
  report.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(total);

  for (int c = 0; c < kNumEmotions; ++c) {
    const std::int64_t tp = cm.counts[c][c];
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < kNumEmotions; ++o) {
      if (o == c) continue;
      fp += cm.counts[o][c];
      fn += cm.counts[c][o];
    }
    auto& pc = report.per_class[c];
    pc.support = tp + fn;
    if (tp + fp > 0) {
      pc.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      report.zero_denominator_warnings++;
    }
    if (pc.support > 0) {
      pc.recall = static_cast<double>(tp) / static_cast<double>(pc.support);
    } else {
      report.zero_denominator_warnings++;
    }
    if (pc.precision + pc.recall > 0) {
      pc.f1 = 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall);
    }
  }

  if (averaging == Averaging::kWeighted) {
    double wp = 0.0, wf = 0.0;
    for (int c = 0; c < kNumEmotions; ++c) {
      const double w = static_cast<double>(report.per_class[c].support);
      wp += w * report.per_class[c].precision;
      wf += w * report.per_class[c].f1;
    }
    report.precision = wp / static_cast<double>(total);
    report.f1 = wf / static_cast<double>(total);
    // Support-weighted recall telescopes to diagonal/total; computing it as
    // that expression keeps the recall == accuracy identity bit-exact.
    report.recall =
        static_cast<double>(cm.diagonal()) / static_cast<double>(total);
  } else {
    double mp = 0.0, mr = 0.0, mf = 0.0;
    for (int c = 0; c < kNumEmotions; ++c) {
      mp += report.per_class[c].precision;
      mr += report.per_class[c].recall;
      mf += report.per_class[c].f1;
    }
    report.precision = mp / kNumEmotions;
    report.recall = mr / kNumEmotions;
    report.f1 = mf / kNumEmotions;
  }
  return report;
}

json EvalReport::to_json() const {
  json per;
  for (int c = 0; c < kNumEmotions; ++c) {
    per[emotion_name(static_cast<Emotion>(c))] =
        json{{"precision", per_class[c].precision},
             {"recall", per_class[c].recall},
             {"f1", per_class[c].f1},
             {"support", per_class[c].support}};
  }
  return json{{"accuracy", accuracy},
              {"precision", precision},
              {"recall", recall},
              {"f1", f1},
              {"per_class", per},
              {"flops_gmac", flops_gmac},
              {"mean_inference_ms", mean_inference_ms},
              {"std_inference_ms", std_inference_ms},
              {"timing_reps", timing_reps},
              {"n_samples", n_samples},
              {"seed", seed},
              {"model_id", model_id},
              {"zero_denominator_warnings", zero_denominator_warnings}};
}

void write_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << report.to_json().dump(2) << '\n';
  if (!out) throw Error("write failed: " + path);
}

TimingStats measure_inference(const std::function<void(const melspec::Image&)>& infer,
                              const std::vector<melspec::Image>& samples,
                              int warmup, int reps) {
  if (samples.empty()) throw NoSamples("no samples to time");
  if (reps < 3) throw Error("measure_inference: need reps >= 3");
  if (warmup < 1) throw Error("measure_inference: need warmup >= 1");

  using Clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) {
    for (const auto& s : samples) infer(s);
  }
  std::vector<double> per_sample_ms(reps);
  for (int r = 0; r < reps; ++r) {
    const auto start = Clock::now();
    for (const auto& s : samples) infer(s);
    const auto stop = Clock::now();
    per_sample_ms[r] =
        std::chrono::duration<double, std::milli>(stop - start).count() /
        static_cast<double>(samples.size());
  }

  TimingStats stats;
  stats.reps = reps;
  stats.warmup = warmup;
  for (double v : per_sample_ms) stats.mean_ms += v;
  stats.mean_ms /= reps;
  double ss = 0.0;
  for (double v : per_sample_ms) ss += (v - stats.mean_ms) * (v - stats.mean_ms);
  stats.std_ms = reps > 1 ? std::sqrt(ss / (reps - 1)) : 0.0;
  return stats;
}

TimingStats measure_inference(const vit::Model& model,
                              const std::vector<melspec::Image>& samples,
                              int warmup, int reps) {
  return measure_inference(
      [&model](const melspec::Image& s) { vit::forward_logit_values(s, model); },
      samples, warmup, reps);
}

TimingStats measure_inference(const ensemble::Ensemble& ens,
                              const std::vector<melspec::Image>& samples,
                              int warmup, int reps) {
  return measure_inference(
      [&ens](const melspec::Image& s) { ensemble::ensemble_predict(s, ens); },
      samples, warmup, reps);
}

EvalReport personalize_run(const audio::DatasetManifest& participant,
                           const vit::Model& base_model,
                           const PersonalizeOptions& options, std::uint64_t seed) {
  auto [train_manifest, test_manifest] =
      train::stratified_split(participant, options.split, derive_seed(seed, "split"));

  auto featurize = [&options](const audio::DatasetManifest& manifest) {
    std::vector<train::LabeledImage> out;
    out.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
      out.push_back({melspec::featurize_file(entry.clip_path, options.mel,
                                             options.target_rate_hz),
                     entry.emotion});
    }
    return out;
  };
  const std::vector<train::LabeledImage> train_set = featurize(train_manifest);
  const std::vector<train::LabeledImage> test_set = featurize(test_manifest);

  train::TrainConfig config = options.train_config;
  config.seed = derive_seed(seed, "fine-tune");
  auto [model, trace] =
      train::fine_tune(base_model, base_model.config, train_set, config);

  std::vector<Emotion> truth, pred;
  truth.reserve(test_set.size());
  pred.reserve(test_set.size());
  for (const auto& example : test_set) {
    truth.push_back(example.label);
    pred.push_back(static_cast<Emotion>(
        vit::argmax_class(vit::forward_logit_values(example.image, model))));
  }

  EvalReport report = compute_metrics(truth, pred, Averaging::kWeighted);
  report.flops_gmac =
      vit::count_flops_gmac(model.config, vit::FlopMode::kParametricMac);
  report.seed = seed;
  report.model_id = options.model_id;
  if (options.timing_reps > 0) {
    std::vector<melspec::Image> images;
    images.reserve(test_set.size());
    for (const auto& example : test_set) images.push_back(example.image);
    const TimingStats timing =
        measure_inference(model, images, options.timing_warmup, options.timing_reps);
    report.mean_inference_ms = timing.mean_ms;
    report.std_inference_ms = timing.std_ms;
    report.timing_reps = timing.reps;
  }
  return report;
}

std::string select_best_model(
    const std::vector<std::pair<std::string, EvalReport>>& reports) {
  if (reports.empty()) throw EmptyInput("no candidate reports");
  const std::pair<std::string, EvalReport>* best = &reports.front();
  for (const auto& candidate : reports) {
    const EvalReport& a = candidate.second;
    const EvalReport& b = best->second;
    const bool wins =
        a.accuracy != b.accuracy       ? a.accuracy > b.accuracy
        : a.flops_gmac != b.flops_gmac ? a.flops_gmac < b.flops_gmac
        : a.mean_inference_ms != b.mean_inference_ms
            ? a.mean_inference_ms < b.mean_inference_ms
            : candidate.first < best->first;
    if (wins) best = &candidate;
  }
  return best->first;
}

}  // namespace ser::eval
