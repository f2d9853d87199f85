// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "ser/audio.hpp"
#include "ser/ensemble.hpp"
#include "ser/evalkit.hpp"
#include "ser/training.hpp"
#include "ser/vit.hpp"

namespace ser::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: defaults, then config file, then command-line flags.

struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  melspec::MelParams mel;
  int target_rate_hz = 16000;
  vit::ModelConfig model = vit::toy_config();
  std::string model_ref = "toy-vit";  // preset name or checkpoint path
  train::TrainConfig train;
  train::SplitSpec split;
  int kfolds = 5;
  std::string report_dir = "reports";
  std::string cache_dir = "cache";
  std::string checkpoint_dir = "checkpoints";
};

vit::ModelConfig preset_config(const std::string& name) {
  if (name == "toy-vit") return vit::toy_config(vit::Variant::kVit);
  if (name == "toy-beit") return vit::toy_config(vit::Variant::kBeit);
  if (name == "vit-base") return vit::base_config(vit::Variant::kVit);
  if (name == "beit-base") return vit::base_config(vit::Variant::kBeit);
  throw Error("unknown model preset: '" + name +
              "' (want toy-vit, toy-beit, vit-base, or beit-base)");
}

void merge_mel(const json& j, melspec::MelParams& mel) {
  if (j.contains("n_fft")) mel.n_fft = j["n_fft"].get<int>();
  if (j.contains("hop")) mel.hop = j["hop"].get<int>();
  if (j.contains("n_mels")) mel.n_mels = j["n_mels"].get<int>();
  if (j.contains("f_min_hz")) mel.f_min_hz = j["f_min_hz"].get<double>();
  if (j.contains("f_max_hz")) mel.f_max_hz = j["f_max_hz"].get<double>();
  if (j.contains("db_floor")) mel.db_floor = j["db_floor"].get<double>();
}

void merge_model(const json& j, RunConfig& config) {
  if (j.is_string()) {
    config.model_ref = j.get<std::string>();
    if (!fs::exists(config.model_ref)) config.model = preset_config(config.model_ref);
    return;
  }
  if (j.contains("preset")) {
    config.model_ref = j["preset"].get<std::string>();
    config.model = preset_config(config.model_ref);
  }
  vit::ModelConfig& m = config.model;
  if (j.contains("image_size")) m.image_size = j["image_size"].get<int>();
  if (j.contains("channels")) m.channels = j["channels"].get<int>();
  if (j.contains("patch_size")) m.patch_size = j["patch_size"].get<int>();
  if (j.contains("embed_dim")) m.embed_dim = j["embed_dim"].get<int>();
  if (j.contains("heads")) m.heads = j["heads"].get<int>();
  if (j.contains("depth")) m.depth = j["depth"].get<int>();
  if (j.contains("mlp_dim")) m.mlp_dim = j["mlp_dim"].get<int>();
  if (j.contains("n_classes")) m.n_classes = j["n_classes"].get<int>();
  if (j.contains("variant")) {
    m.variant = vit::variant_from_name(j["variant"].get<std::string>());
  }
}

void merge_train(const json& j, train::TrainConfig& t) {
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("beta1")) t.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) t.beta2 = j["beta2"].get<double>();
  if (j.contains("eps")) t.eps = j["eps"].get<double>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
}

void load_config_file(const std::string& path, RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(path + ": bad JSON: " + e.what());
  }
  if (j.contains("seed")) {
    config.seed = j["seed"].get<std::uint64_t>();
    config.seed_set = true;
  }
  if (j.contains("mel")) merge_mel(j["mel"], config.mel);
  if (j.contains("target_rate_hz")) {
    config.target_rate_hz = j["target_rate_hz"].get<int>();
  }
  if (j.contains("model")) merge_model(j["model"], config);
  if (j.contains("train")) merge_train(j["train"], config.train);
  if (j.contains("split")) {
    const json& s = j["split"];
    if (s.contains("train_per_class")) {
      config.split.train_per_class = s["train_per_class"].get<int>();
    }
    if (s.contains("test_per_class")) {
      config.split.test_per_class = s["test_per_class"].get<int>();
    }
    if (s.contains("k")) config.kfolds = s["k"].get<int>();
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    if (p.contains("report_dir")) config.report_dir = p["report_dir"].get<std::string>();
    if (p.contains("cache_dir")) config.cache_dir = p["cache_dir"].get<std::string>();
    if (p.contains("checkpoint_dir")) {
      config.checkpoint_dir = p["checkpoint_dir"].get<std::string>();
    }
  }
}

json mel_to_json(const melspec::MelParams& m) {
  return json{{"n_fft", m.n_fft},       {"hop", m.hop},
              {"n_mels", m.n_mels},     {"f_min_hz", m.f_min_hz},
              {"f_max_hz", m.f_max_hz}, {"db_floor", m.db_floor}};
}

json model_to_json(const vit::ModelConfig& m) {
  return json{{"image_size", m.image_size}, {"channels", m.channels},
              {"patch_size", m.patch_size}, {"embed_dim", m.embed_dim},
              {"heads", m.heads},           {"depth", m.depth},
              {"mlp_dim", m.mlp_dim},       {"n_classes", m.n_classes},
              {"variant", vit::variant_name(m.variant)}};
}

json train_to_json(const train::TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"weight_decay", t.weight_decay}};
}

json resolved_config_json(const RunConfig& config) {
  return json{{"seed", config.seed},
              {"mel", mel_to_json(config.mel)},
              {"target_rate_hz", config.target_rate_hz},
              {"model", model_to_json(config.model)},
              {"model_ref", config.model_ref},
              {"train", train_to_json(config.train)},
              {"split",
               json{{"train_per_class", config.split.train_per_class},
                    {"test_per_class", config.split.test_per_class},
                    {"k", config.kfolds}}},
              {"paths",
               json{{"report_dir", config.report_dir},
                    {"cache_dir", config.cache_dir},
                    {"checkpoint_dir", config.checkpoint_dir}}}};
}

void require_seed(const RunConfig& config) {
  if (!config.seed_set) {
    throw Error("a run seed is mandatory; pass --seed or set \"seed\" in the config");
  }
}

// `<subcommand>-<seed>-<timestamp>.json`, deduplicated if a run lands on the
// same second.
std::string report_path(const RunConfig& config, const std::string& subcommand) {
  fs::create_directories(config.report_dir);
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);

  const std::string base = subcommand + "-" + std::to_string(config.seed) + "-" + stamp;
  std::string path = config.report_dir + "/" + base + ".json";
  for (int i = 1; fs::exists(path); ++i) {
    path = config.report_dir + "/" + base + "-" + std::to_string(i) + ".json";
  }
  return path;
}

std::string write_run_report(const RunConfig& config, const std::string& subcommand,
                             json result) {
  json report{{"subcommand", subcommand},
              {"config", resolved_config_json(config)},
              {"result", std::move(result)}};
  const std::string path = report_path(config, subcommand);
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << report.dump(2) << '\n';
  std::cout << "report: " << path << "\n";
  return path;
}

void echo_config(const RunConfig& config) {
  std::cout << "config: " << resolved_config_json(config).dump() << "\n";
}

vit::Model resolve_model(const RunConfig& config) {
  if (fs::exists(config.model_ref)) return vit::load_checkpoint(config.model_ref);
  return vit::init_model<float>(config.model, derive_seed(config.seed, "model-init"));
}

int featurize_threads() {
  if (const char* env = std::getenv("SER_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct FeaturizeStats {
  int hits = 0;
  int misses = 0;
};

// Featurizes every entry, in manifest order, through the cache. Parallel
// across clips; output order is fixed by index.
std::vector<train::LabeledImage> featurize_manifest(
    const audio::DatasetManifest& manifest, const RunConfig& config,
    FeaturizeStats* stats) {
  fs::create_directories(config.cache_dir);
  std::vector<train::LabeledImage> out(manifest.entries.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> hits{0}, misses{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.entries.size()) return;
      try {
        bool hit = false;
        out[i].image = cached_featurize(manifest.entries[i].clip_path, config.mel,
                                        config.target_rate_hz, config.cache_dir, &hit);
        out[i].label = manifest.entries[i].emotion;
        (hit ? hits : misses).fetch_add(1);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int n_threads =
      std::min<int>(featurize_threads(), static_cast<int>(manifest.entries.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (stats) {
    stats->hits += hits.load();
    stats->misses += misses.load();
  }
  return out;
}

json metrics_json(const eval::EvalReport& report) { return report.to_json(); }

eval::EvalReport evaluate_model(const vit::Model& model,
                                const std::vector<train::LabeledImage>& data) {
  std::vector<Emotion> truth, pred;
  for (const auto& example : data) {
    truth.push_back(example.label);
    pred.push_back(static_cast<Emotion>(
        vit::argmax_class(vit::forward_logit_values(example.image, model))));
  }
  eval::EvalReport report = eval::compute_metrics(truth, pred);
  report.flops_gmac =
      vit::count_flops_gmac(model.config, vit::FlopMode::kParametricMac);
  return report;
}

std::map<std::string, audio::DatasetManifest> group_by_tag(
    const audio::DatasetManifest& manifest) {
  std::map<std::string, audio::DatasetManifest> groups;
  for (const auto& entry : manifest.entries) {
    groups[entry.dataset_tag].entries.push_back(entry);
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Subcommands.

int run_prep(const RunConfig& config, const std::string& manifest_path) {
  require_seed(config);
  echo_config(config);
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
  FeaturizeStats stats;
  featurize_manifest(manifest, config, &stats);
  std::cout << "featurized " << manifest.entries.size() << " clips, cache hits "
            << stats.hits << ", misses " << stats.misses << "\n";
  write_run_report(config, "prep",
                   json{{"manifest", manifest_path},
                        {"clips", manifest.entries.size()},
                        {"cache_hits", stats.hits},
                        {"cache_misses", stats.misses}});
  return 0;
}

int run_train(RunConfig config, const std::string& manifest_path) {
  require_seed(config);
  echo_config(config);
  fs::create_directories(config.checkpoint_dir);
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);

  json results = json::array();
  for (const auto& [tag, subset] : group_by_tag(manifest)) {
    audio::DatasetManifest train_part = subset;
    audio::DatasetManifest test_part;
    if (config.split.test_per_class > 0) {
      train::SplitSpec spec;
      // Keep every remaining clip in the training side.
      auto counts = subset.class_counts();
      std::size_t min_count = counts[0];
      for (auto c : counts) min_count = std::min(min_count, c);
      spec.test_per_class = config.split.test_per_class;
      spec.train_per_class =
          static_cast<int>(min_count) - config.split.test_per_class;
      if (spec.train_per_class < 1) {
        throw train::InsufficientClassSamples(
            "dataset '" + tag + "' is too small for the requested held-out set");
      }
      std::tie(train_part, test_part) =
          train::stratified_split(subset, spec, derive_seed(config.seed, "split:" + tag));
    }

    const auto train_set = featurize_manifest(train_part, config, nullptr);
    train::TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "train:" + tag);
    vit::Model model = vit::init_model<float>(
        config.model, derive_seed(config.seed, "init:" + tag));
    const auto trace = train::train(model, train_set, tc);

    const std::string stem = std::string(vit::variant_name(config.model.variant)) +
                             "_" + tag;
    const std::string ckpt_path = config.checkpoint_dir + "/" + stem + ".serc";
    vit::save_checkpoint(model, ckpt_path);
    train::write_trace_jsonl(config.checkpoint_dir + "/" + stem + "_trace.jsonl", trace);

    json entry{{"dataset", tag},
               {"checkpoint", ckpt_path},
               {"train_clips", train_part.entries.size()},
               {"final_train_accuracy",
                trace.empty() ? 0.0 : trace.back().train_accuracy}};
    if (!test_part.entries.empty()) {
      const auto test_set = featurize_manifest(test_part, config, nullptr);
      entry["test_metrics"] = metrics_json(evaluate_model(model, test_set));
    }
    std::cout << "trained " << stem << " on " << train_part.entries.size()
              << " clips -> " << ckpt_path << "\n";
    results.push_back(std::move(entry));
  }
  write_run_report(config, "train", json{{"datasets", std::move(results)}});
  return 0;
}

int run_train_mix(RunConfig config, const std::vector<std::string>& manifest_paths,
                  const std::string& out_path) {
  require_seed(config);
  echo_config(config);
  fs::create_directories(config.checkpoint_dir);

  std::vector<audio::DatasetManifest> trains, tests;
  for (const auto& path : manifest_paths) {
    audio::DatasetManifest manifest = audio::load_manifest(path);
    if (config.split.test_per_class > 0) {
      auto counts = manifest.class_counts();
      std::size_t min_count = counts[0];
      for (auto c : counts) min_count = std::min(min_count, c);
      train::SplitSpec spec;
      spec.test_per_class = config.split.test_per_class;
      spec.train_per_class =
          static_cast<int>(min_count) - config.split.test_per_class;
      if (spec.train_per_class < 1) {
        throw train::InsufficientClassSamples("manifest '" + path +
                                              "' too small for the held-out set");
      }
      auto [tr, te] = train::stratified_split(manifest, spec,
                                              derive_seed(config.seed, "split:" + path));
      trains.push_back(std::move(tr));
      tests.push_back(std::move(te));
    } else {
      trains.push_back(std::move(manifest));
    }
  }

  const audio::DatasetManifest mixed = train::mix_datasets(trains);
  const auto train_set = featurize_manifest(mixed, config, nullptr);
  train::TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, "train:mix");
  vit::Model model =
      vit::init_model<float>(config.model, derive_seed(config.seed, "init:mix"));
  const auto trace = train::train(model, train_set, tc);

  const std::string ckpt_path =
      out_path.empty() ? config.checkpoint_dir + "/" +
                             vit::variant_name(config.model.variant) + "_mix.serc"
                       : out_path;
  vit::save_checkpoint(model, ckpt_path);

  json result{{"checkpoint", ckpt_path},
              {"train_clips", mixed.entries.size()},
              {"final_train_accuracy",
               trace.empty() ? 0.0 : trace.back().train_accuracy}};
  if (!tests.empty()) {
    json per_manifest = json::array();
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const auto test_set = featurize_manifest(tests[i], config, nullptr);
      per_manifest.push_back(json{{"manifest", manifest_paths[i]},
                                  {"metrics", metrics_json(evaluate_model(model, test_set))}});
    }
    result["held_out"] = std::move(per_manifest);
  }
  std::cout << "trained mixed model on " << mixed.entries.size() << " clips -> "
            << ckpt_path << "\n";
  write_run_report(config, "train-mix", std::move(result));
  return 0;
}

int run_kfold(RunConfig config, const std::string& manifest_path) {
  require_seed(config);
  echo_config(config);
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
  const auto folds =
      train::kfold_partition(manifest, config.kfolds, derive_seed(config.seed, "kfold"));

  json fold_results = json::array();
  double accuracy_sum = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto train_set = featurize_manifest(folds[f].first, config, nullptr);
    const auto valid_set = featurize_manifest(folds[f].second, config, nullptr);
    train::TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "train:fold" + std::to_string(f));
    vit::Model model = vit::init_model<float>(
        config.model, derive_seed(config.seed, "init:fold" + std::to_string(f)));
    train::train(model, train_set, tc);
    const eval::EvalReport metrics = evaluate_model(model, valid_set);
    accuracy_sum += metrics.accuracy;
    std::cout << "fold " << f << ": accuracy " << metrics.accuracy << "\n";
    fold_results.push_back(json{{"fold", f}, {"metrics", metrics_json(metrics)}});
  }
  const double mean_accuracy = accuracy_sum / static_cast<double>(folds.size());
  std::cout << "mean validation accuracy: " << mean_accuracy << "\n";
  write_run_report(config, "kfold",
                   json{{"k", config.kfolds},
                        {"folds", std::move(fold_results)},
                        {"mean_accuracy", mean_accuracy}});
  return 0;
}

int run_ensemble_build(const RunConfig& config, const std::string& out_path,
                       const std::string& kind,
                       const std::vector<std::string>& members,
                       const std::vector<std::string>& tags) {
  ensemble::EnsembleSpec spec;
  spec.kind = ensemble::kind_from_name(kind);
  spec.member_paths = members;
  spec.dataset_tags = tags;
  ensemble::load_ensemble(spec);  // validate before writing
  ensemble::save_ensemble_spec(out_path, spec);
  std::cout << "wrote ensemble spec: " << out_path << "\n";
  (void)config;
  return 0;
}

int run_ensemble_eval(RunConfig config, const std::string& spec_path,
                      const std::string& manifest_path) {
  require_seed(config);
  echo_config(config);
  const ensemble::Ensemble ens =
      ensemble::load_ensemble(ensemble::load_ensemble_spec(spec_path));
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
  const auto data = featurize_manifest(manifest, config, nullptr);

  std::vector<Emotion> truth, pred;
  for (const auto& example : data) {
    truth.push_back(example.label);
    pred.push_back(ensemble::ensemble_predict(example.image, ens).first);
  }
  eval::EvalReport report = eval::compute_metrics(truth, pred);
  double flops = 0.0;
  for (const auto& member : ens.members) {
    flops += vit::count_flops_gmac(member.config, vit::FlopMode::kParametricMac);
  }
  report.flops_gmac = flops;
  report.seed = config.seed;
  report.model_id = spec_path;
  std::cout << "ensemble accuracy: " << report.accuracy << " (" << ens.members.size()
            << " members, " << flops << " GMac)\n";
  write_run_report(config, "ensemble",
                   json{{"spec", spec_path},
                        {"members", ens.members.size()},
                        {"metrics", metrics_json(report)}});
  return 0;
}

int run_personalize(RunConfig config, const std::string& manifest_path,
                    int timing_reps) {
  require_seed(config);
  echo_config(config);
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
  const vit::Model base = resolve_model(config);

  eval::PersonalizeOptions options;
  options.split = config.split;
  options.train_config = config.train;
  options.mel = config.mel;
  options.target_rate_hz = config.target_rate_hz;
  options.timing_reps = timing_reps;
  options.model_id = config.model_ref;
  const eval::EvalReport report =
      eval::personalize_run(manifest, base, options, config.seed);

  std::cout << "personalized accuracy: " << report.accuracy << " on "
            << report.n_samples << " held-out clips\n";
  write_run_report(config, "personalize", metrics_json(report));
  return 0;
}

int run_flops(const RunConfig& config, const std::string& mode) {
  echo_config(config);
  const double parametric =
      vit::count_flops_gmac(config.model, vit::FlopMode::kParametricMac);
  const double total = vit::count_flops_gmac(config.model, vit::FlopMode::kTotalMac);
  char line[128];
  if (mode == "parametric_mac" || mode == "both") {
    std::snprintf(line, sizeof line, "%.2f GMac (parametric_mac)\n", parametric);
    std::cout << line;
  }
  if (mode == "total_mac" || mode == "both") {
    std::snprintf(line, sizeof line, "%.2f GMac (total_mac)\n", total);
    std::cout << line;
  }
  write_run_report(config, "flops",
                   json{{"parametric_mac_gmac", parametric},
                        {"total_mac_gmac", total},
                        {"mode", mode}});
  return 0;
}

int run_bench(RunConfig config, const std::string& ensemble_spec,
              const std::string& manifest_path, int n_synthetic, int warmup,
              int reps) {
  require_seed(config);
  echo_config(config);

  std::vector<melspec::Image> samples;
  if (!manifest_path.empty()) {
    const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
    for (const auto& example : featurize_manifest(manifest, config, nullptr)) {
      samples.push_back(example.image);
    }
  } else {
    Rng rng(derive_seed(config.seed, "bench-samples"));
    for (int i = 0; i < n_synthetic; ++i) {
      melspec::Image image;
      image.h = config.model.image_size;
      image.w = config.model.image_size;
      image.c = config.model.channels;
      image.pixels.resize(static_cast<std::size_t>(image.h) * image.w * image.c);
      for (auto& p : image.pixels) p = static_cast<float>(rng.uniform());
      samples.push_back(std::move(image));
    }
  }

  eval::TimingStats stats;
  std::string target;
  if (!ensemble_spec.empty()) {
    const ensemble::Ensemble ens =
        ensemble::load_ensemble(ensemble::load_ensemble_spec(ensemble_spec));
    stats = eval::measure_inference(ens, samples, warmup, reps);
    target = ensemble_spec;
  } else {
    const vit::Model model = resolve_model(config);
    stats = eval::measure_inference(model, samples, warmup, reps);
    target = config.model_ref;
  }
  std::cout << target << ": " << stats.mean_ms << " ms/sample (std " << stats.std_ms
            << ", reps " << stats.reps << ", warmup " << stats.warmup << ")\n";
  write_run_report(config, "bench",
                   json{{"target", target},
                        {"samples", samples.size()},
                        {"mean_inference_ms", stats.mean_ms},
                        {"std_inference_ms", stats.std_ms},
                        {"reps", stats.reps},
                        {"warmup", stats.warmup}});
  return 0;
}

int run_eval(RunConfig config, const std::string& manifest_path,
             const std::string& averaging) {
  require_seed(config);
  echo_config(config);
  const vit::Model model = resolve_model(config);
  const audio::DatasetManifest manifest = audio::load_manifest(manifest_path);
  const auto data = featurize_manifest(manifest, config, nullptr);

  std::vector<Emotion> truth, pred;
  for (const auto& example : data) {
    truth.push_back(example.label);
    pred.push_back(static_cast<Emotion>(
        vit::argmax_class(vit::forward_logit_values(example.image, model))));
  }
  eval::EvalReport report = eval::compute_metrics(
      truth, pred,
      averaging == "macro" ? eval::Averaging::kMacro : eval::Averaging::kWeighted);
  report.flops_gmac =
      vit::count_flops_gmac(model.config, vit::FlopMode::kParametricMac);
  report.seed = config.seed;
  report.model_id = config.model_ref;
  std::cout << "accuracy: " << report.accuracy << " on " << report.n_samples
            << " clips\n";
  write_run_report(config, "eval", metrics_json(report));
  return 0;
}

}  // namespace

melspec::Image cached_featurize(const std::string& wav_path,
                                const melspec::MelParams& params,
                                int target_rate_hz,
                                const std::string& cache_dir, bool* hit) {
  std::ifstream in(wav_path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + wav_path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());

  const std::string key_material =
      mel_to_json(params).dump() + "|" + std::to_string(target_rate_hz) + "|" +
      std::to_string(fnv1a64(bytes.data(), bytes.size()));
  char key[17];
  std::snprintf(key, sizeof key, "%016llx",
                static_cast<unsigned long long>(fnv1a64(key_material)));
  const std::string cache_path = cache_dir + "/" + key + ".melt";

  if (fs::exists(cache_path)) {
    if (hit) *hit = true;
    return melspec::read_melt(cache_path);
  }
  if (hit) *hit = false;
  const melspec::Image image =
      melspec::featurize_file(wav_path, params, target_rate_hz);
  // Write via a unique temp name so concurrent writers of the same key
  // cannot interleave.
  std::ostringstream tmp;
  tmp << cache_path << ".tmp." << std::this_thread::get_id();
  melspec::write_melt(tmp.str(), image);
  fs::rename(tmp.str(), cache_path);
  return image;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"serkit - speech emotion recognition toolkit"};
  app.require_subcommand(1);

  // The config file loads before CLI11 runs, so flags simply overwrite the
  // fields they bind to.
  RunConfig config;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  try {
    if (!config_path.empty()) load_config_file(config_path, config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  bool model_flag_given = false;
  std::string ignored_config;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", ignored_config, "JSON run config");
    auto* seed_opt = sub->add_option("--seed", config.seed, "run seed");
    auto* model_opt = sub->add_option(
        "--model", config.model_ref,
        "model preset (toy-vit, toy-beit, vit-base, beit-base) or checkpoint path");
    sub->callback([seed_opt, model_opt, &config, &model_flag_given]() {
      if (seed_opt->count() > 0) config.seed_set = true;
      if (model_opt->count() > 0) model_flag_given = true;
    });
    sub->add_option("--report-dir", config.report_dir, "report output directory");
    sub->add_option("--cache-dir", config.cache_dir, "featurization cache directory");
    sub->add_option("--checkpoint-dir", config.checkpoint_dir,
                    "checkpoint output directory");
    sub->add_option("--epochs", config.train.epochs, "training epochs");
    sub->add_option("--lr", config.train.learning_rate, "learning rate");
    sub->add_option("--batch-size", config.train.batch_size, "batch size");
  };

  std::string manifest_path;
  std::vector<std::string> manifest_paths;
  std::string out_path;
  std::string spec_path;
  std::string kind = "homogeneous";
  std::vector<std::string> members;
  std::vector<std::string> tags;
  std::string flops_mode = "both";
  std::string averaging = "weighted";
  int timing_reps = 0;
  int bench_warmup = 2;
  int bench_reps = 5;
  int n_synthetic = 8;
  bool build_mode = false;

  CLI::App* prep = app.add_subcommand("prep", "featurize a manifest into the cache");
  add_common(prep);
  prep->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();

  CLI::App* train_cmd =
      app.add_subcommand("train", "train one model per dataset tag");
  add_common(train_cmd);
  train_cmd->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
  train_cmd->add_option("--test-per-class", config.split.test_per_class,
                        "held-out clips per class (0 trains on everything)");

  CLI::App* train_mix =
      app.add_subcommand("train-mix", "train one model on the union of manifests");
  add_common(train_mix);
  train_mix->add_option("--manifest", manifest_paths, "dataset manifest CSV (repeat)")
      ->required();
  train_mix->add_option("--out", out_path, "checkpoint output path");
  train_mix->add_option("--test-per-class", config.split.test_per_class,
                        "held-out clips per class per manifest");

  CLI::App* kfold = app.add_subcommand("kfold", "k-fold cross-validation");
  add_common(kfold);
  kfold->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
  kfold->add_option("--k", config.kfolds, "number of folds");

  CLI::App* ens = app.add_subcommand("ensemble", "build or evaluate an ensemble");
  add_common(ens);
  ens->add_flag("--build", build_mode, "write an ensemble spec instead of evaluating");
  ens->add_option("--spec", spec_path, "ensemble spec JSON");
  ens->add_option("--manifest", manifest_path, "evaluation manifest CSV");
  ens->add_option("--kind", kind, "homogeneous or per_dataset");
  ens->add_option("--member", members, "member checkpoint (repeat)");
  ens->add_option("--tag", tags, "dataset tag per member (per_dataset builds)");
  ens->add_option("--out", out_path, "spec output path (build mode)");

  CLI::App* personalize =
      app.add_subcommand("personalize", "per-participant fine-tune and report");
  add_common(personalize);
  personalize->add_option("--manifest", manifest_path, "participant manifest CSV")
      ->required();
  personalize->add_option("--timing-reps", timing_reps,
                          "inference timing repetitions (0 keeps the report "
                          "deterministic)");
  personalize->add_option("--train-per-class", config.split.train_per_class,
                          "training clips per emotion");
  personalize->add_option("--test-per-class", config.split.test_per_class,
                          "held-out clips per emotion");

  CLI::App* flops = app.add_subcommand("flops", "analytic complexity of a model config");
  add_common(flops);
  flops->add_option("--mode", flops_mode, "parametric_mac, total_mac, or both");

  CLI::App* bench = app.add_subcommand("bench", "inference latency measurement");
  add_common(bench);
  bench->add_option("--ensemble", spec_path, "ensemble spec JSON to time");
  bench->add_option("--manifest", manifest_path, "clips to time (featurized)");
  bench->add_option("--samples", n_synthetic, "synthetic sample count if no manifest");
  bench->add_option("--warmup", bench_warmup, "warmup passes");
  bench->add_option("--reps", bench_reps, "timed passes");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval_cmd);
  eval_cmd->add_option("--manifest", manifest_path, "evaluation manifest CSV")->required();
  eval_cmd->add_option("--averaging", averaging, "weighted or macro");

  std::vector<std::string> cli_args(args.rbegin(), args.rend());
  try {
    app.parse(cli_args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (model_flag_given) {
      if (fs::exists(config.model_ref)) {
        config.model = vit::load_checkpoint(config.model_ref).config;
      } else {
        config.model = preset_config(config.model_ref);
      }
    }

    if (prep->parsed()) return run_prep(config, manifest_path);
    if (train_cmd->parsed()) return run_train(config, manifest_path);
    if (train_mix->parsed()) return run_train_mix(config, manifest_paths, out_path);
    if (kfold->parsed()) return run_kfold(config, manifest_path);
    if (ens->parsed()) {
      if (build_mode) {
        if (out_path.empty()) throw Error("ensemble --build needs --out");
        return run_ensemble_build(config, out_path, kind, members, tags);
      }
      if (spec_path.empty() || manifest_path.empty()) {
        throw Error("ensemble evaluation needs --spec and --manifest");
      }
      return run_ensemble_eval(config, spec_path, manifest_path);
    }
    if (personalize->parsed()) return run_personalize(config, manifest_path, timing_reps);
    if (flops->parsed()) return run_flops(config, flops_mode);
    if (bench->parsed()) {
      return run_bench(config, spec_path, manifest_path, n_synthetic, bench_warmup,
                       bench_reps);
    }
    if (eval_cmd->parsed()) return run_eval(config, manifest_path, averaging);
    throw Error("no subcommand selected");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ser::cli
