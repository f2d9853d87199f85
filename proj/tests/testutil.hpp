// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_TESTS_TESTUTIL_HPP_
#define SERKIT_TESTS_TESTUTIL_HPP_

#include <atomic>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ser/audio.hpp"
#include "ser/common.hpp"
#include "ser/melspec.hpp"
#include "ser/training.hpp"

namespace sertest {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("serkit-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline ser::audio::AudioClip make_tone(double freq_hz, double seconds, int rate,
                                       double amplitude = 0.5) {
  ser::audio::AudioClip clip;
  clip.sample_rate_hz = rate;
  const std::size_t n = static_cast<std::size_t>(seconds * rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    clip.samples[i] = amplitude * std::sin(2.0 * M_PI * freq_hz * i / rate);
  }
  return clip;
}

// O(n^2) DFT, the spectral oracle.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double phi = -2.0 * M_PI * static_cast<double>(k) * t / n;
      acc += x[t] * std::complex<double>(std::cos(phi), std::sin(phi));
    }
    out[k] = acc;
  }
  return out;
}

// Images whose dominant color encodes the class, with a little seeded noise;
// linearly separable by construction.
inline std::vector<ser::train::LabeledImage> separable_images(int per_class,
                                                              std::uint64_t seed,
                                                              int image_size = 224) {
  constexpr float kBase[4][3] = {{0.9f, 0.1f, 0.1f},
                                 {0.1f, 0.9f, 0.1f},
                                 {0.1f, 0.1f, 0.9f},
                                 {0.8f, 0.8f, 0.1f}};
  ser::Rng rng(seed);
  std::vector<ser::train::LabeledImage> out;
  for (int c = 0; c < ser::kNumEmotions; ++c) {
    for (int i = 0; i < per_class; ++i) {
      ser::melspec::Image image;
      image.h = image.w = image_size;
      image.c = 3;
      image.pixels.resize(static_cast<std::size_t>(image_size) * image_size * 3);
      for (std::size_t p = 0; p < image.pixels.size(); ++p) {
        const float noise = static_cast<float>(rng.uniform(-0.05, 0.05));
        image.pixels[p] = kBase[c][p % 3] + noise;
      }
      out.push_back({std::move(image), static_cast<ser::Emotion>(c)});
    }
  }
  return out;
}

// A synthetic participant: `per_class` clips per emotion, each emotion a
// distinct pure tone. Writes WAVs plus a manifest CSV and returns the
// manifest path.
inline std::string write_participant(const TempDir& dir, int per_class,
                                     int rate = 16000, double seconds = 0.5) {
  constexpr double kTones[4] = {300.0, 600.0, 1200.0, 2400.0};
  std::ofstream csv(dir.file("participant.csv"));
  csv << "path,emotion,speaker,dataset\n";
  for (int c = 0; c < ser::kNumEmotions; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const std::string name = std::string(ser::emotion_name(static_cast<ser::Emotion>(c))) +
                               "_" + std::to_string(i) + ".wav";
      const std::string path = dir.file(name);
      // Slight per-clip amplitude variation keeps the files distinct.
      ser::audio::write_wav_pcm16(
          path, make_tone(kTones[c], seconds, rate, 0.4 + 0.02 * i));
      csv << path << ',' << ser::emotion_name(static_cast<ser::Emotion>(c))
          << ",p1,participant-1\n";
    }
  }
  csv.close();
  return dir.file("participant.csv");
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace sertest

#endif  // SERKIT_TESTS_TESTUTIL_HPP_
