// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include <cstring>

#include "doctest.h"
#include "ser/melspec.hpp"
#include "testutil.hpp"

using namespace ser;
using namespace ser::melspec;
using sertest::TempDir;

TEST_SUITE_BEGIN("melspec");

TEST_CASE("mel scale formula") {
  CHECK(hz_to_mel(0.0) == 0.0);
  // 2595 * log10(2), evaluated at high precision.
  CHECK(hz_to_mel(700.0) == doctest::Approx(781.17283874803).epsilon(1e-12));
  CHECK_THROWS_AS(hz_to_mel(-1.0), NegativeFrequency);

  for (double f : {100.0, 1000.0, 7999.0}) {
    CHECK(mel_to_hz(hz_to_mel(f)) == doctest::Approx(f).epsilon(1e-9));
  }
}

TEST_CASE("filterbank geometry") {
  MelParams params;
  const MelFilterbank fb = mel_filterbank(params, 16000);
  REQUIRE(fb.n_mels == 128);
  REQUIRE(fb.n_bins == 513);

  for (int m = 1; m < fb.n_mels; ++m) CHECK(fb.center_hz[m] > fb.center_hz[m - 1]);

  for (int m = 0; m < fb.n_mels; ++m) {
    double row_max = 0.0;
    for (int k = 0; k < fb.n_bins; ++k) {
      CHECK(fb.at(m, k) >= 0.0);
      row_max = std::max(row_max, fb.at(m, k));
    }
    CHECK(row_max == 1.0);
  }

  // Every bin strictly inside (f_min, f_max) is covered by some filter.
  const double bin_hz = 16000.0 / params.n_fft;
  for (int k = 0; k < fb.n_bins; ++k) {
    const double f = k * bin_hz;
    if (f <= params.f_min_hz || f >= params.f_max_hz) continue;
    double weight = 0.0;
    for (int m = 0; m < fb.n_mels; ++m) weight = std::max(weight, fb.at(m, k));
    CHECK(weight > 0.0);
  }
}

TEST_CASE("filterbank rejects more mels than usable bins") {
  MelParams params;
  params.n_fft = 32;  // 17 bins
  params.n_mels = 64;
  params.hop = 16;
  CHECK_THROWS_AS(mel_filterbank(params, 16000), DegenerateBand);
}

TEST_CASE("stft power matches the naive DFT oracle") {
  Rng rng(202);
  for (int n : {64, 128, 512}) {
    std::vector<double> frame(n);
    for (auto& v : frame) v = rng.uniform(-1.0, 1.0);
    const auto power = frame_power_spectrum(frame);
    const auto spec = sertest::naive_dft(frame);
    REQUIRE(static_cast<int>(power.size()) == n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) {
      const double fold = (k == 0 || k == n / 2) ? 1.0 : 2.0;
      const double expected = fold * std::norm(spec[k]) / n;
      CHECK(power[k] == doctest::Approx(expected).epsilon(1e-9));
      CHECK(std::fabs(power[k] - expected) < 1e-9);
    }
  }
}

TEST_CASE("Parseval: power bins sum to windowed frame energy") {
  Rng rng(7);
  std::vector<double> frame(256);
  for (auto& v : frame) v = rng.uniform(-1.0, 1.0);
  const auto power = frame_power_spectrum(frame);
  double bin_sum = 0.0, energy = 0.0;
  for (double p : power) bin_sum += p;
  for (double v : frame) energy += v * v;
  CHECK(bin_sum == doctest::Approx(energy).epsilon(1e-6));
}

TEST_CASE("mel spectrogram of silence sits at the floor") {
  audio::AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.assign(4096, 0.0);
  MelParams params;
  const MelMatrix mel = mel_spectrogram(clip, params);
  for (double v : mel.db) CHECK(v == params.db_floor);
}

TEST_CASE("pure tone lands on the nearest mel filter") {
  const audio::AudioClip tone = sertest::make_tone(1000.0, 0.5, 16000);
  MelParams params;
  const MelMatrix mel = mel_spectrogram(tone, params);

  // Expected bin from the mel-axis geometry alone.
  const double mel_lo = hz_to_mel(params.f_min_hz);
  const double mel_hi = hz_to_mel(params.f_max_hz);
  const double target = hz_to_mel(1000.0);
  int expected = 0;
  double best = 1e300;
  for (int m = 0; m < params.n_mels; ++m) {
    const double center = mel_lo + (mel_hi - mel_lo) * (m + 1) / (params.n_mels + 1);
    if (std::fabs(center - target) < best) {
      best = std::fabs(center - target);
      expected = m;
    }
  }

  for (int t = 0; t < mel.n_frames; ++t) {
    int argmax = 0;
    for (int m = 1; m < mel.n_mels; ++m) {
      if (mel.at(m, t) > mel.at(argmax, t)) argmax = m;
    }
    CHECK(argmax == expected);
  }
}

TEST_CASE("loudest cell of a mel spectrogram is 0 dB") {
  const audio::AudioClip tone = sertest::make_tone(523.0, 0.3, 16000);
  const MelMatrix mel = mel_spectrogram(tone, MelParams{});
  double peak = -1e300;
  for (double v : mel.db) peak = std::max(peak, v);
  CHECK(peak == 0.0);
}

TEST_CASE("mel spectrogram rejects too-short clips") {
  audio::AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.assign(100, 0.1);
  CHECK_THROWS_AS(mel_spectrogram(clip, MelParams{}), ClipTooShort);
}

TEST_CASE("render_image maps a constant field to a constant color") {
  MelParams params;
  MelMatrix mel;
  mel.n_mels = 8;
  mel.n_frames = 5;
  mel.db.assign(40, -20.0);
  const Image image = render_image(mel, params);
  REQUIRE(image.h == 224);
  REQUIRE(image.w == 224);
  REQUIRE(image.c == 3);
  for (int ch = 0; ch < 3; ++ch) {
    const float first = image.at(0, 0, ch);
    for (int y = 0; y < image.h; ++y) {
      for (int x = 0; x < image.w; ++x) CHECK(image.at(y, x, ch) == first);
    }
  }
}

TEST_CASE("render_image shape holds for single-frame input") {
  MelParams params;
  MelMatrix mel;
  mel.n_mels = 128;
  mel.n_frames = 1;
  mel.db.assign(128, -10.0);
  const Image image = render_image(mel, params);
  CHECK(image.h == 224);
  CHECK(image.w == 224);
  CHECK(image.pixels.size() == 224u * 224u * 3u);
}

TEST_CASE("0 dB cells take the last colormap entry") {
  MelParams params;
  MelMatrix mel;
  mel.n_mels = 4;
  mel.n_frames = 4;
  mel.db.assign(16, 0.0);
  const Image image = render_image(mel, params);
  const auto& last = colormap()[255];
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(image.at(100, 100, ch) == doctest::Approx(last[ch] / 255.0).epsilon(1e-12));
  }
}

TEST_CASE("render_image rejects non-finite input") {
  MelParams params;
  MelMatrix mel;
  mel.n_mels = 4;
  mel.n_frames = 2;
  mel.db.assign(8, -5.0);
  mel.db[3] = std::nan("");
  CHECK_THROWS_AS(render_image(mel, params), NonFiniteInput);
}

TEST_CASE("featurization is byte-deterministic and amplitude-invariant") {
  TempDir dir("feat");
  const audio::AudioClip tone = sertest::make_tone(700.0, 0.4, 16000, 0.3);
  MelParams params;

  const Image a = render_image(mel_spectrogram(tone, params), params);
  const Image b = render_image(mel_spectrogram(tone, params), params);
  REQUIRE(a.pixels.size() == b.pixels.size());
  CHECK(std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * 4) == 0);

  for (double scale : {2.0, 0.5, 3.7}) {
    audio::AudioClip scaled = tone;
    for (double& s : scaled.samples) s *= scale;
    const Image c = render_image(mel_spectrogram(scaled, params), params);
    CHECK(std::memcmp(a.pixels.data(), c.pixels.data(), a.pixels.size() * 4) == 0);
  }
}

TEST_CASE("PNG and MELT writers produce readable artifacts") {
  TempDir dir("io");
  const audio::AudioClip tone = sertest::make_tone(880.0, 0.3, 16000);
  MelParams params;
  const Image image = render_image(mel_spectrogram(tone, params), params);

  write_png(dir.file("spec.png"), image);
  const auto png = sertest::read_bytes(dir.file("spec.png"));
  REQUIRE(png.size() > 8);
  CHECK(std::memcmp(png.data() + 1, "PNG", 3) == 0);

  write_melt(dir.file("spec.melt"), image);
  const Image back = read_melt(dir.file("spec.melt"));
  REQUIRE(back.h == image.h);
  REQUIRE(back.w == image.w);
  REQUIRE(back.c == image.c);
  CHECK(std::memcmp(back.pixels.data(), image.pixels.data(), image.pixels.size() * 4) == 0);
}

TEST_SUITE_END();
