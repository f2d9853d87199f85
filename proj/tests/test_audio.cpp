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
#include "ser/audio.hpp"
#include "testutil.hpp"

using namespace ser;
using namespace ser::audio;
using sertest::TempDir;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> 8 * i & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
}

// Hand-rolled WAV writer independent of the production encoder.
std::string wav_bytes(std::uint16_t format, int channels, int rate, int bits,
                      const std::string& payload) {
  std::string out = "RIFF";
  put_u32(out, static_cast<std::uint32_t>(36 + payload.size()));
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(rate));
  put_u32(out, static_cast<std::uint32_t>(rate * channels * bits / 8));
  put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(out, static_cast<std::uint16_t>(bits));
  out += "data";
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out += payload;
  return out;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string pcm16(std::initializer_list<int> samples) {
  std::string payload;
  for (int s : samples) put_u16(payload, static_cast<std::uint16_t>(s & 0xffff));
  return payload;
}

}  // namespace

TEST_SUITE_BEGIN("audio");

TEST_CASE("decode_wav scales 16-bit PCM by 1/32768") {
  TempDir dir("wav16");
  write_file(dir.file("a.wav"), wav_bytes(1, 1, 16000, 16, pcm16({32767, 0, -32768})));
  const AudioClip clip = decode_wav(dir.file("a.wav"));
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.samples[0] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-12));
  CHECK(clip.samples[1] == 0.0);
  CHECK(clip.samples[2] == -1.0);
  CHECK(clip.sample_rate_hz == 16000);
}

TEST_CASE("decode_wav handles 24-bit PCM and 32-bit float") {
  TempDir dir("wav2432");
  std::string p24;
  // +2^23-1, -2^23
  p24 += '\xff'; p24 += '\xff'; p24 += '\x7f';
  p24 += '\x00'; p24 += '\x00'; p24 += '\x80';
  write_file(dir.file("a24.wav"), wav_bytes(1, 1, 8000, 24, p24));
  AudioClip c24 = decode_wav(dir.file("a24.wav"));
  CHECK(c24.samples[0] == doctest::Approx((8388607.0) / 8388608.0).epsilon(1e-12));
  CHECK(c24.samples[1] == -1.0);

  std::string pf;
  const float vals[2] = {0.25f, -0.5f};
  pf.resize(8);
  std::memcpy(pf.data(), vals, 8);
  write_file(dir.file("af.wav"), wav_bytes(3, 1, 8000, 32, pf));
  AudioClip cf = decode_wav(dir.file("af.wav"));
  CHECK(cf.samples[0] == 0.25);
  CHECK(cf.samples[1] == -0.5);
}

TEST_CASE("decode_wav downmixes stereo by channel mean") {
  TempDir dir("stereo");
  write_file(dir.file("s.wav"), wav_bytes(1, 2, 8000, 16, pcm16({16384, -16384, 8192, 8192})));
  const AudioClip clip = decode_wav(dir.file("s.wav"));
  REQUIRE(clip.samples.size() == 2);
  CHECK(clip.samples[0] == 0.0);
  CHECK(clip.samples[1] == doctest::Approx(8192.0 / 32768.0).epsilon(1e-12));
}

TEST_CASE("decode_wav error paths") {
  TempDir dir("badwav");
  write_file(dir.file("notriff.wav"), "JUNKxxxxxxxxxxxxxxxxxxx");
  CHECK_THROWS_AS(decode_wav(dir.file("notriff.wav")), MalformedHeader);

  write_file(dir.file("mp3.wav"), wav_bytes(0x0055, 1, 8000, 16, pcm16({0})));
  CHECK_THROWS_AS(decode_wav(dir.file("mp3.wav")), UnsupportedEncoding);

  write_file(dir.file("empty.wav"), wav_bytes(1, 1, 8000, 16, ""));
  CHECK_THROWS_AS(decode_wav(dir.file("empty.wav")), EmptyAudio);

  // Chunk size pointing past the end of the file.
  std::string truncated = wav_bytes(1, 1, 8000, 16, pcm16({1, 2, 3}));
  truncated.resize(truncated.size() - 2);
  write_file(dir.file("trunc.wav"), truncated);
  CHECK_THROWS_AS(decode_wav(dir.file("trunc.wav")), MalformedHeader);
}

TEST_CASE("16-bit encode/decode round trip stays within one quantization step") {
  TempDir dir("roundtrip");
  Rng rng(11);
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  for (int i = 0; i < 512; ++i) clip.samples.push_back(rng.uniform(-1.0, 1.0));
  clip.samples.push_back(1.0);
  clip.samples.push_back(-1.0);
  write_wav_pcm16(dir.file("r.wav"), clip);
  const AudioClip back = decode_wav(dir.file("r.wav"));
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    CHECK(std::fabs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);
  }
}

TEST_CASE("resample preserves DC level") {
  AudioClip clip;
  clip.sample_rate_hz = 44100;
  clip.samples.assign(44100, 0.5);
  const AudioClip out = resample(clip, 16000);
  CHECK(out.sample_rate_hz == 16000);
  for (double s : out.samples) CHECK(std::fabs(s - 0.5) < 1e-3);
}

TEST_CASE("resampled sine keeps its spectral peak") {
  const AudioClip tone = sertest::make_tone(440.0, 1.0, 44100);
  const AudioClip out = resample(tone, 16000);

  // Hann-window 4096 samples from the middle and locate the DFT peak.
  std::vector<double> frame(4096);
  for (int i = 0; i < 4096; ++i) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / 4096.0));
    frame[i] = out.samples[2048 + i] * w;
  }
  const auto spec = sertest::naive_dft(frame);
  int peak = 1;
  for (int k = 1; k < 2048; ++k) {
    if (std::abs(spec[k]) > std::abs(spec[peak])) peak = k;
  }
  const double expected_bin = 440.0 * 4096.0 / 16000.0;
  CHECK(std::fabs(peak - expected_bin) <= 1.0);
}

TEST_CASE("resample output length tracks duration") {
  AudioClip clip;
  clip.sample_rate_hz = 48000;
  clip.samples.assign(48000, 0.1);
  const AudioClip out = resample(clip, 16000);
  CHECK(std::llabs(static_cast<long long>(out.samples.size()) - 16000) <= 1);
}

TEST_CASE("resample is linear in its input") {
  const AudioClip x = sertest::make_tone(523.0, 0.25, 22050, 0.3);
  AudioClip ax = x;
  const double a = 1.7;
  for (double& s : ax.samples) s *= a;
  const AudioClip rx = resample(x, 16000);
  const AudioClip rax = resample(ax, 16000);
  REQUIRE(rx.samples.size() == rax.samples.size());
  for (std::size_t i = 0; i < rx.samples.size(); ++i) {
    CHECK(rax.samples[i] == doctest::Approx(a * rx.samples[i]).epsilon(1e-12));
  }
}

TEST_CASE("load_manifest accepts a 40-row participant file") {
  TempDir dir("manifest");
  const std::string path = sertest::write_participant(dir, 10);
  const DatasetManifest manifest = load_manifest(path);
  CHECK(manifest.entries.size() == 40);
  const auto counts = manifest.class_counts();
  for (int c = 0; c < kNumEmotions; ++c) CHECK(counts[c] == 10);
  // Every accepted row appears exactly once.
  std::set<std::string> paths;
  for (const auto& e : manifest.entries) paths.insert(e.clip_path);
  CHECK(paths.size() == 40);
}

TEST_CASE("load_manifest rejects bad rows") {
  TempDir dir("manifest-bad");
  auto write_csv = [&](const std::string& name, const std::string& body) {
    std::ofstream f(dir.file(name));
    f << body;
    return dir.file(name);
  };

  CHECK_THROWS_AS(
      load_manifest(write_csv("label.csv",
                              "path,emotion,speaker,dataset\na.wav,disgust,s,RAVDESS\n")),
      UnknownEmotionLabel);
  CHECK_THROWS_AS(
      load_manifest(write_csv("dup.csv",
                              "path,emotion,speaker,dataset\n"
                              "a.wav,happy,s,TESS\na.wav,sad,s,TESS\n")),
      DuplicatePath);
  CHECK_THROWS_AS(load_manifest(write_csv("hdr.csv", "file,emotion,speaker\n")),
                  MissingColumn);
  CHECK_THROWS_AS(
      load_manifest(write_csv("short.csv",
                              "path,emotion,speaker,dataset\na.wav,happy,s\n")),
      MissingColumn);
}

TEST_SUITE_END();
