// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_AUDIO_HPP_
#define SERKIT_AUDIO_HPP_

#include <string>
#include <vector>

#include "ser/common.hpp"

namespace ser::audio {

SERKIT_DEFINE_ERROR(MalformedHeader);
SERKIT_DEFINE_ERROR(UnsupportedEncoding);
SERKIT_DEFINE_ERROR(EmptyAudio);
SERKIT_DEFINE_ERROR(UnknownEmotionLabel);
SERKIT_DEFINE_ERROR(DuplicatePath);
SERKIT_DEFINE_ERROR(MissingColumn);

// Decoded mono waveform. Samples are kept as doubles so downstream DSP works
// at full precision; WAV integer samples are exactly representable.
struct AudioClip {
  std::vector<double> samples;  // each in [-1, 1]
  int sample_rate_hz = 0;
  std::string source_path;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

struct ManifestEntry {
  std::string clip_path;
  Emotion emotion = Emotion::kNeutral;
  std::string speaker_id;
  std::string dataset_tag;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  // Entry counts per emotion, indexed by the enum value.
  std::vector<std::size_t> class_counts() const;
};

// Reads a RIFF/WAVE file. Accepts PCM 16/24-bit integer and 32-bit IEEE
// float, 1 or 2 channels (stereo is downmixed by channel mean). Integer
// samples are scaled by 1/2^(bits-1).
AudioClip decode_wav(const std::string& path);

// Writes `clip` as 16-bit PCM. Samples are quantized with round-to-nearest,
// so a decode of the result differs from the input by at most 1/32768.
void write_wav_pcm16(const std::string& path, const AudioClip& clip);

// Band-limited windowed-sinc resampling with the low-pass cutoff at the
// smaller of the two Nyquist frequencies. Per-sample kernel normalization
// makes DC signals pass through unchanged.
AudioClip resample(const AudioClip& clip, int target_rate_hz);

// CSV with header exactly `path,emotion,speaker,dataset`. Labels outside the
// four-class set and duplicate paths are rejected.
DatasetManifest load_manifest(const std::string& path);

void save_manifest(const std::string& path, const DatasetManifest& manifest);

}  // namespace ser::audio

#endif  // SERKIT_AUDIO_HPP_
