// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_MELSPEC_HPP_
#define SERKIT_MELSPEC_HPP_

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "ser/audio.hpp"
#include "ser/common.hpp"

namespace ser::melspec {

SERKIT_DEFINE_ERROR(NegativeFrequency);
SERKIT_DEFINE_ERROR(DegenerateBand);
SERKIT_DEFINE_ERROR(ClipTooShort);
SERKIT_DEFINE_ERROR(NonFiniteInput);

struct MelParams {
  int n_fft = 1024;   // power of two
  int hop = 256;
  int n_mels = 128;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  double db_floor = -80.0;  // window is always Hann

  void validate(int sample_rate_hz) const;
};

// m = 2595 * log10(1 + f/700), HTK-style mel scale.
double hz_to_mel(double f_hz);
double mel_to_hz(double mel);

// Triangular filters with peaks equally spaced on the mel axis. Rows are
// peak-normalized so every filter's maximum weight is exactly 1.
struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;                  // n_fft/2 + 1
  std::vector<double> weights;     // row-major [n_mels x n_bins]
  std::vector<double> center_hz;   // filter peak frequencies

  double at(int mel, int bin) const { return weights[mel * n_bins + bin]; }
};

MelFilterbank mel_filterbank(const MelParams& params, int sample_rate_hz);

// In-place iterative radix-2 FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a);

std::vector<double> hann_window(int n);

// One-sided power spectrum of one windowed frame, scaled so that the bin sum
// equals the windowed frame energy (Parseval).
std::vector<double> frame_power_spectrum(const std::vector<double>& windowed_frame);

// Column-major access: value(mel, frame).
struct MelMatrix {
  int n_mels = 0;
  int n_frames = 0;
  std::vector<double> db;  // row-major [n_mels x n_frames]

  double at(int mel, int frame) const { return db[mel * n_frames + frame]; }
  double& at(int mel, int frame) { return db[mel * n_frames + frame]; }
};

// Hann STFT -> power -> mel projection -> dB relative to the per-clip peak,
// clamped to [db_floor, 0]. All-zero input yields an all-floor matrix.
MelMatrix mel_spectrogram(const audio::AudioClip& clip, const MelParams& params);

// H x W x C image, channel-interleaved rows, every value in [0, 1].
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> pixels;

  float at(int y, int x, int ch) const { return pixels[(y * w + x) * c + ch]; }
};

inline constexpr int kImageSize = 224;
inline constexpr int kImageChannels = 3;

// The fixed 256-entry RGB colormap used for rendering; entry 255 is the color
// of 0 dB cells.
const std::array<std::array<std::uint8_t, 3>, 256>& colormap();

// dB matrix -> colormapped field -> bilinear resize to 224 x 224 x 3. Low mel
// bands render at the bottom of the image.
Image render_image(const MelMatrix& mel_db, const MelParams& params);

// decode -> downmix happens in decode -> resample to target rate -> mel ->
// image. The one-call featurizer used by training and the CLI.
Image featurize_file(const std::string& wav_path, const MelParams& params,
                     int target_rate_hz = 16000);

// 8-bit RGB PNG, for inspection.
void write_png(const std::string& path, const Image& image);

// Raw tensor file: magic MELT, version u32, dims u32 x3 (h, w, c), then
// float32 little-endian pixel data.
void write_melt(const std::string& path, const Image& image);
Image read_melt(const std::string& path);

}  // namespace ser::melspec

#endif  // SERKIT_MELSPEC_HPP_
