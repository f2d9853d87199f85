// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/melspec.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ser::melspec {

void MelParams::validate(int sample_rate_hz) const {
  if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0) {
    throw Error("n_fft must be a positive power of two, got " +
                std::to_string(n_fft));
  }
  if (hop <= 0 || hop > n_fft) throw Error("need 0 < hop <= n_fft");
  if (n_mels < 4) throw Error("n_mels must be at least 4");
  if (f_min_hz < 0) throw NegativeFrequency("f_min_hz must be nonnegative");
  if (!(f_min_hz < f_max_hz)) throw Error("need f_min_hz < f_max_hz");
  if (f_max_hz > sample_rate_hz / 2.0 + 1e-9) {
    throw Error("f_max_hz exceeds Nyquist of " + std::to_string(sample_rate_hz));
  }
  if (db_floor >= 0) throw Error("db_floor must be negative");
}

double hz_to_mel(double f_hz) {
  if (f_hz < 0) throw NegativeFrequency("negative frequency: " + std::to_string(f_hz));
  return 2595.0 * std::log10(1.0 + f_hz / 700.0);
}

double mel_to_hz(double mel) {
  if (mel < 0) throw NegativeFrequency("negative mel value: " + std::to_string(mel));
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank mel_filterbank(const MelParams& params, int sample_rate_hz) {
  params.validate(sample_rate_hz);
  const int n_bins = params.n_fft / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate_hz) / params.n_fft;

  // n_mels + 2 equally spaced points on the mel axis: filter i spans
  // edges[i] .. edges[i+2] with its peak at edges[i+1].
  const double mel_lo = hz_to_mel(params.f_min_hz);
  const double mel_hi = hz_to_mel(params.f_max_hz);
  std::vector<double> edges(params.n_mels + 2);
  for (int i = 0; i < params.n_mels + 2; ++i) {
    edges[i] = mel_lo + (mel_hi - mel_lo) * i / (params.n_mels + 1);
  }

  MelFilterbank fb;
  fb.n_mels = params.n_mels;
  fb.n_bins = n_bins;
  fb.weights.assign(static_cast<std::size_t>(params.n_mels) * n_bins, 0.0);
  fb.center_hz.resize(params.n_mels);

  for (int m = 0; m < params.n_mels; ++m) {
    fb.center_hz[m] = mel_to_hz(edges[m + 1]);
    double row_max = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      const double mel_k = hz_to_mel(k * bin_hz);
      double w = 0.0;
      if (mel_k > edges[m] && mel_k < edges[m + 2]) {
        w = mel_k <= edges[m + 1]
                ? (mel_k - edges[m]) / (edges[m + 1] - edges[m])
                : (edges[m + 2] - mel_k) / (edges[m + 2] - edges[m + 1]);
      }
      fb.weights[m * n_bins + k] = w;
      row_max = std::max(row_max, w);
    }
    if (row_max <= 0.0) {
      throw DegenerateBand("mel filter " + std::to_string(m) +
                           " captures no FFT bin; reduce n_mels or raise n_fft");
    }
    for (int k = 0; k < n_bins; ++k) fb.weights[m * n_bins + k] /= row_max;
  }
  return fb;
}

void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw Error("fft size must be a power of two, got " + std::to_string(n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  }
  return w;
}

std::vector<double> frame_power_spectrum(const std::vector<double>& windowed_frame) {
  const std::size_t n = windowed_frame.size();
  std::vector<std::complex<double>> spec(n);
  for (std::size_t i = 0; i < n; ++i) spec[i] = windowed_frame[i];
  fft(spec);

  // One-sided, scaled so the bin sum equals the frame energy.
  std::vector<double> power(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double mag2 = std::norm(spec[k]);
    const double fold = (k == 0 || k == n / 2) ? 1.0 : 2.0;
    power[k] = fold * mag2 / static_cast<double>(n);
  }
  return power;
}

MelMatrix mel_spectrogram(const audio::AudioClip& clip, const MelParams& params) {
  params.validate(clip.sample_rate_hz);
  const std::size_t n = clip.samples.size();
  if (n < static_cast<std::size_t>(params.n_fft)) {
    throw ClipTooShort("clip has " + std::to_string(n) + " samples, need at least " +
                       std::to_string(params.n_fft));
  }
  const MelFilterbank fb = mel_filterbank(params, clip.sample_rate_hz);
  const std::vector<double> window = hann_window(params.n_fft);
  const int n_frames =
      static_cast<int>((n - params.n_fft) / params.hop) + 1;

  // Mel power, row-major [n_mels x n_frames].
  std::vector<double> mel_power(
      static_cast<std::size_t>(params.n_mels) * n_frames, 0.0);
  std::vector<double> frame(params.n_fft);
  double p_max = 0.0;
  for (int t = 0; t < n_frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * params.hop;
    for (int i = 0; i < params.n_fft; ++i) {
      frame[i] = clip.samples[start + i] * window[i];
    }
    const std::vector<double> power = frame_power_spectrum(frame);
    for (int m = 0; m < params.n_mels; ++m) {
      double acc = 0.0;
      const double* w = &fb.weights[static_cast<std::size_t>(m) * fb.n_bins];
      for (int k = 0; k < fb.n_bins; ++k) acc += w[k] * power[k];
      mel_power[static_cast<std::size_t>(m) * n_frames + t] = acc;
      p_max = std::max(p_max, acc);
    }
  }

  MelMatrix out;
  out.n_mels = params.n_mels;
  out.n_frames = n_frames;
  out.db.resize(mel_power.size());
  if (p_max <= 0.0) {
    // Digital silence: nothing to normalize against.
    std::fill(out.db.begin(), out.db.end(), params.db_floor);
    return out;
  }
  for (std::size_t i = 0; i < mel_power.size(); ++i) {
    const double p = mel_power[i];
    const double db = p > 0.0 ? 10.0 * std::log10(p / p_max) : params.db_floor;
    out.db[i] = std::clamp(db, params.db_floor, 0.0);
  }
  return out;
}

namespace {

// Anchor colors of the built-in perceptual map (dark violet -> yellow),
// linearly interpolated to 256 entries at first use.
constexpr int kAnchorPos[9] = {0, 32, 64, 96, 128, 160, 192, 224, 255};
constexpr std::uint8_t kAnchorRgb[9][3] = {
    {68, 1, 84},    {72, 40, 120},  {62, 74, 137},
    {49, 104, 142}, {38, 130, 142}, {31, 158, 137},
    {53, 183, 121}, {109, 205, 89}, {253, 231, 37},
};

std::array<std::array<std::uint8_t, 3>, 256> make_colormap() {
  std::array<std::array<std::uint8_t, 3>, 256> table{};
  int seg = 0;
  for (int i = 0; i < 256; ++i) {
    while (seg + 1 < 8 && i > kAnchorPos[seg + 1]) ++seg;
    const double t = static_cast<double>(i - kAnchorPos[seg]) /
                     (kAnchorPos[seg + 1] - kAnchorPos[seg]);
    for (int ch = 0; ch < 3; ++ch) {
      const double v = (1.0 - t) * kAnchorRgb[seg][ch] + t * kAnchorRgb[seg + 1][ch];
      table[i][ch] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return table;
}

}  // namespace

const std::array<std::array<std::uint8_t, 3>, 256>& colormap() {
  static const auto table = make_colormap();
  return table;
}

Image render_image(const MelMatrix& mel_db, const MelParams& params) {
  if (mel_db.n_mels <= 0 || mel_db.n_frames <= 0) {
    throw Error("render_image: empty mel matrix");
  }
  for (double v : mel_db.db) {
    if (!std::isfinite(v)) throw NonFiniteInput("non-finite dB value");
  }
  const auto& map = colormap();

  // Colormapped field, flipped so low mel bands sit at the bottom.
  const int src_h = mel_db.n_mels;
  const int src_w = mel_db.n_frames;
  std::vector<double> field(static_cast<std::size_t>(src_h) * src_w * 3);
  for (int y = 0; y < src_h; ++y) {
    const int mel = src_h - 1 - y;
    for (int x = 0; x < src_w; ++x) {
      const double v =
          std::clamp((mel_db.at(mel, x) - params.db_floor) / -params.db_floor, 0.0, 1.0);
      const int idx = static_cast<int>(std::lround(v * 255.0));
      for (int ch = 0; ch < 3; ++ch) {
        field[(static_cast<std::size_t>(y) * src_w + x) * 3 + ch] =
            map[idx][ch] / 255.0;
      }
    }
  }

  Image out;
  out.h = kImageSize;
  out.w = kImageSize;
  out.c = kImageChannels;
  out.pixels.resize(static_cast<std::size_t>(out.h) * out.w * out.c);

  const double sy = static_cast<double>(src_h) / out.h;
  const double sx = static_cast<double>(src_w) / out.w;
  for (int y = 0; y < out.h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src_h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out.w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src_w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        auto src = [&](int yy, int xx) {
          return field[(static_cast<std::size_t>(yy) * src_w + xx) * 3 + ch];
        };
        const double top = (1.0 - wx) * src(y0, x0) + wx * src(y0, x1);
        const double bot = (1.0 - wx) * src(y1, x0) + wx * src(y1, x1);
        out.pixels[(static_cast<std::size_t>(y) * out.w + x) * 3 + ch] =
            static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image featurize_file(const std::string& wav_path, const MelParams& params,
                     int target_rate_hz) {
  audio::AudioClip clip = audio::decode_wav(wav_path);
  if (clip.sample_rate_hz != target_rate_hz) {
    clip = audio::resample(clip, target_rate_hz);
  }
  return render_image(mel_spectrogram(clip, params), params);
}

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24 & 0xff));
  out.push_back(static_cast<char>(v >> 16 & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void png_chunk(std::string& out, const char type[4], const std::string& body) {
  put_be32(out, static_cast<std::uint32_t>(body.size()));
  std::string payload(type, 4);
  payload += body;
  out += payload;
  put_be32(out, crc32(0, payload.data(), payload.size()));
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  if (image.c != 3) throw Error("write_png: need a 3-channel image");

  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.h) * (image.w * 3 + 1));
  for (int y = 0; y < image.h; ++y) {
    raw.push_back('\0');  // filter: none
    for (int x = 0; x < image.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(y, x, ch), 0.0f, 1.0f);
        raw.push_back(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("write_png: deflate failed");
  }
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(image.w));
  put_be32(ihdr, static_cast<std::uint32_t>(image.h));
  ihdr += '\x08';  // bit depth
  ihdr += '\x02';  // color type: truecolor
  ihdr += '\0';
  ihdr += '\0';
  ihdr += '\0';
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", compressed);
  png_chunk(out, "IEND", "");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

namespace {

constexpr char kMeltMagic[4] = {'M', 'E', 'L', 'T'};
constexpr std::uint32_t kMeltVersion = 1;

void put_le32(std::ofstream& f, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8 & 0xff),
               static_cast<char>(v >> 16 & 0xff), static_cast<char>(v >> 24 & 0xff)};
  f.write(b, 4);
}

std::uint32_t get_le32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw Error("truncated MELT file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_melt(const std::string& path, const Image& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f.write(kMeltMagic, 4);
  put_le32(f, kMeltVersion);
  put_le32(f, static_cast<std::uint32_t>(image.h));
  put_le32(f, static_cast<std::uint32_t>(image.w));
  put_le32(f, static_cast<std::uint32_t>(image.c));
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size() * 4));
  if (!f) throw Error("write failed: " + path);
}

Image read_melt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMeltMagic, 4) != 0) {
    throw Error(path + ": not a MELT file");
  }
  const std::uint32_t version = get_le32(f);
  if (version != kMeltVersion) {
    throw Error(path + ": unsupported MELT version " + std::to_string(version));
  }
  Image image;
  image.h = static_cast<int>(get_le32(f));
  image.w = static_cast<int>(get_le32(f));
  image.c = static_cast<int>(get_le32(f));
  if (image.h <= 0 || image.w <= 0 || image.c <= 0) {
    throw Error(path + ": bad MELT dims");
  }
  image.pixels.resize(static_cast<std::size_t>(image.h) * image.w * image.c);
  f.read(reinterpret_cast<char*>(image.pixels.data()),
         static_cast<std::streamsize>(image.pixels.size() * 4));
  if (!f) throw Error(path + ": truncated MELT payload");
  return image;
}

}  // namespace ser::melspec
