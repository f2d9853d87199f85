// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "ser/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace ser::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatIeeeFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

struct Reader {
  const unsigned char* p;
  std::size_t len;
  std::size_t pos = 0;

  bool can_read(std::size_t n) const { return pos + n <= len; }

  std::uint32_t u32() {
    if (!can_read(4)) throw MalformedHeader("truncated WAV file");
    std::uint32_t v = static_cast<std::uint32_t>(p[pos]) |
                      static_cast<std::uint32_t>(p[pos + 1]) << 8 |
                      static_cast<std::uint32_t>(p[pos + 2]) << 16 |
                      static_cast<std::uint32_t>(p[pos + 3]) << 24;
    pos += 4;
    return v;
  }

  std::uint16_t u16() {
    if (!can_read(2)) throw MalformedHeader("truncated WAV file");
    std::uint16_t v = static_cast<std::uint16_t>(
        p[pos] | static_cast<std::uint16_t>(p[pos + 1]) << 8);
    pos += 2;
    return v;
  }

  bool tag(const char* expect) {
    if (!can_read(4)) return false;
    bool ok = std::memcmp(p + pos, expect, 4) == 0;
    pos += 4;
    return ok;
  }
};

double int_sample(const unsigned char* p, int bits) {
  if (bits == 16) {
    std::int16_t v = static_cast<std::int16_t>(p[0] | p[1] << 8);
    return static_cast<double>(v) / 32768.0;
  }
  // 24-bit little endian, sign-extend.
  std::int32_t v = p[0] | p[1] << 8 | p[2] << 16;
  if (v & 0x800000) v |= ~0xffffff;
  return static_cast<double>(v) / 8388608.0;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
  out.push_back(static_cast<char>(v >> 16 & 0xff));
  out.push_back(static_cast<char>(v >> 24 & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8 & 0xff));
}

}  // namespace

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(kNumEmotions, 0);
  for (const auto& e : entries) counts[static_cast<int>(e.emotion)]++;
  return counts;
}

AudioClip decode_wav(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  Reader r{bytes.data(), bytes.size()};

  if (!r.tag("RIFF")) throw MalformedHeader(path + ": missing RIFF magic");
  const std::uint32_t riff_size = r.u32();
  if (riff_size + 8 > bytes.size() + 8 && riff_size < 4) {
    throw MalformedHeader(path + ": bad RIFF chunk size");
  }
  if (!r.tag("WAVE")) throw MalformedHeader(path + ": missing WAVE form type");

  std::uint16_t format = 0;
  int channels = 0;
  int sample_rate = 0;
  int bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  while (r.can_read(8)) {
    char id[4];
    std::memcpy(id, r.p + r.pos, 4);
    r.pos += 4;
    std::uint32_t size = r.u32();
    if (!r.can_read(size)) throw MalformedHeader(path + ": chunk overruns file");
    const unsigned char* body = r.p + r.pos;

    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw MalformedHeader(path + ": fmt chunk too small");
      Reader f{body, size};
      format = f.u16();
      channels = f.u16();
      sample_rate = static_cast<int>(f.u32());
      f.u32();  // byte rate
      f.u16();  // block align
      bits = f.u16();
      if (format == kFormatExtensible) {
        // Resolve the real format from the SubFormat GUID.
        if (size < 40) throw MalformedHeader(path + ": extensible fmt too small");
        f.u16();  // cbSize
        f.u16();  // valid bits
        f.u32();  // channel mask
        format = f.u16();
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = size;
    }
    // Chunks are word aligned.
    r.pos += size + (size & 1);
  }

  if (!have_fmt) throw MalformedHeader(path + ": no fmt chunk");
  if (data == nullptr) throw MalformedHeader(path + ": no data chunk");
  if (channels != 1 && channels != 2) {
    throw UnsupportedEncoding(path + ": " + std::to_string(channels) +
                              " channels (want 1 or 2)");
  }
  if (sample_rate <= 0) throw MalformedHeader(path + ": bad sample rate");

  const bool is_float = format == kFormatIeeeFloat;
  if (format != kFormatPcm && !is_float) {
    throw UnsupportedEncoding(path + ": format code " + std::to_string(format));
  }
  if (is_float && bits != 32) {
    throw UnsupportedEncoding(path + ": " + std::to_string(bits) +
                              "-bit float (want 32)");
  }
  if (!is_float && bits != 16 && bits != 24) {
    throw UnsupportedEncoding(path + ": " + std::to_string(bits) +
                              "-bit PCM (want 16 or 24)");
  }

  const std::size_t bytes_per_sample = static_cast<std::size_t>(bits) / 8;
  const std::size_t frame_size = bytes_per_sample * channels;
  const std::size_t n_frames = data_len / frame_size;
  if (n_frames == 0) throw EmptyAudio(path + ": zero audio frames");

  AudioClip clip;
  clip.sample_rate_hz = sample_rate;
  clip.source_path = path;
  clip.samples.resize(n_frames);

  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < channels; ++ch) {
      const unsigned char* s = data + i * frame_size + ch * bytes_per_sample;
      if (is_float) {
        float v;
        std::memcpy(&v, s, 4);
        acc += static_cast<double>(v);
      } else {
        acc += int_sample(s, bits);
      }
    }
    clip.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return clip;
}

void write_wav_pcm16(const std::string& path, const AudioClip& clip) {
  if (clip.samples.empty()) throw EmptyAudio("refusing to write empty clip");
  if (clip.sample_rate_hz <= 0) throw Error("write_wav_pcm16: bad sample rate");

  const std::uint32_t data_size =
      static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_size);
  for (double s : clip.samples) {
    const long q = std::lround(s * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(
                     std::clamp<long>(q, -32768, 32767) & 0xffff));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

namespace {

double sinc(double x) {
  if (std::fabs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate_hz) {
  if (target_rate_hz <= 0) throw Error("resample: target rate must be positive");
  if (clip.sample_rate_hz == target_rate_hz) return clip;

  const double ratio =
      static_cast<double>(target_rate_hz) / clip.sample_rate_hz;
  // Cutoff as a fraction of the source Nyquist; widen the kernel when
  // downsampling so the transition band stays proportional.
  const double cutoff = std::min(1.0, ratio);
  constexpr int kTapsPerSide = 32;
  const int support =
      static_cast<int>(std::ceil(kTapsPerSide / cutoff));

  const std::size_t n_in = clip.samples.size();
  const std::size_t n_out = static_cast<std::size_t>(
      (n_in * static_cast<std::uint64_t>(target_rate_hz) +
       clip.sample_rate_hz / 2) /
      clip.sample_rate_hz);

  AudioClip out;
  out.sample_rate_hz = target_rate_hz;
  out.source_path = clip.source_path;
  out.samples.resize(n_out);

  for (std::size_t n = 0; n < n_out; ++n) {
    const double center = static_cast<double>(n) / ratio;
    const long first = std::lround(std::floor(center)) - support + 1;
    const long last = std::lround(std::floor(center)) + support;
    double acc = 0.0;
    double wsum = 0.0;
    for (long j = std::max<long>(first, 0);
         j <= std::min<long>(last, static_cast<long>(n_in) - 1); ++j) {
      const double x = center - static_cast<double>(j);
      const double u = x / support;  // in [-1, 1]
      const double window = 0.5 * (1.0 + std::cos(M_PI * u));
      const double w = cutoff * sinc(cutoff * x) * window;
      acc += w * clip.samples[j];
      wsum += w;
    }
    out.samples[n] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);

  std::string line;
  if (!std::getline(in, line)) throw MissingColumn(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,emotion,speaker,dataset") {
    throw MissingColumn(path + ": header must be 'path,emotion,speaker,dataset', got '" +
                        line + "'");
  }

  DatasetManifest manifest;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 4) {
      throw MissingColumn(path + ":" + std::to_string(line_no) +
                          ": expected 4 fields, got " +
                          std::to_string(fields.size()));
    }

    ManifestEntry entry;
    entry.clip_path = fields[0];
    try {
      entry.emotion = emotion_from_name(fields[1]);
    } catch (const Error&) {
      throw UnknownEmotionLabel(path + ":" + std::to_string(line_no) +
                                ": unknown emotion '" + fields[1] + "'");
    }
    entry.speaker_id = fields[2];
    entry.dataset_tag = fields[3];

    if (!seen.insert(entry.clip_path).second) {
      throw DuplicatePath(path + ":" + std::to_string(line_no) +
                          ": duplicate clip path '" + entry.clip_path + "'");
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << "path,emotion,speaker,dataset\n";
  for (const auto& e : manifest.entries) {
    out << e.clip_path << ',' << emotion_name(e.emotion) << ',' << e.speaker_id
        << ',' << e.dataset_tag << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

}  // namespace ser::audio
