// Copyright 2026 The Allophone Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Audio ingestion (16 kHz mono PCM16 WAV), energy-based VAD segmentation,
// log-mel features, and the FEAT / manifest file formats.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "allophone/common.hpp"
#include "json.hpp"

namespace allo::dataprep {

inline constexpr std::uint32_t kSampleRate = 16000;

class UnsupportedFormat : public Error {
 public:
  explicit UnsupportedFormat(const std::string& what)
      : Error("unsupported audio format: " + what) {}
};

class AudioTooShort : public Error {
 public:
  AudioTooShort(std::size_t samples, std::size_t needed)
      : Error("audio has " + std::to_string(samples) +
              " samples, at least one frame (" + std::to_string(needed) +
              ") required") {}
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id)
      : Error("duplicate utterance id " + id) {}
};

class MissingFeatureFile : public Error {
 public:
  explicit MissingFeatureFile(const std::string& path)
      : Error("feature file not found: " + path) {}
};

struct AudioBuffer {
  std::vector<float> samples;  // in [-1, 1]
  std::uint32_t sample_rate = kSampleRate;
};

using FeatureMatrix = Matrix<float>;

// ---------------------------------------------------------------------------
// WAV

inline AudioBuffer parse_wav(std::istream& in, const std::string& name) {
  char tag[4];
  le::read_exact(in, tag, 4, name + " RIFF header");
  if (std::string(tag, 4) != "RIFF") throw CorruptFile(name + ": not RIFF");
  le::get_u32(in, name);
  le::read_exact(in, tag, 4, name + " RIFF header");
  if (std::string(tag, 4) != "WAVE") throw CorruptFile(name + ": not WAVE");

  bool have_fmt = false;
  while (true) {
    in.read(tag, 4);
    if (in.gcount() != 4) throw CorruptFile(name + ": no data chunk");
    const std::string id(tag, 4);
    const std::uint32_t size = le::get_u32(in, name);
    if (id == "fmt ") {
      if (size < 16) throw CorruptFile(name + ": short fmt chunk");
      std::string body(size, '\0');
      le::read_exact(in, body.data(), size, name + " fmt chunk");
      auto u16 = [&](std::size_t off) {
        return static_cast<std::uint32_t>(static_cast<std::uint8_t>(body[off])) |
               static_cast<std::uint32_t>(static_cast<std::uint8_t>(body[off + 1]))
                   << 8;
      };
      const auto format = u16(0);
      const auto channels = u16(2);
      const auto rate = u16(4) | (u16(6) << 16);
      const auto bits = u16(14);
      if (format != 1) throw UnsupportedFormat(name + ": encoding is not PCM");
      if (channels != 1)
        throw UnsupportedFormat(name + ": " + std::to_string(channels) +
                                " channels, mono required");
      if (rate != kSampleRate)
        throw UnsupportedFormat(name + ": sample rate " + std::to_string(rate) +
                                ", 16000 required");
      if (bits != 16)
        throw UnsupportedFormat(name + ": " + std::to_string(bits) +
                                "-bit samples, 16 required");
      if (size & 1) in.ignore(1);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw CorruptFile(name + ": data before fmt");
      if (size % 2) throw CorruptFile(name + ": odd data size");
      std::string body(size, '\0');
      le::read_exact(in, body.data(), size, name + " data chunk");
      AudioBuffer a;
      a.samples.resize(size / 2);
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto lo = static_cast<std::uint8_t>(body[2 * i]);
        const auto hi = static_cast<std::uint8_t>(body[2 * i + 1]);
        const auto v = static_cast<std::int16_t>(lo | (hi << 8));
        a.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return a;
    } else {
      in.ignore(size + (size & 1));
      if (!in) throw CorruptFile(name + ": truncated chunk " + id);
    }
  }
}

inline AudioBuffer load_audio(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return parse_wav(in, path);
}

inline void write_wav(std::ostream& out, const AudioBuffer& a) {
  const auto bytes = static_cast<std::uint32_t>(a.samples.size() * 2);
  out.write("RIFF", 4);
  le::put_u32(out, 36 + bytes);
  out.write("WAVEfmt ", 8);
  le::put_u32(out, 16);
  const std::uint32_t fmt_channels = 1u | (1u << 16);
  le::put_u32(out, fmt_channels);
  le::put_u32(out, a.sample_rate);
  le::put_u32(out, a.sample_rate * 2);
  le::put_u32(out, 2u | (16u << 16));
  out.write("data", 4);
  le::put_u32(out, bytes);
  for (float s : a.samples) {
    const long v = std::clamp(std::lround(double(s) * 32768.0), -32768L, 32767L);
    const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
    const char b[2] = {static_cast<char>(u & 0xff), static_cast<char>(u >> 8)};
    out.write(b, 2);
  }
}

inline void save_audio(const std::string& path, const AudioBuffer& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_wav(out, a);
}

// ---------------------------------------------------------------------------
// Framing shared by VAD and features

struct Framing {
  std::size_t frame;  // samples
  std::size_t hop;

  static Framing from_ms(double frame_ms, double hop_ms,
                         std::uint32_t rate = kSampleRate) {
    return {static_cast<std::size_t>(std::lround(frame_ms * rate / 1000.0)),
            static_cast<std::size_t>(std::lround(hop_ms * rate / 1000.0))};
  }
  /// 1 + floor((N - frame) / hop); throws if N < frame.
  std::size_t count(std::size_t n) const {
    if (n < frame) throw AudioTooShort(n, frame);
    return 1 + (n - frame) / hop;
  }
};

// ---------------------------------------------------------------------------
// VAD

struct VadConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double threshold_factor = 3.0;  // over the noise floor
  double min_silence_ms = 300.0;
  double min_segment_ms = 200.0;

  void validate() const {
    if (frame_ms <= 0 || hop_ms <= 0 || min_silence_ms <= 0 ||
        min_segment_ms <= 0)
      throw InvalidArgument("VAD durations must be positive");
    if (!(threshold_factor > 1.0))
      throw InvalidArgument("VAD threshold factor must exceed 1");
  }
  bool operator==(const VadConfig&) const = default;
};

struct Segment {
  std::size_t start;  // first sample
  std::size_t end;    // one past the last sample
  bool operator==(const Segment&) const = default;
};

inline std::vector<double> frame_rms(const AudioBuffer& audio,
                                     const Framing& fr) {
  const std::size_t T = fr.count(audio.samples.size());
  std::vector<double> e(T);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < fr.frame; ++i) {
      const double s = audio.samples[t * fr.hop + i];
      acc += s * s;
    }
    e[t] = std::sqrt(acc / double(fr.frame));
  }
  return e;
}

/// Speech regions as sample ranges. A frame is speech when its RMS energy
/// exceeds threshold_factor times the noise floor (10th percentile of frame
/// energies). Runs closer than min_silence merge; results shorter than
/// min_segment are dropped. A run of active frames [a, b] maps to samples
/// [a*hop + frame - hop, b*hop + hop): the last hop of the first frame and
/// the first hop of the last frame are where the onset and offset lie when
/// any speech sample triggers a frame.
inline std::vector<Segment> vad_split(const AudioBuffer& audio,
                                      const VadConfig& cfg = {}) {
  cfg.validate();
  const Framing fr = Framing::from_ms(cfg.frame_ms, cfg.hop_ms,
                                      audio.sample_rate);
  const auto energy = frame_rms(audio, fr);
  const std::size_t T = energy.size();
  auto sorted = energy;
  std::sort(sorted.begin(), sorted.end());
  const double floor = sorted[static_cast<std::size_t>(0.1 * double(T - 1))];
  const double threshold = floor * cfg.threshold_factor;

  std::vector<std::pair<std::size_t, std::size_t>> runs;  // frame ranges
  for (std::size_t t = 0; t < T; ++t) {
    if (!(energy[t] > threshold)) continue;
    if (!runs.empty() && runs.back().second + 1 == t)
      runs.back().second = t;
    else
      runs.emplace_back(t, t);
  }
  const double hop_ms = 1000.0 * double(fr.hop) / audio.sample_rate;
  std::vector<std::pair<std::size_t, std::size_t>> merged;
  for (const auto& r : runs) {
    if (!merged.empty()) {
      const double gap_ms = double(r.first - merged.back().second - 1) * hop_ms;
      if (gap_ms < cfg.min_silence_ms) {
        merged.back().second = r.second;
        continue;
      }
    }
    merged.push_back(r);
  }
  const std::size_t n = audio.samples.size();
  const auto min_len = static_cast<std::size_t>(
      std::lround(cfg.min_segment_ms * audio.sample_rate / 1000.0));
  std::vector<Segment> out;
  for (const auto& [a, b] : merged) {
    const std::size_t start = a * fr.hop + fr.frame - fr.hop;
    const std::size_t end = std::min(n, b * fr.hop + fr.hop);
    if (end > start && end - start >= min_len) out.push_back({start, end});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log-mel features

struct LogmelConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t fft_size = 512;
  std::size_t num_mels = 40;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  bool normalize = true;  // per-utterance mean/variance per coefficient
};

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw InvalidArgument("FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = x[i + k];
        const auto v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// num_mels triangular filters over FFT bins 0..fft/2; row m is filter m.
inline MatrixD mel_filterbank(const LogmelConfig& cfg, std::uint32_t rate) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.low_hz), hi = hz_to_mel(cfg.high_hz);
  std::vector<double> edges(cfg.num_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(cfg.num_mels + 1));
  MatrixD fb(cfg.num_mels, bins);
  for (std::size_t m = 0; m < cfg.num_mels; ++m) {
    const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = double(k) * rate / double(cfg.fft_size);
      if (f > l && f <= c)
        fb(m, k) = (f - l) / (c - l);
      else if (f > c && f < r)
        fb(m, k) = (r - f) / (r - c);
    }
  }
  return fb;
}

inline FeatureMatrix logmel(const AudioBuffer& audio,
                            const LogmelConfig& cfg = {}) {
  const Framing fr = Framing::from_ms(cfg.frame_ms, cfg.hop_ms,
                                      audio.sample_rate);
  if (fr.frame > cfg.fft_size)
    throw InvalidArgument("frame longer than FFT size");
  const std::size_t T = fr.count(audio.samples.size());
  const MatrixD fb = mel_filterbank(cfg, audio.sample_rate);
  const std::size_t bins = cfg.fft_size / 2 + 1;

  std::vector<double> window(fr.frame);
  for (std::size_t i = 0; i < fr.frame; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * double(i) /
                                       double(fr.frame - 1));

  MatrixD feats(T, cfg.num_mels);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::vector<double> mag(bins);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < fr.frame; ++i)
      buf[i] = audio.samples[t * fr.hop + i] * window[i];
    fft(buf);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    for (std::size_t m = 0; m < cfg.num_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb(m, k) * mag[k];
      feats(t, m) = std::log(std::max(e, 1e-10));
    }
  }

  if (cfg.normalize) {
    for (std::size_t m = 0; m < cfg.num_mels; ++m) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += feats(t, m);
      mean /= double(T);
      double var = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double d = feats(t, m) - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / double(T));
      for (std::size_t t = 0; t < T; ++t) {
        const double d = feats(t, m) - mean;
        feats(t, m) = sd > 1e-10 ? d / sd : 0.0;  // constant coefficient
      }
    }
  }

  FeatureMatrix out(T, cfg.num_mels);
  for (std::size_t i = 0; i < feats.size(); ++i)
    out.data[i] = static_cast<float>(feats.data[i]);
  return out;
}

inline MatrixD to_double(const FeatureMatrix& f) {
  MatrixD m(f.rows, f.cols);
  for (std::size_t i = 0; i < f.size(); ++i) m.data[i] = f.data[i];
  return m;
}

// ---------------------------------------------------------------------------
// FEAT files: "FEAT", u32 version, u32 rows, u32 cols, f32 row-major payload;
// all little-endian.

inline constexpr std::uint32_t kFeatVersion = 1;

inline void write_features(std::ostream& out, const FeatureMatrix& m) {
  if (m.rows < 1 || m.cols < 1)
    throw InvalidArgument("feature matrix must have T >= 1 rows and >= 1 column");
  for (float v : m.data)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
  out.write("FEAT", 4);
  le::put_u32(out, kFeatVersion);
  le::put_u32(out, static_cast<std::uint32_t>(m.rows));
  le::put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (float v : m.data) le::put_f32(out, v);
}

inline FeatureMatrix read_features(std::istream& in,
                                   const std::string& name = "features") {
  char magic[4];
  le::read_exact(in, magic, 4, name);
  if (std::string(magic, 4) != "FEAT") throw CorruptFile(name + ": bad magic");
  const auto version = le::get_u32(in, name);
  if (version != kFeatVersion)
    throw CorruptFile(name + ": unsupported version " + std::to_string(version));
  const auto rows = le::get_u32(in, name);
  const auto cols = le::get_u32(in, name);
  if (rows < 1 || cols < 1) throw CorruptFile(name + ": empty matrix");
  FeatureMatrix m(rows, cols);
  for (float& v : m.data) v = le::get_f32(in, name);
  if (in.peek() != std::char_traits<char>::eof())
    throw CorruptFile(name + ": trailing bytes");
  return m;
}

inline void save_features(const std::string& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_features(out, m);
}

inline FeatureMatrix load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFeatureFile(path);
  return read_features(in, path);
}

// ---------------------------------------------------------------------------
// Manifests: line-delimited JSON, one record per utterance:
//   {"features": "<path>", "id": "<utt>", "split": "train",
//    "transcript": ["a", "b", ...]}
// Relative feature paths resolve against the manifest's directory.

struct ManifestRecord {
  std::string id;
  std::string features;
  std::vector<std::string> transcript;
  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::string split = "train";
  std::vector<ManifestRecord> records;
  bool operator==(const Manifest&) const = default;
};

inline void validate_split(const std::string& s) {
  if (s != "train" && s != "dev" && s != "test")
    throw CorruptFile("split must be train, dev or test, got '" + s + "'");
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  validate_split(m.split);
  std::unordered_set<std::string> ids;
  for (const auto& r : m.records) {
    if (!ids.insert(r.id).second) throw DuplicateId(r.id);
    nlohmann::json j = {{"id", r.id},
                        {"features", r.features},
                        {"split", m.split},
                        {"transcript", r.transcript}};
    out << j.dump() << '\n';
  }
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_manifest(out, m);
}

inline Manifest read_manifest(std::istream& in, const std::string& name,
                              const std::filesystem::path& base_dir = {},
                              bool check_files = false) {
  Manifest m;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestRecord r{j.at("id").get<std::string>(),
                       j.at("features").get<std::string>(),
                       j.at("transcript").get<std::vector<std::string>>()};
      const auto split = j.at("split").get<std::string>();
      validate_split(split);
      if (first) m.split = split;
      if (split != m.split)
        throw CorruptFile(name + ":" + std::to_string(lineno) +
                          ": mixed splits in one manifest");
      first = false;
      if (!ids.insert(r.id).second) throw DuplicateId(r.id);
      if (check_files) {
        std::filesystem::path p(r.features);
        if (p.is_relative()) p = base_dir / p;
        if (!std::filesystem::exists(p)) throw MissingFeatureFile(p.string());
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptFile(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

inline Manifest load_manifest(const std::string& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  return read_manifest(in, path, std::filesystem::path(path).parent_path(),
                       check_files);
}

/// An utterance in memory: features plus phone-token transcript.
struct Utterance {
  std::string id;
  FeatureMatrix features;
  std::vector<std::string> transcript;
};

using Dataset = std::vector<Utterance>;

inline Dataset load_dataset(const std::string& manifest_path) {
  const Manifest m = load_manifest(manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  Dataset d;
  d.reserve(m.records.size());
  for (const auto& r : m.records) {
    std::filesystem::path p(r.features);
    if (p.is_relative()) p = base / p;
    d.push_back({r.id, load_features(p.string()), r.transcript});
  }
  return d;
}

}  // namespace allo::dataprep
