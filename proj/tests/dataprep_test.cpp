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

#include "allophone/dataprep.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

namespace allo::dataprep {
namespace {

/// Hand-built RIFF/WAVE bytes; independent of write_wav.
std::string raw_wav(std::uint16_t format, std::uint16_t channels,
                    std::uint32_t rate, std::uint16_t bits,
                    const std::vector<std::int16_t>& samples) {
  auto u16 = [](std::string& s, std::uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char(v >> 8));
  };
  auto u32 = [&](std::string& s, std::uint32_t v) {
    u16(s, std::uint16_t(v & 0xffff));
    u16(s, std::uint16_t(v >> 16));
  };
  std::string data;
  for (auto v : samples) u16(data, static_cast<std::uint16_t>(v));
  std::string s = "RIFF";
  u32(s, std::uint32_t(36 + data.size()));
  s += "WAVEfmt ";
  u32(s, 16);
  u16(s, format);
  u16(s, channels);
  u32(s, rate);
  u32(s, rate * channels * bits / 8);
  u16(s, std::uint16_t(channels * bits / 8));
  u16(s, bits);
  s += "data";
  u32(s, std::uint32_t(data.size()));
  return s + data;
}

AudioBuffer parse(const std::string& bytes) {
  std::istringstream in(bytes);
  return parse_wav(in, "test.wav");
}

AudioBuffer tone(double hz, double seconds, double amp = 0.5) {
  AudioBuffer a;
  a.samples.resize(std::size_t(seconds * kSampleRate));
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = float(amp * std::sin(2.0 * M_PI * hz * double(i) /
                                        kSampleRate));
  return a;
}

AudioBuffer silence(double seconds) {
  AudioBuffer a;
  a.samples.assign(std::size_t(seconds * kSampleRate), 0.0f);
  return a;
}

AudioBuffer concat(std::initializer_list<AudioBuffer> parts) {
  AudioBuffer out;
  for (const auto& p : parts)
    out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
  return out;
}

TEST(LoadAudio, OneSecond) {
  auto a = parse(raw_wav(1, 1, 16000, 16, std::vector<std::int16_t>(16000, 7)));
  EXPECT_EQ(a.samples.size(), 16000u);
  EXPECT_EQ(a.sample_rate, 16000u);
}

TEST(LoadAudio, Scaling) {
  auto a = parse(raw_wav(1, 1, 16000, 16, {-32768, 0, 16384, 32767}));
  EXPECT_EQ(a.samples[0], -1.0f);
  EXPECT_EQ(a.samples[1], 0.0f);
  EXPECT_EQ(a.samples[2], 0.5f);
  EXPECT_EQ(a.samples[3], 32767.0f / 32768.0f);
}

TEST(LoadAudio, UnsupportedFormats) {
  EXPECT_THROW(parse(raw_wav(1, 2, 16000, 16, {0, 0})), UnsupportedFormat);
  EXPECT_THROW(parse(raw_wav(1, 1, 8000, 16, {0})), UnsupportedFormat);
  EXPECT_THROW(parse(raw_wav(3, 1, 16000, 16, {0})), UnsupportedFormat);
  EXPECT_THROW(parse(raw_wav(1, 1, 16000, 8, {0})), UnsupportedFormat);
}

TEST(LoadAudio, Corrupt) {
  EXPECT_THROW(parse("RIFX"), CorruptFile);
  auto good = raw_wav(1, 1, 16000, 16, {1, 2, 3});
  EXPECT_THROW(parse(good.substr(0, good.size() - 2)), CorruptFile);
  EXPECT_THROW(load_audio("/nonexistent.wav"), IoError);
}

TEST(LoadAudio, WriterRoundTrip) {
  auto dir = testing::temp_dir("dataprep_wav");
  const auto path = (dir / "a.wav").string();
  AudioBuffer a;
  for (int v : {-32768, -1, 0, 1, 32767}) a.samples.push_back(float(v) / 32768.0f);
  save_audio(path, a);
  EXPECT_EQ(load_audio(path).samples, a.samples);
}

TEST(Framing, FormulaAndTooShort) {
  auto fr = Framing::from_ms(25, 10);
  EXPECT_EQ(fr.frame, 400u);
  EXPECT_EQ(fr.hop, 160u);
  EXPECT_EQ(fr.count(16000), 98u);
  EXPECT_EQ(fr.count(400), 1u);
  EXPECT_THROW(fr.count(399), AudioTooShort);
}

TEST(Vad, SilenceHasNoSegments) {
  EXPECT_TRUE(vad_split(silence(2.0)).empty());
  Rng rng(1);
  auto quiet = silence(2.0);
  for (float& s : quiet.samples) s = float(1e-4 * rng.normal());
  EXPECT_TRUE(vad_split(quiet).empty());
}

TEST(Vad, SingleToneWithinOneHop) {
  auto a = concat({silence(0.5), tone(440, 1.0), silence(0.5)});
  auto segs = vad_split(a);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_LE(std::abs(long(segs[0].start) - 8000L), 160L);
  EXPECT_LE(std::abs(long(segs[0].end) - 24000L), 160L);
}

TEST(Vad, TwoTonesSeparatedBySilence) {
  auto a = concat({silence(0.5), tone(440, 0.5), silence(1.0), tone(660, 0.5),
                   silence(0.5)});
  auto segs = vad_split(a);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_LE(std::abs(long(segs[0].start) - 8000L), 160L);
  EXPECT_LE(std::abs(long(segs[1].end) - 40000L), 160L);
}

TEST(Vad, ShortGapsMergeShortBurstsDrop) {
  // 100 ms gap < min_silence merges; a 50 ms burst is under min_segment.
  auto a = concat({silence(0.5), tone(440, 0.4), silence(0.1), tone(440, 0.4),
                   silence(1.0), tone(440, 0.05), silence(0.5)});
  auto segs = vad_split(a);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_LE(std::abs(long(segs[0].end) - long(0.5 * 16000 + 0.9 * 16000)),
            160L);
}

TEST(Vad, ConfigValidation) {
  VadConfig c;
  c.threshold_factor = 1.0;
  EXPECT_THROW(vad_split(silence(1.0), c), InvalidArgument);
  EXPECT_THROW(vad_split(silence(0.01)), AudioTooShort);
}

TEST(VadProperty, SegmentsOrderedDisjointLongEnoughInBounds) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    AudioBuffer a;
    const int parts = 1 + int(rng.below(6));
    for (int p = 0; p < parts; ++p) {
      auto s = silence(rng.uniform(0.05, 0.8));
      auto t = tone(rng.uniform(100, 3000), rng.uniform(0.05, 0.8),
                    rng.uniform(0.05, 0.9));
      a.samples.insert(a.samples.end(), s.samples.begin(), s.samples.end());
      a.samples.insert(a.samples.end(), t.samples.begin(), t.samples.end());
    }
    for (float& s : a.samples) s += float(1e-3 * rng.normal());
    auto segs = vad_split(a);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      EXPECT_LT(segs[i].start, segs[i].end);
      EXPECT_LE(segs[i].end, a.samples.size());
      EXPECT_GE(segs[i].end - segs[i].start, 3200u);
      if (i) {
        EXPECT_LE(segs[i - 1].end, segs[i].start);
      }
    }
  }
}

TEST(Fft, MatchesNaiveDft) {
  Rng rng(3);
  for (std::size_t n = 1; n <= 512; n *= 2) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    auto want = testing::naive_dft(x);
    fft(x);
    for (std::size_t k = 0; k < n; ++k)
      EXPECT_LT(std::abs(x[k] - want[k]), 1e-9 * double(n));
  }
  std::vector<std::complex<double>> bad(6);
  EXPECT_THROW(fft(bad), InvalidArgument);
}

TEST(Logmel, OneSecondShape) {
  auto f = logmel(tone(300, 1.0));
  EXPECT_EQ(f.rows, 98u);
  EXPECT_EQ(f.cols, 40u);
  for (float v : f.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Logmel, AllZeroAudio) {
  LogmelConfig raw;
  raw.normalize = false;
  auto f = logmel(silence(0.5), raw);
  for (float v : f.data) EXPECT_EQ(v, float(std::log(1e-10)));
  for (float v : logmel(silence(0.5)).data) EXPECT_EQ(v, 0.0f);
}

TEST(Logmel, TooShort) {
  EXPECT_THROW(logmel(silence(0.02)), AudioTooShort);
}

TEST(Logmel, OneKilohertzPeaksInItsMelBand) {
  // Band edges from the HTK mel formula, written out here.
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> centers(40);
  for (std::size_t m = 0; m < 40; ++m)
    centers[m] = hz(mel(8000.0) * double(m + 1) / 41.0);
  std::size_t want = 0;
  for (std::size_t m = 1; m < 40; ++m)
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[want] - 1000.0))
      want = m;
  ASSERT_LT(centers[want - 1], 1000.0);
  ASSERT_GT(centers[want + 1], 1000.0);

  LogmelConfig raw;
  raw.normalize = false;
  auto f = logmel(tone(1000, 0.5), raw);
  for (std::size_t t = 0; t < f.rows; ++t) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < 40; ++m)
      if (f(t, m) > f(t, arg)) arg = m;
    EXPECT_EQ(arg, want) << "frame " << t;
  }
}

TEST(LogmelProperty, FiniteAndFramingFormula) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    AudioBuffer a;
    a.samples.resize(400 + rng.below(8000));
    for (float& s : a.samples) s = float(rng.uniform(-1.0, 1.0));
    auto f = logmel(a);
    EXPECT_EQ(f.rows, 1 + (a.samples.size() - 400) / 160);
    for (float v : f.data) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Features, BitExactRoundTrip) {
  Rng rng(5);
  FeatureMatrix m(98, 40);
  for (float& v : m.data) v = float(rng.normal());
  std::stringstream buf;
  write_features(buf, m);
  EXPECT_EQ(buf.str().size(), 16u + 98u * 40u * 4u);
  EXPECT_EQ(buf.str().substr(0, 4), "FEAT");
  auto back = read_features(buf);
  ASSERT_EQ(back.rows, 98u);
  EXPECT_EQ(std::memcmp(back.data.data(), m.data.data(), m.data.size() * 4), 0);
}

TEST(Features, LittleEndianLayout) {
  FeatureMatrix m(1, 1);
  m.data[0] = 1.0f;  // 0x3f800000
  std::stringstream buf;
  write_features(buf, m);
  const std::string want("FEAT\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\x80\x3f", 20);
  EXPECT_EQ(buf.str(), want);
}

TEST(Features, Rejections) {
  std::stringstream buf;
  EXPECT_THROW(write_features(buf, FeatureMatrix(0, 40)), InvalidArgument);
  FeatureMatrix nan(1, 1);
  nan.data[0] = std::nanf("");
  EXPECT_THROW(write_features(buf, nan), InvalidArgument);
  std::istringstream bad_magic("FEAX");
  EXPECT_THROW(read_features(bad_magic), CorruptFile);
  std::stringstream trunc;
  write_features(trunc, FeatureMatrix(2, 2));
  std::istringstream cut(trunc.str().substr(0, 20));
  EXPECT_THROW(read_features(cut), CorruptFile);
  std::istringstream extra(trunc.str() + "x");
  EXPECT_THROW(read_features(extra), CorruptFile);
  EXPECT_THROW(load_features("/nonexistent.feat"), MissingFeatureFile);
}

TEST(Manifest, RoundTripAndDataset) {
  auto dir = testing::temp_dir("dataprep_manifest");
  FeatureMatrix f(3, 2, 0.25f);
  save_features((dir / "u1.feat").string(), f);
  Manifest m{"dev", {{"u1", "u1.feat", {"a", "ⁿd"}}}};
  const auto path = (dir / "dev.jsonl").string();
  save_manifest(path, m);
  EXPECT_EQ(load_manifest(path), m);
  auto d = load_dataset(path);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].features, f);
  EXPECT_EQ(d[0].transcript, (std::vector<std::string>{"a", "ⁿd"}));
}

TEST(Manifest, Errors) {
  auto dir = testing::temp_dir("dataprep_manifest_bad");
  std::stringstream out;
  EXPECT_THROW(write_manifest(out, {"train", {{"u", "x", {}}, {"u", "y", {}}}}),
               DuplicateId);
  EXPECT_THROW(write_manifest(out, {"eval", {}}), CorruptFile);

  const auto dup = (dir / "dup.jsonl").string();
  std::ofstream(dup)
      << R"({"id":"u","features":"a","split":"train","transcript":[]})" "\n"
      << R"({"id":"u","features":"b","split":"train","transcript":[]})" "\n";
  EXPECT_THROW(load_manifest(dup, false), DuplicateId);

  const auto missing = (dir / "missing.jsonl").string();
  std::ofstream(missing)
      << R"({"id":"u","features":"nope.feat","split":"train","transcript":[]})"
      << "\n";
  EXPECT_THROW(load_manifest(missing), MissingFeatureFile);
  EXPECT_NO_THROW(load_manifest(missing, false));

  const auto broken = (dir / "broken.jsonl").string();
  std::ofstream(broken) << "{\"id\": 3}\n";
  EXPECT_THROW(load_manifest(broken, false), CorruptFile);
}

}  // namespace
}  // namespace allo::dataprep
