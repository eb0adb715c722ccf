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

// Synthetic corpora for smoke tests and desk-scale experiments. Each phone
// has a fixed mean feature vector; an utterance is a phone sequence with
// random durations and silence gaps, each frame drawn as mean + Gaussian
// noise. Languages pick phones through phoneme -> allophone distributions,
// so the same corpus can be labelled phonemically or phonetically.

#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/dataprep.hpp"
#include "allophone/phoneset.hpp"

namespace allo::synthetic {

struct Allophone {
  std::string phone;
  double weight = 1.0;
};

struct PhonemeSpec {
  std::string phoneme;
  std::vector<Allophone> allophones;
};

struct LanguageSpec {
  std::string id;
  std::vector<PhonemeSpec> phonemes;
  double offset = 0.0;  // constant shift added to every feature (accent)

  std::vector<std::string> phoneme_symbols() const {
    std::vector<std::string> out;
    for (const auto& p : phonemes) out.push_back(p.phoneme);
    return out;
  }
  /// P_i in first-use order.
  std::vector<std::string> phone_symbols() const {
    std::vector<std::string> out;
    for (const auto& p : phonemes)
      for (const auto& a : p.allophones)
        if (std::find(out.begin(), out.end(), a.phone) == out.end())
          out.push_back(a.phone);
    return out;
  }
  SignatureMatrix signature(const UniversalInventory& universal) const {
    Matrix<std::uint8_t> m(phonemes.size(), universal.size(), 0);
    for (std::size_t j = 0; j < phonemes.size(); ++j)
      for (const auto& a : phonemes[j].allophones) {
        auto k = universal.index_of(a.phone);
        if (!k) throw UnknownPhone(phonemes[j].phoneme, a.phone);
        m(j, *k - 1) = 1;
      }
    return SignatureMatrix(std::move(m));
  }
};

struct AcousticSpace {
  std::vector<std::string> phones;  // universal inventory order
  MatrixD means;                    // |P_uni| x F
  double noise = 0.3;

  static AcousticSpace make(std::vector<std::string> phones, std::size_t dim,
                            std::uint64_t seed, double noise = 0.3,
                            double spread = 1.5) {
    AcousticSpace a{std::move(phones), MatrixD(0, 0), noise};
    a.means = MatrixD(a.phones.size(), dim);
    Rng rng(seed);
    for (double& v : a.means.data) v = spread * rng.normal();
    return a;
  }
};

struct UtteranceShape {
  std::size_t frames = 30;
  std::size_t min_phones = 3;
  std::size_t max_phones = 6;
  std::size_t min_duration = 2;
  std::size_t max_duration = 4;
};

enum class Labels { kPhonetic, kPhonemic };

/// `count` utterances with ids "<prefix><n>". Frames not covered by phones
/// are silence (zero mean). Repeated phones or labels are separated by at
/// least one silence frame, so every transcript is CTC-feasible.
inline dataprep::Dataset generate(const AcousticSpace& space,
                                  const LanguageSpec& lang, std::size_t count,
                                  std::uint64_t seed, Labels labels,
                                  const UtteranceShape& shape = {},
                                  const std::string& prefix = "utt") {
  const UniversalInventory inv(space.phones);
  const std::size_t F = space.means.cols;
  Rng rng(seed);
  dataprep::Dataset out;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t want =
        shape.min_phones + rng.below(shape.max_phones - shape.min_phones + 1);
    std::vector<std::pair<std::size_t, std::string>> seq;  // (phone idx, label)
    std::vector<std::size_t> durations, gaps;
    std::size_t used = 0;
    for (std::size_t i = 0; i < want; ++i) {
      const auto& ph = lang.phonemes[rng.below(lang.phonemes.size())];
      double total = 0.0;
      for (const auto& a : ph.allophones) total += a.weight;
      double r = rng.uniform() * total;
      const Allophone* pick = &ph.allophones.back();
      for (const auto& a : ph.allophones) {
        if (r < a.weight) {
          pick = &a;
          break;
        }
        r -= a.weight;
      }
      const std::size_t idx = *inv.index_of(pick->phone) - 1;
      const std::size_t d = shape.min_duration +
                            rng.below(shape.max_duration - shape.min_duration + 1);
      const std::string& label =
          labels == Labels::kPhonetic ? pick->phone : ph.phoneme;
      std::size_t gap = rng.below(2);
      if (!seq.empty() && (seq.back().first == idx || seq.back().second == label))
        gap = 1;
      if (seq.empty()) gap = 0;
      if (used + gap + d > shape.frames) break;
      used += gap + d;
      seq.emplace_back(idx, label);
      durations.push_back(d);
      gaps.push_back(gap);
    }
    if (seq.empty()) throw InvalidArgument("synthetic utterance too short");

    dataprep::Utterance u;
    u.id = prefix + std::to_string(n);
    u.features = dataprep::FeatureMatrix(shape.frames, F);
    std::vector<int> frame_phone(shape.frames, -1);
    std::size_t t = rng.below(shape.frames - used + 1);  // leading silence
    for (std::size_t i = 0; i < seq.size(); ++i) {
      t += gaps[i];
      for (std::size_t k = 0; k < durations[i]; ++k)
        frame_phone[t++] = static_cast<int>(seq[i].first);
      u.transcript.push_back(seq[i].second);
    }
    for (std::size_t f = 0; f < shape.frames; ++f)
      for (std::size_t c = 0; c < F; ++c) {
        const double mean =
            frame_phone[f] < 0 ? 0.0 : space.means(frame_phone[f], c);
        u.features(f, c) = static_cast<float>(mean + lang.offset +
                                              space.noise * rng.normal());
      }
    out.push_back(std::move(u));
  }
  return out;
}

/// The few-shot setup used by the acceptance suite and `allophone synth`.
/// Language A is heard through its phonemes only (each of a, i, d, l has two
/// allophones), so pretraining never learns which universal phone is which
/// inside those pairs. Language B uses both members of three pairs as
/// separate phones, with a constant accent offset, and is labelled
/// phonetically.
struct Scenario {
  std::vector<std::string> universal;
  LanguageSpec pretrain;
  LanguageSpec target;
  std::size_t dim = 8;
  double noise = 1.3;
  double spread = 1.5;
  UtteranceShape shape;
};

inline Scenario few_shot_scenario() {
  Scenario s;
  s.universal = {"a", "aː", "i", "iː", "u", "e", "n", "d", "ⁿd", "l", "r"};
  s.pretrain = {"A",
                {{"a", {{"a", 1.0}, {"aː", 1.0}}},
                 {"i", {{"i", 1.0}, {"iː", 1.0}}},
                 {"u", {{"u", 1.0}}},
                 {"e", {{"e", 1.0}}},
                 {"n", {{"n", 1.0}}},
                 {"d", {{"d", 1.0}, {"ⁿd", 1.0}}},
                 {"l", {{"l", 1.0}, {"r", 1.0}}}},
                0.0};
  s.target = {"B", {}, 0.5};
  for (const char* p : {"a", "aː", "i", "iː", "u", "n", "d", "ⁿd"})
    s.target.phonemes.push_back({p, {{p, 1.0}}});
  s.shape.frames = 30;
  return s;
}

struct FewShotSizes {
  std::size_t pretrain = 300;
  std::size_t train = 1000;
  std::size_t dev = 50;
  std::size_t test = 200;
};

/// Language A is labeled phonemically (pretraining); B phonetically.
struct FewShotCorpus {
  Scenario scenario;
  AcousticSpace space;
  dataprep::Dataset pretrain, train, dev, test;
};

inline FewShotCorpus make_few_shot_corpus(std::uint64_t seed,
                                          const FewShotSizes& n = {}) {
  FewShotCorpus c{few_shot_scenario(), {}, {}, {}, {}, {}};
  const auto& sc = c.scenario;
  c.space = AcousticSpace::make(sc.universal, sc.dim, seed, sc.noise, sc.spread);
  const std::uint64_t base = seed * 10;
  c.pretrain = generate(c.space, sc.pretrain, n.pretrain, base + 1,
                        Labels::kPhonemic, sc.shape, "A_tr");
  c.train = generate(c.space, sc.target, n.train, base + 2, Labels::kPhonetic,
                     sc.shape, "B_tr");
  c.dev = generate(c.space, sc.target, n.dev, base + 3, Labels::kPhonetic,
                   sc.shape, "B_dv");
  c.test = generate(c.space, sc.target, n.test, base + 4, Labels::kPhonetic,
                    sc.shape, "B_te");
  return c;
}

}  // namespace allo::synthetic
