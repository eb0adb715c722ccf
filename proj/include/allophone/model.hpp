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

// The full recognizer: universal inventory + encoder + per-language
// allophone heads, its per-utterance objective, decoding, and the APNN
// checkpoint container.

#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/ctc.hpp"
#include "allophone/nn.hpp"
#include "allophone/phoneset.hpp"

namespace allo {

struct LanguageHead {
  std::vector<std::string> phonemes;  // Q_i, row order of the layer
  nn::AllophoneLayer layer;
  bool operator==(const LanguageHead&) const = default;
};

struct Model {
  std::vector<std::string> phones;  // P_uni in output order (index k+1)
  nn::EncoderParams encoder;
  std::map<std::string, LanguageHead> heads;

  UniversalInventory inventory() const { return UniversalInventory(phones); }
  bool operator==(const Model&) const = default;
};

inline Model make_model(const UniversalInventory& universal,
                        nn::EncoderConfig config) {
  config.output_dim = universal.output_dim();
  return {universal.table().symbols(), nn::init_encoder(config), {}};
}

/// Gradients mirroring a Model's trainable tensors.
struct ModelGrads {
  nn::EncoderParams encoder;
  std::map<std::string, MatrixD> allophone;  // dW per language
};

inline ModelGrads zero_grads(const Model& m) {
  ModelGrads g{nn::zero_params(m.encoder.config), {}};
  for (const auto& [id, head] : m.heads)
    g.allophone[id] = MatrixD(head.layer.w.rows, head.layer.w.cols);
  return g;
}

inline void accumulate(nn::EncoderParams& into, const nn::EncoderParams& g,
                       double scale = 1.0) {
  std::vector<MatrixD*> dst;
  into.for_each([&](MatrixD& m) { dst.push_back(&m); });
  std::size_t i = 0;
  g.for_each([&](const MatrixD& m) {
    auto& d = dst.at(i++)->data;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * m.data[k];
  });
}

/// Output of one utterance through the objective.
struct UtteranceGrad {
  double loss = 0.0;  // CTC negative log-likelihood (sum over the utterance)
  nn::EncoderParams encoder;
  std::optional<MatrixD> allophone;  // dW of `language`, data term only
};

/// Universal mode when `language` is empty: CTC directly on the phone logits
/// h. Otherwise CTC on the phoneme logits of that language's head.
inline UtteranceGrad utterance_gradient(const Model& model,
                                        const MatrixD& features,
                                        const ctc::LabelSequence& labels,
                                        const std::string& language = {}) {
  auto [h, trace] = nn::encoder_forward(features, model.encoder);
  UtteranceGrad out;
  if (language.empty()) {
    auto r = ctc::ctc_loss(h, labels);
    out.loss = r.loss;
    out.encoder = nn::encoder_backward(trace, r.grad, model.encoder);
    return out;
  }
  const auto& head = model.heads.at(language);
  auto [g, atrace] = nn::allophone_forward(h, head.layer);
  auto r = ctc::ctc_loss(g, labels);
  auto ag = nn::allophone_backward(atrace, r.grad, head.layer);
  out.loss = r.loss;
  out.encoder = nn::encoder_backward(trace, ag.dh, model.encoder);
  out.allophone = std::move(ag.dw);
  return out;
}

inline double utterance_loss(const Model& model, const MatrixD& features,
                             const ctc::LabelSequence& labels,
                             const std::string& language = {}) {
  MatrixD h = nn::encoder_logits(features, model.encoder);
  if (language.empty()) return ctc::ctc_loss(h, labels).loss;
  auto g = nn::allophone_forward(h, model.heads.at(language).layer).first;
  return ctc::ctc_loss(g, labels).loss;
}

/// Decoded symbols. Universal mode decodes phones, optionally restricted to
/// `allowed` output indices; with a language, decodes that head's phonemes.
inline std::vector<std::string> decode(
    const Model& model, const MatrixD& features,
    const std::string& language = {},
    const std::vector<std::size_t>* allowed = nullptr) {
  MatrixD h = nn::encoder_logits(features, model.encoder);
  std::vector<std::string> out;
  if (language.empty()) {
    const auto labels =
        allowed ? ctc::constrained_decode(h, *allowed) : ctc::greedy_decode(h);
    for (auto k : labels) out.push_back(model.phones.at(k - 1));
    return out;
  }
  const auto& head = model.heads.at(language);
  auto g = nn::allophone_forward(h, head.layer).first;
  for (auto k : ctc::greedy_decode(g)) out.push_back(head.phonemes.at(k - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container. Layout (all integers u32 and floats f64, little
// endian; strings are u32 byte length + UTF-8 bytes):
//
//   "APNN" | version=1
//   input_dim | num_layers | hidden_size | output_dim | seed (u64)
//   encoder tensors in EncoderParams::for_each order, row-major
//   epoch | dev_per (NaN when never evaluated)
//   n_phones | phone strings (universal inventory, output order)
//   n_heads | per head, sorted by language id:
//       id | n_phonemes | phoneme strings | phones (= n_phones) | alpha
//       S as n_phonemes*n_phones bytes (0/1) | W as f64 row-major

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::uint32_t epoch = 0;
  double dev_per = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void put_string(std::ostream& os, const std::string& s) {
  le::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = le::get_u32(is, "checkpoint string");
  if (n > (1u << 20)) throw CorruptFile("checkpoint string too long");
  std::string s(n, '\0');
  le::read_exact(is, s.data(), n, "checkpoint string");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto& m = ck.model;
  const auto& c = m.encoder.config;
  if (m.phones.size() + 1 != c.output_dim)
    throw InvalidArgument("checkpoint: inventory does not match output_dim");
  os.write("APNN", 4);
  le::put_u32(os, kCheckpointVersion);
  le::put_u32(os, static_cast<std::uint32_t>(c.input_dim));
  le::put_u32(os, static_cast<std::uint32_t>(c.num_layers));
  le::put_u32(os, static_cast<std::uint32_t>(c.hidden_size));
  le::put_u32(os, static_cast<std::uint32_t>(c.output_dim));
  le::put_u64(os, c.seed);
  m.encoder.for_each([&](const MatrixD& t) {
    for (double v : t.data) le::put_f64(os, v);
  });
  le::put_u32(os, ck.epoch);
  le::put_f64(os, ck.dev_per);
  le::put_u32(os, static_cast<std::uint32_t>(m.phones.size()));
  for (const auto& p : m.phones) detail::put_string(os, p);
  le::put_u32(os, static_cast<std::uint32_t>(m.heads.size()));
  for (const auto& [id, head] : m.heads) {
    detail::put_string(os, id);
    le::put_u32(os, static_cast<std::uint32_t>(head.phonemes.size()));
    for (const auto& q : head.phonemes) detail::put_string(os, q);
    le::put_u32(os, static_cast<std::uint32_t>(head.layer.phones()));
    le::put_f64(os, head.layer.alpha);
    for (auto b : head.layer.s.entries().data) os.put(static_cast<char>(b));
    for (double v : head.layer.w.data) le::put_f64(os, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  le::read_exact(is, magic, 4, "checkpoint");
  if (std::string(magic, 4) != "APNN")
    throw CorruptFile("checkpoint: bad magic");
  const auto version = le::get_u32(is, "checkpoint");
  if (version != kCheckpointVersion)
    throw CorruptFile("checkpoint: unsupported version " +
                      std::to_string(version));
  nn::EncoderConfig c;
  c.input_dim = le::get_u32(is, "checkpoint");
  c.num_layers = le::get_u32(is, "checkpoint");
  c.hidden_size = le::get_u32(is, "checkpoint");
  c.output_dim = le::get_u32(is, "checkpoint");
  c.seed = le::get_u64(is, "checkpoint");
  try {
    c.validate();
  } catch (const Error& e) {
    throw CorruptFile(std::string("checkpoint config: ") + e.what());
  }
  if (c.hidden_size > 65536 || c.num_layers > 64 || c.input_dim > 65536 ||
      c.output_dim > 65536)
    throw CorruptFile("checkpoint: implausible encoder dimensions");

  Checkpoint ck;
  ck.model.encoder = nn::zero_params(c);
  ck.model.encoder.for_each([&](MatrixD& t) {
    for (double& v : t.data) v = le::get_f64(is, "checkpoint tensors");
  });
  ck.epoch = le::get_u32(is, "checkpoint");
  ck.dev_per = le::get_f64(is, "checkpoint");
  const auto n_phones = le::get_u32(is, "checkpoint");
  if (n_phones + 1 != c.output_dim)
    throw CorruptFile("checkpoint: inventory size does not match output_dim");
  for (std::uint32_t i = 0; i < n_phones; ++i)
    ck.model.phones.push_back(detail::get_string(is));
  const auto n_heads = le::get_u32(is, "checkpoint");
  for (std::uint32_t h = 0; h < n_heads; ++h) {
    const auto id = detail::get_string(is);
    LanguageHead head;
    const auto q = le::get_u32(is, "checkpoint");
    if (q == 0 || q > 65536) throw CorruptFile("checkpoint: bad phoneme count");
    for (std::uint32_t i = 0; i < q; ++i)
      head.phonemes.push_back(detail::get_string(is));
    const auto p = le::get_u32(is, "checkpoint");
    if (p != n_phones) throw CorruptFile("checkpoint: head width mismatch");
    const double alpha = le::get_f64(is, "checkpoint");
    Matrix<std::uint8_t> s(q, p);
    le::read_exact(is, reinterpret_cast<char*>(s.data.data()), s.size(),
                   "checkpoint signature");
    MatrixD w(q, p);
    for (double& v : w.data) v = le::get_f64(is, "checkpoint allophone");
    try {
      head.layer = nn::AllophoneLayer(std::move(w), SignatureMatrix(std::move(s)),
                                      alpha);
    } catch (const Error& e) {
      throw CorruptFile(std::string("checkpoint head ") + id + ": " + e.what());
    }
    if (!ck.model.heads.emplace(id, std::move(head)).second)
      throw CorruptFile("checkpoint: duplicate head " + id);
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw CorruptFile("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace allo
