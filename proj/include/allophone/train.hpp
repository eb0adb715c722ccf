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

// Multilingual pretraining with allophone heads, and fine-tuning with
// per-epoch dev PER model selection. Plain SGD, no momentum or schedule.
//
// Loss conventions: an utterance contributes its summed CTC negative
// log-likelihood; a batch contributes the mean over its utterances; every
// step of a language with an allophone head adds alpha * ||W - S||^2.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/ctc.hpp"
#include "allophone/dataprep.hpp"
#include "allophone/eval.hpp"
#include "allophone/model.hpp"
#include "allophone/phoneset.hpp"
#include "json.hpp"

namespace allo::train {

using dataprep::Dataset;
using dataprep::Utterance;

class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient() : Error("non-finite gradient; update rejected") {}
};

class SizeExceedsDataset : public Error {
 public:
  SizeExceedsDataset(std::size_t size, std::size_t available)
      : Error("subset size " + std::to_string(size) + " exceeds dataset of " +
              std::to_string(available)) {}
};

class InvalidSize : public Error {
 public:
  InvalidSize() : Error("subset size must be >= 1") {}
};

class InfeasibleUtterance : public Error {
 public:
  explicit InfeasibleUtterance(const std::string& id, const std::string& why)
      : Error("utterance " + id + ": " + why), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class EmptyDataset : public Error {
 public:
  explicit EmptyDataset(const std::string& which)
      : Error(which + " set is empty") {}
};

enum class Mode { kUniversal, kAllophone };

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t max_epochs = 250;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::size_t patience = 0;  // evaluations without improvement; 0 = off
  Mode mode = Mode::kUniversal;
  std::string language;  // head used in allophone mode
  double alpha = 10.0;   // allophone penalty weight for newly created heads
  /// Whether allophone matrices are updated. Unset: pretraining updates
  /// them, fine-tuning keeps them frozen.
  std::optional<bool> update_allophone;
  /// Universal-mode dev decoding restricted to these phones (P_i).
  std::optional<std::vector<std::string>> restrict_phones;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw InvalidArgument("learning_rate must be finite and >= 0");
    if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
    if (!(alpha >= 0.0)) throw InvalidArgument("alpha must be >= 0");
    if (mode == Mode::kAllophone && language.empty())
      throw InvalidArgument("allophone mode needs a language");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_per;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  bool operator==(const TrainHistory&) const = default;
};

inline void write_history(std::ostream& out, const TrainHistory& h) {
  for (const auto& r : h.records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["dev_per"] = r.dev_per ? nlohmann::ordered_json(*r.dev_per)
                             : nlohmann::ordered_json(nullptr);
    out << j.dump() << '\n';
  }
}

inline TrainHistory read_history(std::istream& in, const std::string& name) {
  TrainHistory h;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      EpochRecord r;
      r.epoch = j.at("epoch").get<std::size_t>();
      r.train_loss = j.at("train_loss").get<double>();
      if (!j.at("dev_per").is_null()) r.dev_per = j.at("dev_per").get<double>();
      if (!h.records.empty() && r.epoch <= h.records.back().epoch)
        throw CorruptFile(name + ": epochs must increase");
      h.records.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw CorruptFile(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return h;
}

// ---------------------------------------------------------------------------

/// p <- p - lr * g for every tensor. All-or-nothing: a non-finite gradient
/// leaves the parameters untouched.
inline void sgd_step(std::span<MatrixD* const> params,
                     std::span<const MatrixD* const> grads, double lr) {
  if (params.size() != grads.size())
    throw DimensionMismatch("sgd_step: tensor count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]))
      throw DimensionMismatch("sgd_step: tensor " + std::to_string(i));
    if (!all_finite(grads[i]->data)) throw NonFiniteGradient();
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = grads[i]->data;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

inline void sgd_step(nn::EncoderParams& params, const nn::EncoderParams& grads,
                     double lr) {
  std::vector<MatrixD*> p;
  std::vector<const MatrixD*> g;
  params.for_each([&](MatrixD& m) { p.push_back(&m); });
  grads.for_each([&](const MatrixD& m) { g.push_back(&m); });
  sgd_step(p, g, lr);
}

/// Uniform sample of `size` utterances without replacement; deterministic in
/// `seed`. Returns indices into the dataset in sampled order.
inline std::vector<std::size_t> subset_indices(std::size_t dataset_size,
                                               std::size_t size,
                                               std::uint64_t seed) {
  if (size == 0) throw InvalidSize();
  if (size > dataset_size) throw SizeExceedsDataset(size, dataset_size);
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i)
    std::swap(idx[i], idx[i + rng.below(dataset_size - i)]);
  idx.resize(size);
  return idx;
}

inline Dataset subset(const Dataset& data, std::size_t size,
                      std::uint64_t seed) {
  Dataset out;
  for (auto i : subset_indices(data.size(), size, seed)) out.push_back(data[i]);
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

/// An utterance prepared for the objective.
struct Example {
  std::string id;
  MatrixD x;
  ctc::LabelSequence labels;
  std::vector<std::string> reference;
};

/// Maps transcript tokens to output indices of `table` (1-based), checking
/// CTC feasibility against the frame count.
inline std::vector<Example> prepare(const Dataset& data,
                                    const std::vector<std::string>& symbols,
                                    std::size_t input_dim) {
  const SymbolTable table(symbols);
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& u : data) {
    Example e{u.id, dataprep::to_double(u.features), {}, {}};
    if (e.x.cols != input_dim)
      throw InfeasibleUtterance(u.id, "feature width " +
                                          std::to_string(e.x.cols) +
                                          " != encoder input_dim " +
                                          std::to_string(input_dim));
    for (const auto& tok : u.transcript) {
      auto k = table.find(tok);
      if (!k)
        throw InfeasibleUtterance(u.id, "transcript symbol '" + tok +
                                            "' is not in the inventory");
      e.labels.push_back(*k + 1);
      e.reference.push_back(table.at(*k));
    }
    if (e.labels.empty())
      throw InfeasibleUtterance(u.id, "empty transcript");
    if (ctc::min_frames(e.labels) > e.x.rows)
      throw InfeasibleUtterance(
          u.id, std::to_string(e.x.rows) + " frames cannot emit " +
                    std::to_string(e.labels.size()) + " labels");
    out.push_back(std::move(e));
  }
  return out;
}

inline double dev_per(const Model& model, const std::vector<Example>& dev,
                      const std::string& language,
                      const std::vector<std::size_t>* allowed) {
  std::vector<eval::Phones> refs, hyps;
  for (const auto& e : dev) {
    refs.push_back(e.reference);
    hyps.push_back(decode(model, e.x, language, allowed));
  }
  return eval::per(refs, hyps).per();
}

inline double mean_loss(const Model& model, const std::vector<Example>& data,
                        const std::string& language) {
  double sum = 0.0;
  for (const auto& e : data) sum += utterance_loss(model, e.x, e.labels, language);
  return sum / double(data.size());
}

/// Accumulates batch-mean gradients of `batch` into `grads`; returns the sum
/// of utterance losses.
inline double batch_gradient(const Model& model,
                             const std::vector<Example>& data,
                             std::span<const std::size_t> batch,
                             const std::string& language, ModelGrads& grads) {
  double loss_sum = 0.0;
  const double scale = 1.0 / double(batch.size());
  for (auto i : batch) {
    const auto& e = data[i];
    auto g = utterance_gradient(model, e.x, e.labels, language);
    loss_sum += g.loss;
    accumulate(grads.encoder, g.encoder, scale);
    if (g.allophone) {
      auto& dw = grads.allophone.at(language).data;
      for (std::size_t k = 0; k < dw.size(); ++k)
        dw[k] += scale * g.allophone->data[k];
    }
  }
  return loss_sum;
}

inline void apply(Model& model, const ModelGrads& grads, double lr,
                  bool update_allophone) {
  std::vector<MatrixD*> p;
  std::vector<const MatrixD*> g;
  model.encoder.for_each([&](MatrixD& m) { p.push_back(&m); });
  grads.encoder.for_each([&](const MatrixD& m) { g.push_back(&m); });
  if (update_allophone)
    for (auto& [id, head] : model.heads)
      if (auto it = grads.allophone.find(id); it != grads.allophone.end()) {
        p.push_back(&head.layer.w);
        g.push_back(&it->second);
      }
  sgd_step(p, g, lr);
}

}  // namespace detail

struct FinetuneResult {
  Checkpoint best;
  TrainHistory history;
  Model final_model;
};

/// Fine-tunes `init` on `train`, evaluating dev PER every `eval_every`
/// epochs (and once before training, recorded as epoch 0). Returns the
/// evaluated model with the lowest dev PER; ties go to the earliest epoch.
inline FinetuneResult finetune(const Model& init, const Dataset& train,
                               const Dataset& dev, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw EmptyDataset("training");
  if (dev.empty()) throw EmptyDataset("dev");

  Model model = init;
  std::string language;
  std::vector<std::string> symbols = model.phones;
  if (cfg.mode == Mode::kAllophone) {
    language = cfg.language;
    auto it = model.heads.find(language);
    if (it == model.heads.end())
      throw InvalidArgument("model has no allophone head for '" + language +
                            "'");
    symbols = it->second.phonemes;
  }
  const bool update_w =
      cfg.mode == Mode::kAllophone && cfg.update_allophone.value_or(false);

  std::optional<std::vector<std::size_t>> allowed;
  if (cfg.restrict_phones && cfg.mode == Mode::kUniversal)
    allowed = restrict_to(SymbolTable(*cfg.restrict_phones), model.inventory());
  const auto* allowed_ptr = allowed ? &*allowed : nullptr;

  const auto input_dim = model.encoder.config.input_dim;
  const auto train_ex = detail::prepare(train, symbols, input_dim);
  const auto dev_ex = detail::prepare(dev, symbols, input_dim);

  auto penalty = [&] {
    return language.empty() ? 0.0
                            : nn::allophone_penalty(model.heads.at(language).layer);
  };

  FinetuneResult res;
  const double per0 = detail::dev_per(model, dev_ex, language, allowed_ptr);
  res.history.records.push_back(
      {0, detail::mean_loss(model, train_ex, language) + penalty(), per0});
  res.best = {model, 0, per0};

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      ModelGrads grads = zero_grads(model);
      loss_sum += detail::batch_gradient(model, train_ex, batch, language, grads);
      if (update_w)
        nn::add_penalty_gradient(model.heads.at(language).layer,
                                 grads.allophone.at(language));
      detail::apply(model, grads, cfg.learning_rate, update_w);
    }
    EpochRecord rec{epoch, loss_sum / double(order.size()) + penalty(), {}};
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      rec.dev_per = detail::dev_per(model, dev_ex, language, allowed_ptr);
      if (*rec.dev_per < res.best.dev_per) {
        res.best = {model, static_cast<std::uint32_t>(epoch), *rec.dev_per};
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    res.history.records.push_back(rec);
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  res.final_model = std::move(model);
  return res;
}

/// One training language for pretraining.
struct LanguageData {
  std::string id;
  std::vector<std::string> phonemes;  // Q_i, signature row order
  SignatureMatrix signature;
  Dataset train;  // phonemic transcripts
  Dataset dev;    // optional
};

struct PretrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

/// Joint training over languages. Every step takes the next batch of each
/// language that still has one (round-robin within the step) and descends on
/// the sum of their batch-mean CTC losses plus every head's penalty. Heads
/// start at W = S.
inline PretrainResult pretrain(const UniversalInventory& universal,
                               const nn::EncoderConfig& encoder,
                               const std::vector<LanguageData>& languages,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (languages.empty()) throw EmptyDataset("language");
  Model model = make_model(universal, encoder);
  const bool update_w = cfg.update_allophone.value_or(true);

  struct Prepared {
    std::string id;
    std::vector<detail::Example> train, dev;
    std::vector<std::size_t> order;
  };
  std::vector<Prepared> langs;
  for (const auto& l : languages) {
    if (l.train.empty()) throw EmptyDataset("training (" + l.id + ")");
    if (l.signature.phones() != universal.size() ||
        l.signature.phonemes() != l.phonemes.size())
      throw DimensionMismatch("signature of " + l.id +
                              " does not match its inventories");
    if (!model.heads
             .emplace(l.id, LanguageHead{l.phonemes,
                                         nn::AllophoneLayer(l.signature,
                                                            cfg.alpha)})
             .second)
      throw InvalidArgument("duplicate language " + l.id);
    Prepared p{l.id,
               detail::prepare(l.train, l.phonemes, encoder.input_dim),
               l.dev.empty()
                   ? std::vector<detail::Example>{}
                   : detail::prepare(l.dev, l.phonemes, encoder.input_dim),
               {}};
    p.order.resize(p.train.size());
    std::iota(p.order.begin(), p.order.end(), 0);
    langs.push_back(std::move(p));
  }

  auto penalties = [&] {
    double s = 0.0;
    for (const auto& [id, head] : model.heads)
      s += nn::allophone_penalty(head.layer);
    return s;
  };
  auto pooled_dev_per = [&]() -> std::optional<double> {
    eval::PerReport total;
    bool any = false;
    for (const auto& l : langs)
      for (const auto& e : l.dev) {
        total += eval::count_errors(e.reference, decode(model, e.x, l.id));
        any = true;
      }
    if (!any) return std::nullopt;
    return total.per();
  };

  Rng rng(cfg.seed);
  PretrainResult res;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (auto& l : langs) rng.shuffle(l.order);
    std::size_t steps = 0;
    for (const auto& l : langs)
      steps = std::max(steps, (l.order.size() + cfg.batch_size - 1) /
                                  cfg.batch_size);
    std::vector<double> loss_sum(langs.size(), 0.0);
    for (std::size_t step = 0; step < steps; ++step) {
      ModelGrads grads = zero_grads(model);
      for (std::size_t li = 0; li < langs.size(); ++li) {
        const auto& l = langs[li];
        const std::size_t start = step * cfg.batch_size;
        if (start >= l.order.size()) continue;
        const std::size_t end = std::min(l.order.size(), start + cfg.batch_size);
        std::span<const std::size_t> batch(l.order.data() + start, end - start);
        loss_sum[li] += detail::batch_gradient(model, l.train, batch, l.id, grads);
      }
      if (update_w)
        for (const auto& [id, head] : model.heads)
          nn::add_penalty_gradient(head.layer, grads.allophone.at(id));
      detail::apply(model, grads, cfg.learning_rate, update_w);
    }
    double train_loss = penalties();
    for (std::size_t li = 0; li < langs.size(); ++li)
      train_loss += loss_sum[li] / double(langs[li].train.size());
    EpochRecord rec{epoch, train_loss, {}};
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs)
      rec.dev_per = pooled_dev_per();
    res.history.records.push_back(rec);
  }
  const auto last = res.history.records.back();
  res.checkpoint = {std::move(model), static_cast<std::uint32_t>(last.epoch),
                    last.dev_per.value_or(std::numeric_limits<double>::quiet_NaN())};
  return res;
}

}  // namespace allo::train
