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

// The `allophone` command line. Every subcommand is a thin wrapper over the
// library; dispatch() is callable in-process so tests can drive it.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "allophone/ctc.hpp"
#include "allophone/dataprep.hpp"
#include "allophone/eval.hpp"
#include "allophone/g2p.hpp"
#include "allophone/model.hpp"
#include "allophone/phoneset.hpp"
#include "allophone/synthetic.hpp"
#include "allophone/train.hpp"
#include "allophone/unicode.hpp"
#include "json.hpp"

namespace allo::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;

inline constexpr const char* kSchemaHint =
    "run configuration schema: docs/run_config.schema.json";

inline const std::vector<std::size_t> kSweepSizes = {10,  25,  50, 100,
                                                     250, 500, 1000};

/// A malformed run configuration; reported as a usage error.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error("run config: " + what, false) {}
};

// ---------------------------------------------------------------------------
// Run configuration

struct LanguageConfig {
  std::string id;
  std::string signature;  // JSON phoneme -> [phones]
  std::string train;      // manifest, phonemic transcripts
  std::string dev;        // optional manifest
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string universal_inventory;
  std::string inventory;  // target-language phones for restricted decoding
  nn::EncoderConfig encoder;
  train::TrainConfig train;
  dataprep::VadConfig vad;
  std::vector<LanguageConfig> languages;
};

/// Accepted keys per config section ("" is the top level).
inline const std::map<std::string, std::vector<std::string>>& config_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"", {"seed", "universal_inventory", "inventory", "encoder", "train",
            "vad", "languages"}},
      {"encoder", {"input_dim", "num_layers", "hidden_size"}},
      {"train", {"learning_rate", "max_epochs", "batch_size", "eval_every",
                 "patience", "mode", "language", "alpha", "update_allophone"}},
      {"vad", {"frame_ms", "hop_ms", "threshold_factor", "min_silence_ms",
               "min_segment_ms"}},
      {"languages[]", {"id", "signature", "train", "dev"}},
  };
  return keys;
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section) {
  const auto& allowed = config_keys().at(section);
  const std::string where = section.empty() ? "config" : section;
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void get(const nlohmann::json& j, const char* key, T& dst,
         const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const fs::path& base = {}) {
  using detail::get;
  RunConfig c;
  detail::check_keys(j, "");
  get(j, "seed", c.seed, "config");
  get(j, "universal_inventory", c.universal_inventory, "config");
  get(j, "inventory", c.inventory, "config");
  c.universal_inventory = detail::resolve(base, c.universal_inventory);
  c.inventory = detail::resolve(base, c.inventory);

  if (auto it = j.find("encoder"); it != j.end()) {
    detail::check_keys(*it, "encoder");
    get(*it, "input_dim", c.encoder.input_dim, "encoder");
    get(*it, "num_layers", c.encoder.num_layers, "encoder");
    get(*it, "hidden_size", c.encoder.hidden_size, "encoder");
  }
  if (auto it = j.find("train"); it != j.end()) {
    detail::check_keys(*it, "train");
    auto& t = c.train;
    get(*it, "learning_rate", t.learning_rate, "train");
    get(*it, "max_epochs", t.max_epochs, "train");
    get(*it, "batch_size", t.batch_size, "train");
    get(*it, "eval_every", t.eval_every, "train");
    get(*it, "patience", t.patience, "train");
    get(*it, "language", t.language, "train");
    get(*it, "alpha", t.alpha, "train");
    if (it->contains("update_allophone")) {
      bool b = false;
      get(*it, "update_allophone", b, "train");
      t.update_allophone = b;
    }
    std::string mode = "universal";
    get(*it, "mode", mode, "train");
    if (mode == "universal")
      t.mode = train::Mode::kUniversal;
    else if (mode == "allophone")
      t.mode = train::Mode::kAllophone;
    else
      throw ConfigError("train.mode must be 'universal' or 'allophone'");
  }
  if (auto it = j.find("vad"); it != j.end()) {
    detail::check_keys(*it, "vad");
    get(*it, "frame_ms", c.vad.frame_ms, "vad");
    get(*it, "hop_ms", c.vad.hop_ms, "vad");
    get(*it, "threshold_factor", c.vad.threshold_factor, "vad");
    get(*it, "min_silence_ms", c.vad.min_silence_ms, "vad");
    get(*it, "min_segment_ms", c.vad.min_segment_ms, "vad");
  }
  if (auto it = j.find("languages"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("languages must be an array");
    for (const auto& l : *it) {
      detail::check_keys(l, "languages[]");
      LanguageConfig lc;
      get(l, "id", lc.id, "languages[]");
      get(l, "signature", lc.signature, "languages[]");
      get(l, "train", lc.train, "languages[]");
      get(l, "dev", lc.dev, "languages[]");
      if (lc.id.empty() || lc.signature.empty() || lc.train.empty())
        throw ConfigError("languages[] needs id, signature and train");
      lc.signature = detail::resolve(base, lc.signature);
      lc.train = detail::resolve(base, lc.train);
      lc.dev = detail::resolve(base, lc.dev);
      c.languages.push_back(std::move(lc));
    }
  }
  try {
    c.train.validate();
    c.vad.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(j, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

/// Runs fn(i) for i in [0, n) on `jobs` threads; fn writes to slot i only.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string join(const std::vector<std::string>& v,
                        const std::string& sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

inline std::string fixed2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

inline void write_json(const std::string& path, const ojson& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

inline void save_history(const std::string& path, const train::TrainHistory& h) {
  auto out = open_out(path);
  train::write_history(out, h);
}

inline void save_dataset(const fs::path& dir, const std::string& name,
                         const std::string& split, const dataprep::Dataset& d) {
  fs::create_directories(dir / "feats");
  dataprep::Manifest m{split, {}};
  for (const auto& u : d) {
    const std::string rel = "feats/" + u.id + ".feat";
    dataprep::save_features((dir / rel).string(), u.features);
    m.records.push_back({u.id, rel, u.transcript});
  }
  dataprep::save_manifest((dir / name).string(), m);
}

inline std::vector<eval::TranscriptEntry> dataset_references(
    const dataprep::Dataset& d) {
  std::vector<eval::TranscriptEntry> out;
  for (const auto& u : d) out.push_back({u.id, u.transcript});
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

struct Io {
  std::ostream& out;
  std::ostream& err;
};

struct FeaturizeOpts {
  std::string list, out_dir, split = "train", inventory;
  std::size_t jobs = 1;
};

/// List lines: `id<TAB>wav path[<TAB>transcript]`. With --inventory the
/// transcript is tokenized by longest match; otherwise split on spaces.
inline int run_featurize(const FeaturizeOpts& o, Io io) {
  dataprep::validate_split(o.split);
  std::ifstream in(o.list);
  if (!in) throw IoError("cannot open " + o.list);
  const fs::path list_dir = fs::path(o.list).parent_path();
  std::optional<SymbolTable> inv;
  if (!o.inventory.empty()) inv.emplace(read_inventory_file(o.inventory));

  struct Item {
    std::string id, wav;
    std::vector<std::string> transcript;
  };
  std::vector<Item> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty())
      throw CorruptFile(o.list + ":" + std::to_string(lineno) +
                        ": expected id<TAB>wav[<TAB>transcript]");
    Item it{cols[0], detail::resolve(list_dir, cols[1]), {}};
    if (cols.size() == 3) {
      if (inv)
        for (const auto& p : tokenize(cols[2], *inv)) it.transcript.push_back(p.symbol);
      else
        it.transcript = eval::split_phones(cols[2]);
    }
    items.push_back(std::move(it));
  }

  fs::create_directories(fs::path(o.out_dir) / "feats");
  std::vector<std::size_t> frames(items.size());
  detail::parallel_for(items.size(), o.jobs, [&](std::size_t i) {
    auto f = dataprep::logmel(dataprep::load_audio(items[i].wav));
    frames[i] = f.rows;
    dataprep::save_features(
        (fs::path(o.out_dir) / "feats" / (items[i].id + ".feat")).string(), f);
  });
  dataprep::Manifest m{o.split, {}};
  for (std::size_t i = 0; i < items.size(); ++i) {
    m.records.push_back({items[i].id, "feats/" + items[i].id + ".feat",
                         items[i].transcript});
    io.out << ojson{{"id", items[i].id}, {"frames", frames[i]}}.dump() << '\n';
  }
  dataprep::save_manifest((fs::path(o.out_dir) / (o.split + ".jsonl")).string(),
                          m);
  return kOk;
}

struct VadOpts {
  std::string wav, out_dir, config;
  std::optional<double> threshold, min_silence_ms, min_segment_ms;
  bool pretty = false;
};

inline int run_vad_split(const VadOpts& o, Io io) {
  dataprep::VadConfig cfg;
  if (!o.config.empty()) cfg = load_run_config(o.config).vad;
  if (o.threshold) cfg.threshold_factor = *o.threshold;
  if (o.min_silence_ms) cfg.min_silence_ms = *o.min_silence_ms;
  if (o.min_segment_ms) cfg.min_segment_ms = *o.min_segment_ms;
  const auto audio = dataprep::load_audio(o.wav);
  const auto segs = dataprep::vad_split(audio, cfg);
  const std::string stem = fs::path(o.wav).stem().string();
  if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double rate = audio.sample_rate;
    const double s = double(segs[i].start) / rate, e = double(segs[i].end) / rate;
    if (o.pretty)
      io.out << std::setw(4) << i << "  " << std::fixed << std::setprecision(3)
             << s << " - " << e << " s  (" << (e - s) << " s)\n";
    else
      io.out << ojson{{"segment", i},
                      {"start", segs[i].start},
                      {"end", segs[i].end},
                      {"start_s", s},
                      {"end_s", e}}
                    .dump()
             << '\n';
    if (!o.out_dir.empty()) {
      dataprep::AudioBuffer piece;
      piece.sample_rate = audio.sample_rate;
      piece.samples.assign(audio.samples.begin() + long(segs[i].start),
                           audio.samples.begin() + long(segs[i].end));
      std::ostringstream name;
      name << stem << "_" << std::setw(4) << std::setfill('0') << i << ".wav";
      dataprep::save_audio((fs::path(o.out_dir) / name.str()).string(), piece);
    }
  }
  return kOk;
}

struct G2pOpts {
  std::string rules, input, inventory;
};

/// Input lines are `id<TAB>text` or bare text. Each whitespace-separated
/// word is transliterated on its own.
inline int run_g2p(const G2pOpts& o, Io io, std::istream& stdin_) {
  const auto rules = g2p::compile_rules(o.rules);
  std::optional<SymbolTable> inv;
  if (!o.inventory.empty()) inv.emplace(read_inventory_file(o.inventory));
  std::ifstream file;
  if (!o.input.empty()) {
    file.open(o.input);
    if (!file) throw IoError("cannot open " + o.input);
  }
  std::istream& in = o.input.empty() ? stdin_ : file;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string id, text = line;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      id = line.substr(0, tab);
      text = line.substr(tab + 1);
    }
    std::vector<std::string> out;
    for (const auto& word : eval::split_phones(text)) {
      const auto ipa = g2p::transliterate(word, rules);
      if (inv)
        for (const auto& p : tokenize(ipa, *inv)) out.push_back(p.symbol);
      else
        out.push_back(ipa);
    }
    if (!id.empty()) io.out << id << '\t';
    io.out << detail::join(out) << '\n';
  }
  return kOk;
}

struct PretrainOpts {
  std::string config, out, history;
  std::optional<std::uint64_t> seed;
};

inline int run_pretrain(const PretrainOpts& o, Io io) {
  auto cfg = load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (cfg.universal_inventory.empty())
    throw ConfigError("pretrain needs universal_inventory");
  if (cfg.languages.empty()) throw ConfigError("pretrain needs languages");
  const auto uni = load_universal_inventory(cfg.universal_inventory);
  std::vector<train::LanguageData> langs;
  for (const auto& l : cfg.languages) {
    const auto phonemes = signature_phonemes(l.signature);
    LanguageInventory li{l.id, SymbolTable(phonemes), uni.table()};
    train::LanguageData d{l.id, phonemes, load_signature(l.signature, li, uni),
                          dataprep::load_dataset(l.train),
                          l.dev.empty() ? dataprep::Dataset{}
                                        : dataprep::load_dataset(l.dev)};
    langs.push_back(std::move(d));
  }
  auto enc = cfg.encoder;
  enc.seed = cfg.seed;
  auto tc = cfg.train;
  tc.seed = cfg.seed;
  const auto res = train::pretrain(uni, enc, langs, tc);
  save_checkpoint(o.out, res.checkpoint);
  if (!o.history.empty()) detail::save_history(o.history, res.history);
  const auto& last = res.history.records.back();
  ojson j{{"checkpoint", o.out},
          {"epochs", last.epoch},
          {"train_loss", last.train_loss}};
  j["dev_per"] = last.dev_per ? ojson(*last.dev_per) : ojson(nullptr);
  io.out << j.dump() << '\n';
  return kOk;
}

struct FinetuneOpts {
  std::string init, train, dev, out, history, config, inventory, signature;
  std::optional<std::string> mode, language;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> size, epochs, batch_size, eval_every, patience;
  std::optional<double> lr;
  std::optional<bool> update_allophone;
  bool sweep = false;
};

inline int run_finetune(const FinetuneOpts& o, Io io) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_run_config(o.config);
  auto& tc = cfg.train;
  if (o.seed) cfg.seed = *o.seed;
  tc.seed = cfg.seed;
  if (o.lr) tc.learning_rate = *o.lr;
  if (o.epochs) tc.max_epochs = *o.epochs;
  if (o.batch_size) tc.batch_size = *o.batch_size;
  if (o.eval_every) tc.eval_every = *o.eval_every;
  if (o.patience) tc.patience = *o.patience;
  if (o.update_allophone) tc.update_allophone = *o.update_allophone;
  if (o.language) tc.language = *o.language;
  if (o.mode) {
    if (*o.mode == "universal")
      tc.mode = train::Mode::kUniversal;
    else if (*o.mode == "allophone")
      tc.mode = train::Mode::kAllophone;
    else
      throw InvalidArgument("--mode must be universal or allophone");
  }
  const std::string inventory = o.inventory.empty() ? cfg.inventory : o.inventory;
  if (!inventory.empty()) tc.restrict_phones = read_inventory_file(inventory);
  tc.validate();

  auto init = load_checkpoint(o.init).model;
  if (tc.mode == train::Mode::kAllophone && !init.heads.count(tc.language)) {
    if (o.signature.empty())
      throw InvalidArgument("model has no head for '" + tc.language +
                            "'; pass --signature to create one");
    const auto uni = init.inventory();
    const auto phonemes = signature_phonemes(o.signature);
    LanguageInventory li{tc.language, SymbolTable(phonemes), uni.table()};
    init.heads.emplace(tc.language,
                       LanguageHead{phonemes,
                                    nn::AllophoneLayer(
                                        load_signature(o.signature, li, uni),
                                        tc.alpha)});
  }
  const auto full = dataprep::load_dataset(o.train);
  const auto dev = dataprep::load_dataset(o.dev);

  auto one = [&](const dataprep::Dataset& data, const std::string& out,
                 const std::string& history) {
    const auto r = train::finetune(init, data, dev, tc);
    save_checkpoint(out, r.best);
    if (!history.empty()) detail::save_history(history, r.history);
    return ojson{{"size", data.size()},
                 {"best_epoch", r.best.epoch},
                 {"dev_per", r.best.dev_per},
                 {"checkpoint", out}};
  };

  if (!o.sweep) {
    const auto data =
        o.size ? train::subset(full, *o.size, cfg.seed) : full;
    io.out << one(data, o.out, o.history).dump() << '\n';
    return kOk;
  }
  std::vector<std::size_t> sizes;
  for (auto s : kSweepSizes)
    if (s < full.size()) sizes.push_back(s);
  sizes.push_back(full.size());
  for (auto s : sizes) {
    const std::string tag = ".n" + std::to_string(s);
    const auto data = s == full.size() ? full : train::subset(full, s, cfg.seed);
    io.out << one(data, o.out + tag, o.history.empty() ? "" : o.history + tag)
                  .dump()
           << '\n';
  }
  return kOk;
}

struct DecodeOpts {
  std::string model, manifest, inventory, language, out;
  std::size_t jobs = 1;
};

inline int run_decode(const DecodeOpts& o, Io io) {
  const auto ck = load_checkpoint(o.model);
  const auto& model = ck.model;
  if (!o.language.empty() && !model.heads.count(o.language))
    throw InvalidArgument("model has no allophone head for '" + o.language + "'");
  if (!o.language.empty() && !o.inventory.empty())
    throw InvalidArgument("--inventory applies to universal decoding only");
  std::optional<std::vector<std::size_t>> allowed;
  if (!o.inventory.empty())
    allowed = restrict_to(SymbolTable(read_inventory_file(o.inventory)),
                          model.inventory());
  const auto data = dataprep::load_dataset(o.manifest);
  std::vector<eval::TranscriptEntry> hyps(data.size());
  detail::parallel_for(data.size(), o.jobs, [&](std::size_t i) {
    hyps[i] = {data[i].id,
               decode(model, dataprep::to_double(data[i].features), o.language,
                      allowed ? &*allowed : nullptr)};
  });
  if (o.out.empty()) {
    eval::write_transcripts(io.out, hyps);
  } else {
    auto out = detail::open_out(o.out);
    eval::write_transcripts(out, hyps);
  }
  return kOk;
}

struct EvalOpts {
  std::string ref, hyp;
  bool pretty = false;
};

inline int run_eval_per(const EvalOpts& o, Io io) {
  const auto refs = eval::read_transcripts(o.ref);
  const auto hyps = eval::match_by_id(refs, eval::read_transcripts(o.hyp));
  std::vector<eval::Phones> ref_phones;
  for (const auto& r : refs) ref_phones.push_back(r.phones);
  const auto r = eval::per(ref_phones, hyps);
  if (o.pretty) {
    io.out << "PER " << detail::fixed2(r.per()) << "  (S=" << r.substitutions
           << " D=" << r.deletions << " I=" << r.insertions
           << ", N=" << r.ref_length << ", " << refs.size() << " utterances)\n";
  } else {
    io.out << ojson{{"per", r.per()},
                    {"substitutions", r.substitutions},
                    {"deletions", r.deletions},
                    {"insertions", r.insertions},
                    {"ref_length", r.ref_length},
                    {"utterances", refs.size()}}
                  .dump()
           << '\n';
  }
  return kOk;
}

struct ConfusionOpts {
  std::string ref, hyp, baseline, finetuned;
  std::size_t top = 0;
  bool pretty = false;
};

/// One system: substitution counts. Two systems (--baseline/--finetuned):
/// the baseline errors that fine-tuning corrected.
inline int run_confusions(const ConfusionOpts& o, Io io) {
  const auto refs = eval::read_transcripts(o.ref);
  std::vector<eval::Phones> ref_phones;
  for (const auto& r : refs) ref_phones.push_back(r.phones);
  auto emit = [&](const std::string& kind, const std::vector<eval::PairCount>& v) {
    std::size_t n = 0;
    for (const auto& c : v) {
      if (o.top && n++ >= o.top) break;
      if (o.pretty)
        io.out << std::setw(6) << c.count << "  " << c.ref << " -> "
               << (c.hyp.empty() ? "(deleted)" : c.hyp) << '\n';
      else
        io.out << ojson{{"kind", kind}, {"ref", c.ref}, {"hyp", c.hyp},
                        {"count", c.count}}
                      .dump()
               << '\n';
    }
  };
  if (!o.hyp.empty()) {
    if (!o.baseline.empty() || !o.finetuned.empty())
      throw InvalidArgument("use either --hyp or --baseline/--finetuned");
    emit("substitution",
         eval::confusions(ref_phones,
                          eval::match_by_id(refs, eval::read_transcripts(o.hyp))));
    return kOk;
  }
  if (o.baseline.empty() || o.finetuned.empty())
    throw InvalidArgument("need --hyp, or both --baseline and --finetuned");
  const auto c = eval::corrections(
      ref_phones, eval::match_by_id(refs, eval::read_transcripts(o.baseline)),
      eval::match_by_id(refs, eval::read_transcripts(o.finetuned)));
  emit("corrected_substitution", c.substitutions);
  emit("corrected_deletion", c.deletions);
  return kOk;
}

struct SubsetOpts {
  std::string manifest, out;
  std::size_t size = 0;
  std::uint64_t seed = 0;
};

inline int run_subset(const SubsetOpts& o, Io io) {
  const auto m = dataprep::load_manifest(o.manifest, false);
  dataprep::Manifest sub{m.split, {}};
  for (auto i : train::subset_indices(m.records.size(), o.size, o.seed))
    sub.records.push_back(m.records[i]);
  for (const auto& r : sub.records) io.out << r.id << '\n';
  if (!o.out.empty()) {
    // Keep feature paths valid relative to the new manifest's directory.
    const auto from = fs::absolute(fs::path(o.manifest)).parent_path();
    const auto to = fs::absolute(fs::path(o.out)).parent_path();
    for (auto& r : sub.records)
      if (fs::path(r.features).is_relative())
        r.features = fs::relative(from / r.features, to).generic_string();
    dataprep::save_manifest(o.out, sub);
  }
  return kOk;
}

struct CurvesOpts {
  std::vector<std::string> histories;
  std::string sweep;
  bool pretty = false;
};

/// PER-vs-size rows from a `finetune --sweep-sizes` log and PER-vs-epoch rows
/// from history files.
inline int run_curves(const CurvesOpts& o, Io io) {
  if (o.histories.empty() && o.sweep.empty())
    throw InvalidArgument("need --sweep and/or --history");
  if (!o.sweep.empty()) {
    std::ifstream in(o.sweep);
    if (!in) throw IoError("cannot open " + o.sweep);
    if (o.pretty) io.out << "size\tdev_per\tbest_epoch\n";
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        const auto size = j.at("size").get<std::size_t>();
        const auto per = j.at("dev_per").get<double>();
        const auto epoch = j.at("best_epoch").get<std::size_t>();
        if (o.pretty)
          io.out << size << '\t' << detail::fixed2(per) << '\t' << epoch << '\n';
        else
          io.out << ojson{{"curve", "per_vs_size"}, {"size", size},
                          {"dev_per", per}, {"best_epoch", epoch}}
                        .dump()
                 << '\n';
      } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(o.sweep + ": " + e.what());
      }
    }
  }
  for (const auto& path : o.histories) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    const auto h = train::read_history(in, path);
    const std::string run = fs::path(path).filename().string();
    if (o.pretty) io.out << "# " << run << "\nepoch\ttrain_loss\tdev_per\n";
    for (const auto& r : h.records) {
      if (o.pretty) {
        io.out << r.epoch << '\t' << r.train_loss << '\t'
               << (r.dev_per ? detail::fixed2(*r.dev_per) : "-") << '\n';
      } else {
        ojson j{{"curve", "per_vs_epoch"}, {"run", run}, {"epoch", r.epoch},
                {"train_loss", r.train_loss}};
        j["dev_per"] = r.dev_per ? ojson(*r.dev_per) : ojson(nullptr);
        io.out << j.dump() << '\n';
      }
    }
  }
  return kOk;
}

struct SynthOpts {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t pretrain_size = 300, train_size = 1000, dev_size = 50,
              test_size = 200, epochs = 30;
};

/// Writes the few-shot scenario as files: universal inventory, language A's
/// signature and phonemic training manifest, language B's phone inventory,
/// phonetic train/dev/test manifests and test references, and run configs
/// for pretraining and fine-tuning.
inline int run_synth(const SynthOpts& o, Io io) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const auto c = synthetic::make_few_shot_corpus(
      o.seed, {o.pretrain_size, o.train_size, o.dev_size, o.test_size});
  const auto& sc = c.scenario;
  write_inventory_file((dir / "universal.txt").string(), sc.universal);

  ojson sig = ojson::object();
  for (const auto& p : sc.pretrain.phonemes) {
    ojson phones = ojson::array();
    for (const auto& a : p.allophones) phones.push_back(a.phone);
    sig[p.phoneme] = phones;
  }
  detail::write_json((dir / "A.signature.json").string(), sig);
  detail::save_dataset(dir, "A.train.jsonl", "train", c.pretrain);
  write_inventory_file((dir / "B.inventory.txt").string(),
                       sc.target.phone_symbols());
  detail::save_dataset(dir, "B.train.jsonl", "train", c.train);
  detail::save_dataset(dir, "B.dev.jsonl", "dev", c.dev);
  detail::save_dataset(dir, "B.test.jsonl", "test", c.test);
  {
    auto out = detail::open_out((dir / "B.test.ref.txt").string());
    eval::write_transcripts(out, detail::dataset_references(c.test));
  }

  const ojson encoder{{"input_dim", sc.dim}, {"num_layers", 1},
                      {"hidden_size", 16}};
  const ojson tr{{"learning_rate", 0.01}, {"max_epochs", o.epochs},
                 {"batch_size", 1}};
  detail::write_json(
      (dir / "pretrain.json").string(),
      ojson{{"seed", o.seed},
            {"universal_inventory", "universal.txt"},
            {"encoder", encoder},
            {"train", tr},
            {"languages", ojson::array({ojson{{"id", "A"},
                                              {"signature", "A.signature.json"},
                                              {"train", "A.train.jsonl"}}})}});
  detail::write_json((dir / "finetune.json").string(),
                     ojson{{"seed", o.seed},
                           {"inventory", "B.inventory.txt"},
                           {"train", tr}});
  io.out << ojson{{"out_dir", o.out_dir},
                  {"pretrain_utterances", o.pretrain_size},
                  {"target_train", o.train_size},
                  {"target_dev", o.dev_size},
                  {"target_test", o.test_size}}
                .dump()
         << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv, std::ostream& out,
                    std::ostream& err, std::istream& in = std::cin) {
  CLI::App app{"Allophone-layer multilingual phone recognition", "allophone"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);
  Io io{out, err};

  FeaturizeOpts fo;
  auto* featurize = app.add_subcommand("featurize", "WAV list -> log-mel features + manifest");
  featurize->add_option("--list", fo.list, "lines: id<TAB>wav[<TAB>transcript]")->required();
  featurize->add_option("--out-dir", fo.out_dir, "output directory")->required();
  featurize->add_option("--split", fo.split, "train, dev or test");
  featurize->add_option("--inventory", fo.inventory, "tokenize transcripts against this phone list");
  featurize->add_option("--jobs", fo.jobs, "parallel files")->check(CLI::PositiveNumber);

  VadOpts vo;
  auto* vad = app.add_subcommand("vad-split", "print (and cut) speech segments of a WAV");
  vad->add_option("--wav", vo.wav, "16 kHz mono PCM16 WAV")->required();
  vad->add_option("--out-dir", vo.out_dir, "write one WAV per segment");
  vad->add_option("--config", vo.config, "run config (vad section)");
  vad->add_option("--threshold", vo.threshold, "energy factor over the noise floor");
  vad->add_option("--min-silence-ms", vo.min_silence_ms);
  vad->add_option("--min-segment-ms", vo.min_segment_ms);
  vad->add_flag("--pretty", vo.pretty, "human-readable table");

  G2pOpts go;
  auto* g2p = app.add_subcommand("g2p", "orthography -> IPA with a rule table, word by word");
  g2p->add_option("--rules", go.rules, "TSV rule table: grapheme<TAB>IPA")->required();
  g2p->add_option("--input", go.input, "lines: [id<TAB>]text (default stdin)");
  g2p->add_option("--inventory", go.inventory, "split output into these phones");

  PretrainOpts po;
  auto* pretrain = app.add_subcommand("pretrain", "multilingual training with allophone heads");
  pretrain->add_option("--config", po.config, "run config JSON")->required();
  pretrain->add_option("--out", po.out, "checkpoint path")->required();
  pretrain->add_option("--history", po.history, "per-epoch JSONL");
  pretrain->add_option("--seed", po.seed, "overrides config seed");

  FinetuneOpts fto;
  auto* finetune = app.add_subcommand("finetune", "fine-tune on a target language, dev-PER selection");
  finetune->add_option("--init", fto.init, "starting checkpoint")->required();
  finetune->add_option("--train", fto.train, "training manifest")->required();
  finetune->add_option("--dev", fto.dev, "dev manifest")->required();
  finetune->add_option("--out", fto.out, "best checkpoint path")->required();
  finetune->add_option("--history", fto.history, "per-epoch JSONL");
  finetune->add_option("--config", fto.config, "run config JSON");
  finetune->add_option("--inventory", fto.inventory, "target phones; restricts dev decoding");
  finetune->add_option("--signature", fto.signature, "create the allophone head if missing");
  finetune->add_option("--mode", fto.mode, "universal or allophone");
  finetune->add_option("--language", fto.language, "allophone head to train through");
  finetune->add_option("--seed", fto.seed);
  finetune->add_option("--size", fto.size, "random subset of the training set");
  finetune->add_option("--lr", fto.lr);
  finetune->add_option("--epochs", fto.epochs);
  finetune->add_option("--batch-size", fto.batch_size);
  finetune->add_option("--eval-every", fto.eval_every);
  finetune->add_option("--patience", fto.patience);
  finetune->add_option("--update-allophone", fto.update_allophone, "true/false");
  finetune->add_flag("--sweep-sizes", fto.sweep, "sizes 10,25,50,100,250,500,1000 and full");
  finetune->get_option("--sweep-sizes")->excludes("--size");

  DecodeOpts dopt;
  auto* dec = app.add_subcommand("decode", "greedy CTC decoding to a transcript file");
  dec->add_option("--model", dopt.model, "checkpoint")->required();
  dec->add_option("--manifest", dopt.manifest, "utterances to decode")->required();
  dec->add_option("--inventory", dopt.inventory, "restrict output to these phones");
  dec->add_option("--language", dopt.language, "decode phonemes through this head");
  dec->add_option("--out", dopt.out, "transcript file (default stdout)");
  dec->add_option("--jobs", dopt.jobs, "parallel utterances")->check(CLI::PositiveNumber);

  EvalOpts eo;
  auto* ev = app.add_subcommand("eval-per", "corpus phone error rate");
  ev->add_option("--ref", eo.ref, "reference transcripts")->required();
  ev->add_option("--hyp", eo.hyp, "hypothesis transcripts")->required();
  ev->add_flag("--pretty", eo.pretty);

  ConfusionOpts co;
  auto* conf = app.add_subcommand("confusions", "substitution counts, or corrections between two systems");
  conf->add_option("--ref", co.ref, "reference transcripts")->required();
  conf->add_option("--hyp", co.hyp, "one system");
  conf->add_option("--baseline", co.baseline, "system before fine-tuning");
  conf->add_option("--finetuned", co.finetuned, "system after fine-tuning");
  conf->add_option("--top", co.top, "print at most N rows per kind");
  conf->add_flag("--pretty", co.pretty);

  SubsetOpts so;
  auto* sub = app.add_subcommand("subset", "seeded random subset of a manifest");
  sub->add_option("--manifest", so.manifest)->required();
  sub->add_option("--size", so.size)->required();
  sub->add_option("--seed", so.seed);
  sub->add_option("--out", so.out, "write the subset manifest");

  CurvesOpts cvo;
  auto* curves = app.add_subcommand("curves", "PER-vs-size and PER-vs-epoch tables");
  curves->add_option("--history", cvo.histories, "history JSONL (repeatable)");
  curves->add_option("--sweep", cvo.sweep, "output of finetune --sweep-sizes");
  curves->add_flag("--pretty", cvo.pretty);

  SynthOpts sy;
  auto* synth = app.add_subcommand("synth", "write the synthetic few-shot corpus");
  synth->add_option("--out-dir", sy.out_dir)->required();
  synth->add_option("--seed", sy.seed);
  synth->add_option("--pretrain-size", sy.pretrain_size);
  synth->add_option("--train-size", sy.train_size);
  synth->add_option("--dev-size", sy.dev_size);
  synth->add_option("--test-size", sy.test_size);
  synth->add_option("--epochs", sy.epochs, "max_epochs written to the run configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) err << kSchemaHint << '\n';
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*featurize) return run_featurize(fo, io);
    if (*vad) return run_vad_split(vo, io);
    if (*g2p) return run_g2p(go, io, in);
    if (*pretrain) return run_pretrain(po, io);
    if (*finetune) return run_finetune(fto, io);
    if (*dec) return run_decode(dopt, io);
    if (*ev) return run_eval_per(eo, io);
    if (*conf) return run_confusions(co, io);
    if (*sub) return run_subset(so, io);
    if (*curves) return run_curves(cvo, io);
    if (*synth) return run_synth(sy, io);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n' << kSchemaHint << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.data_error() ? kDataError : kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace allo::cli
