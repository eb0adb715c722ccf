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

// Phone error rate, Levenshtein alignment and correction analysis between a
// baseline and a fine-tuned system.

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "allophone/common.hpp"

namespace allo::eval {

using Phones = std::vector<std::string>;

class EmptyReference : public Error {
 public:
  EmptyReference() : Error("alignment needs a non-empty reference") {}
};

class LengthMismatch : public Error {
 public:
  explicit LengthMismatch(const std::string& what)
      : Error("corpus mismatch: " + what) {}
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus has no reference phones") {}
};

enum class EditKind { kMatch, kSubstitute, kDelete, kInsert };

struct EditOp {
  EditKind kind;
  std::string ref;  // empty for insertions
  std::string hyp;  // empty for deletions
  bool operator==(const EditOp&) const = default;
};

struct Alignment {
  std::vector<EditOp> ops;

  std::size_t cost() const {
    return std::count_if(ops.begin(), ops.end(), [](const EditOp& op) {
      return op.kind != EditKind::kMatch;
    });
  }
};

/// Minimum-cost unit Levenshtein alignment. When several edit scripts are
/// optimal the backtrace prefers match, then substitution, then deletion,
/// then insertion.
inline Alignment align(const Phones& ref, const Phones& hyp) {
  if (ref.empty()) throw EmptyReference();
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return d[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1),
                           at(i - 1, j) + 1, at(i, j - 1) + 1});

  Alignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] &&
        here == at(i - 1, j - 1)) {
      a.ops.push_back({EditKind::kMatch, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && j > 0 && ref[i - 1] != hyp[j - 1] &&
               here == at(i - 1, j - 1) + 1) {
      a.ops.push_back({EditKind::kSubstitute, ref[i - 1], hyp[j - 1]});
      --i, --j;
    } else if (i > 0 && here == at(i - 1, j) + 1) {
      a.ops.push_back({EditKind::kDelete, ref[i - 1], {}});
      --i;
    } else {
      a.ops.push_back({EditKind::kInsert, {}, hyp[j - 1]});
      --j;
    }
  }
  std::reverse(a.ops.begin(), a.ops.end());
  return a;
}

struct PerReport {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double per() const {
    return ref_length == 0 ? 0.0 : 100.0 * double(errors()) / double(ref_length);
  }
  PerReport& operator+=(const PerReport& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_length += o.ref_length;
    return *this;
  }
};

inline PerReport count_errors(const Phones& ref, const Phones& hyp) {
  PerReport r;
  r.ref_length = ref.size();
  if (ref.empty()) {
    r.insertions = hyp.size();
    return r;
  }
  for (const auto& op : align(ref, hyp).ops) {
    if (op.kind == EditKind::kSubstitute) ++r.substitutions;
    if (op.kind == EditKind::kDelete) ++r.deletions;
    if (op.kind == EditKind::kInsert) ++r.insertions;
  }
  return r;
}

/// Corpus-level PER: edit counts pooled over utterances.
inline PerReport per(const std::vector<Phones>& refs,
                     const std::vector<Phones>& hyps) {
  if (refs.size() != hyps.size())
    throw LengthMismatch(std::to_string(refs.size()) + " references vs " +
                         std::to_string(hyps.size()) + " hypotheses");
  PerReport total;
  for (std::size_t u = 0; u < refs.size(); ++u)
    total += count_errors(refs[u], hyps[u]);
  if (total.ref_length == 0) throw EmptyCorpus();
  return total;
}

struct PairCount {
  std::string ref;
  std::string hyp;  // empty: the phone was dropped
  std::size_t count = 0;
  bool operator==(const PairCount&) const = default;
};

struct Corrections {
  std::vector<PairCount> substitutions;  // (ref -> baseline phone) fixed
  std::vector<PairCount> deletions;      // (ref -> nothing) fixed
};

namespace detail {

/// For each reference position, the edit op that consumed it.
inline std::vector<EditOp> ops_by_ref_position(const Alignment& a) {
  std::vector<EditOp> out;
  for (const auto& op : a.ops)
    if (op.kind != EditKind::kInsert) out.push_back(op);
  return out;
}

inline std::vector<PairCount> sorted_counts(
    const std::map<std::pair<std::string, std::string>, std::size_t>& m) {
  std::vector<PairCount> v;
  for (const auto& [k, c] : m) v.push_back({k.first, k.second, c});
  std::stable_sort(v.begin(), v.end(), [](const PairCount& a, const PairCount& b) {
    return a.count > b.count;
  });
  return v;
}

}  // namespace detail

/// Reference positions that the baseline got wrong and the fine-tuned system
/// got right, keyed by the baseline's error. Each hypothesis is aligned to
/// the shared reference independently.
inline Corrections corrections(const std::vector<Phones>& refs,
                               const std::vector<Phones>& baseline,
                               const std::vector<Phones>& finetuned) {
  if (refs.size() != baseline.size() || refs.size() != finetuned.size())
    throw LengthMismatch("reference, baseline and fine-tuned corpora differ in size");
  std::map<std::pair<std::string, std::string>, std::size_t> subs, dels;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    if (refs[u].empty()) continue;
    const auto base = detail::ops_by_ref_position(align(refs[u], baseline[u]));
    const auto ft = detail::ops_by_ref_position(align(refs[u], finetuned[u]));
    for (std::size_t i = 0; i < refs[u].size(); ++i) {
      if (ft[i].kind != EditKind::kMatch) continue;
      if (base[i].kind == EditKind::kSubstitute)
        ++subs[{base[i].ref, base[i].hyp}];
      else if (base[i].kind == EditKind::kDelete)
        ++dels[{base[i].ref, {}}];
    }
  }
  return {detail::sorted_counts(subs), detail::sorted_counts(dels)};
}

/// Substitution pairs (ref -> hyp) of one system, most frequent first.
inline std::vector<PairCount> confusions(const std::vector<Phones>& refs,
                                         const std::vector<Phones>& hyps) {
  if (refs.size() != hyps.size())
    throw LengthMismatch("reference and hypothesis corpora differ in size");
  std::map<std::pair<std::string, std::string>, std::size_t> subs;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    if (refs[u].empty()) continue;
    for (const auto& op : align(refs[u], hyps[u]).ops)
      if (op.kind == EditKind::kSubstitute) ++subs[{op.ref, op.hyp}];
  }
  return detail::sorted_counts(subs);
}

// Transcript files: `utt_id<TAB>space separated phones`, one per line.

struct TranscriptEntry {
  std::string id;
  Phones phones;
};

inline Phones split_phones(const std::string& s) {
  Phones out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

/// `name` is used in error messages.
inline std::vector<TranscriptEntry> read_transcripts(std::istream& in,
                                                     const std::string& path) {
  std::vector<TranscriptEntry> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw CorruptFile(path + ":" + std::to_string(lineno) +
                        ": expected utt_id<TAB>phones");
    std::string id = line.substr(0, tab);
    if (!seen.insert(id).second)
      throw CorruptFile(path + ": duplicate utterance id " + id);
    out.push_back({std::move(id), split_phones(line.substr(tab + 1))});
  }
  return out;
}

inline std::vector<TranscriptEntry> read_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript file " + path);
  return read_transcripts(in, path);
}

inline void write_transcripts(std::ostream& out,
                              const std::vector<TranscriptEntry>& entries) {
  for (const auto& e : entries) {
    out << e.id << '\t';
    for (std::size_t i = 0; i < e.phones.size(); ++i)
      out << (i ? " " : "") << e.phones[i];
    out << '\n';
  }
}

/// Orders `hyps` to follow the ids of `refs`.
inline std::vector<Phones> match_by_id(const std::vector<TranscriptEntry>& refs,
                                       const std::vector<TranscriptEntry>& hyps) {
  if (refs.size() != hyps.size())
    throw LengthMismatch(std::to_string(refs.size()) + " references vs " +
                         std::to_string(hyps.size()) + " hypotheses");
  std::map<std::string, const Phones*> by_id;
  for (const auto& h : hyps) by_id[h.id] = &h.phones;
  std::vector<Phones> out;
  for (const auto& r : refs) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw LengthMismatch("no hypothesis for " + r.id);
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace allo::eval
