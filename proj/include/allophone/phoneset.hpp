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

// Phone and phoneme inventories, signature matrices and transcript
// tokenization.
//
// Model output layers reserve column 0 for the CTC blank; the universal
// inventory therefore numbers its phones from 1. Inventories never contain
// the blank.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/unicode.hpp"
#include "json.hpp"

namespace allo {

class UnknownSymbol : public Error {
 public:
  UnknownSymbol(std::size_t position, std::string fragment)
      : Error("unknown symbol '" + fragment + "' at position " +
              std::to_string(position)),
        position_(position),
        fragment_(std::move(fragment)) {}
  std::size_t position() const { return position_; }
  const std::string& fragment() const { return fragment_; }

 private:
  std::size_t position_;
  std::string fragment_;
};

class DuplicateSymbol : public Error {
 public:
  explicit DuplicateSymbol(const std::string& s)
      : Error("duplicate inventory symbol '" + s + "'") {}
};

class MissingPhoneme : public Error {
 public:
  explicit MissingPhoneme(const std::string& s)
      : Error("signature file has no entry for phoneme '" + s + "'") {}
};

class UnexpectedPhoneme : public Error {
 public:
  explicit UnexpectedPhoneme(const std::string& s)
      : Error("signature file lists phoneme '" + s +
              "' which is not in the language inventory") {}
};

class UnknownPhone : public Error {
 public:
  UnknownPhone(const std::string& phoneme, const std::string& phone)
      : Error("allophone '" + phone + "' of phoneme '" + phoneme +
              "' is not in the universal inventory") {}
};

class EmptyAllophoneList : public Error {
 public:
  explicit EmptyAllophoneList(const std::string& phoneme)
      : Error("phoneme '" + phoneme + "' has no allophones") {}
};

struct Phone {
  std::string symbol;
  std::size_t index = 0;
  bool operator==(const Phone&) const = default;
};

/// Ordered symbol list with symbol lookup. Symbols are stored NFC-normalized.
class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(const std::vector<std::string>& symbols) {
    symbols_.reserve(symbols.size());
    for (const auto& raw : symbols) {
      std::string s = unicode::nfc(raw);
      if (s.empty()) throw Error("empty inventory symbol");
      if (!lookup_.emplace(s, symbols_.size()).second) throw DuplicateSymbol(s);
      symbols_.push_back(std::move(s));
    }
  }

  std::size_t size() const { return symbols_.size(); }
  bool empty() const { return symbols_.empty(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& at(std::size_t i) const { return symbols_.at(i); }

  /// Position in the list (0-based).
  std::optional<std::size_t> find(std::string_view symbol) const {
    auto it = lookup_.find(unicode::nfc(symbol));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view symbol) const {
    return find(symbol).has_value();
  }
  /// Lookup of an already-normalized symbol.
  std::optional<std::size_t> find_exact(const std::string& symbol) const {
    auto it = lookup_.find(symbol);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// P_uni. Phone k of the list has model output index k + 1.
class UniversalInventory {
 public:
  UniversalInventory() = default;
  explicit UniversalInventory(const std::vector<std::string>& symbols)
      : table_(symbols) {}

  std::size_t size() const { return table_.size(); }
  /// Width of the phone logit layer: |P_uni| + 1 (blank at 0).
  std::size_t output_dim() const { return table_.size() + 1; }

  /// 1-based output index.
  std::optional<std::size_t> index_of(std::string_view symbol) const {
    auto i = table_.find(symbol);
    if (!i) return std::nullopt;
    return *i + 1;
  }
  const std::string& symbol(std::size_t index) const {
    if (index == 0 || index > table_.size())
      throw InvalidArgument("phone index out of range: " +
                            std::to_string(index));
    return table_.at(index - 1);
  }
  std::vector<Phone> phones() const {
    std::vector<Phone> out;
    for (std::size_t i = 0; i < table_.size(); ++i)
      out.push_back({table_.at(i), i + 1});
    return out;
  }
  const SymbolTable& table() const { return table_; }

 private:
  SymbolTable table_;
};

/// Q_i (phonemes) and P_i (phones) of one language.
struct LanguageInventory {
  std::string id;
  SymbolTable phonemes;
  SymbolTable phones;
};

/// Binary |Q_i| x |P_uni| phoneme/phone association. Column k corresponds to
/// universal output index k + 1.
class SignatureMatrix {
 public:
  SignatureMatrix() = default;
  explicit SignatureMatrix(Matrix<std::uint8_t> entries)
      : entries_(std::move(entries)) {
    for (std::size_t j = 0; j < entries_.rows; ++j) {
      std::size_t nonzero = 0;
      for (auto v : entries_.row(j)) {
        if (v > 1) throw InvalidArgument("signature entries must be 0 or 1");
        nonzero += v;
      }
      if (nonzero == 0)
        throw InvalidArgument("signature row " + std::to_string(j) +
                              " has no allophone");
    }
  }

  std::size_t phonemes() const { return entries_.rows; }
  std::size_t phones() const { return entries_.cols; }
  bool operator()(std::size_t j, std::size_t k) const {
    return entries_(j, k) != 0;
  }
  const Matrix<std::uint8_t>& entries() const { return entries_; }
  MatrixD as_real() const {
    MatrixD m(entries_.rows, entries_.cols);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      m.data[i] = entries_.data[i];
    return m;
  }
  bool operator==(const SignatureMatrix&) const = default;

 private:
  Matrix<std::uint8_t> entries_;
};

/// Greedy longest-match segmenter over a fixed symbol set.
class Tokenizer {
 public:
  explicit Tokenizer(const SymbolTable& table) : table_(&table) {
    if (table.empty()) throw InvalidArgument("tokenize: empty inventory");
    for (const auto& s : table.symbols())
      max_len_ = std::max(max_len_, unicode::code_points(s).size());
  }

  /// Returned Phone::index is the symbol's 0-based position in the table.
  /// Whitespace is skipped and never falls inside a token.
  std::vector<Phone> operator()(std::string_view transcript) const {
    const auto cps = unicode::code_points(unicode::nfc(transcript));
    std::vector<Phone> out;
    std::size_t pos = 0;
    while (pos < cps.size()) {
      if (unicode::is_space(cps[pos])) {
        ++pos;
        continue;
      }
      bool matched = false;
      std::string candidate;
      const std::size_t limit = std::min(max_len_, cps.size() - pos);
      // Build candidates of increasing length, remember the longest hit.
      std::size_t best_len = 0;
      std::size_t best_index = 0;
      for (std::size_t len = 1; len <= limit; ++len) {
        if (unicode::is_space(cps[pos + len - 1])) break;
        candidate += cps[pos + len - 1];
        if (auto i = table_->find_exact(candidate)) {
          best_len = len;
          best_index = *i;
          matched = true;
        }
      }
      if (!matched) throw UnknownSymbol(pos, cps[pos]);
      out.push_back({table_->at(best_index), best_index});
      pos += best_len;
    }
    return out;
  }

 private:
  const SymbolTable* table_;
  std::size_t max_len_ = 0;
};

inline std::vector<Phone> tokenize(std::string_view transcript,
                                   const SymbolTable& inventory) {
  return Tokenizer(inventory)(transcript);
}

/// Tokenizes against P_uni; indices are model output indices (1-based).
inline std::vector<Phone> tokenize(std::string_view transcript,
                                   const UniversalInventory& inventory) {
  auto phones = Tokenizer(inventory.table())(transcript);
  for (auto& p : phones) ++p.index;
  return phones;
}

/// Inventory file: UTF-8, one symbol per line. Blank lines are skipped.
inline std::vector<std::string> read_inventory_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open inventory file " + path);
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' ||
                             line.back() == '\t'))
      line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    symbols.push_back(line.substr(first));
  }
  return symbols;
}

inline void write_inventory_file(const std::string& path,
                                 const std::vector<std::string>& symbols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& s : symbols) out << s << '\n';
}

inline UniversalInventory load_universal_inventory(const std::string& path) {
  return UniversalInventory(read_inventory_file(path));
}

/// Phoneme keys of a signature file, in file order.
inline std::vector<std::string> signature_phonemes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open signature file " + path);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptFile(path + ": " + e.what());
  }
  if (!doc.is_object()) throw CorruptFile(path + ": expected a JSON object");
  std::vector<std::string> keys;
  for (auto it = doc.begin(); it != doc.end(); ++it) keys.push_back(it.key());
  return keys;
}

/// Builds S^i from a JSON object mapping phoneme -> [allophone, ...].
inline SignatureMatrix parse_signature(const nlohmann::json& doc,
                                       const LanguageInventory& language,
                                       const UniversalInventory& universal) {
  if (!doc.is_object()) throw CorruptFile("signature: expected a JSON object");
  Matrix<std::uint8_t> m(language.phonemes.size(), universal.size(), 0);
  std::vector<bool> seen(language.phonemes.size(), false);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto row = language.phonemes.find(it.key());
    if (!row) throw UnexpectedPhoneme(it.key());
    if (!it.value().is_array())
      throw CorruptFile("signature entry for '" + it.key() +
                        "' is not an array");
    if (it.value().empty()) throw EmptyAllophoneList(it.key());
    for (const auto& phone : it.value()) {
      if (!phone.is_string())
        throw CorruptFile("signature entry for '" + it.key() +
                          "' contains a non-string");
      auto col = universal.index_of(phone.get<std::string>());
      if (!col) throw UnknownPhone(it.key(), phone.get<std::string>());
      m(*row, *col - 1) = 1;
    }
    seen[*row] = true;
  }
  for (std::size_t j = 0; j < seen.size(); ++j)
    if (!seen[j]) throw MissingPhoneme(language.phonemes.at(j));
  return SignatureMatrix(std::move(m));
}

inline SignatureMatrix load_signature(const std::string& path,
                                      const LanguageInventory& language,
                                      const UniversalInventory& universal) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open signature file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptFile(path + ": " + e.what());
  }
  return parse_signature(doc, language, universal);
}

/// Sorted universal output indices of P_i ∩ P_uni. The blank is not part of
/// the result; decoders always allow it.
inline std::vector<std::size_t> restrict_to(const SymbolTable& language_phones,
                                            const UniversalInventory& universal) {
  std::vector<std::size_t> out;
  for (const auto& s : language_phones.symbols())
    if (auto i = universal.index_of(s)) out.push_back(*i);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace allo
