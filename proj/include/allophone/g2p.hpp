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

// Context-free orthography-to-IPA transliteration.
//
// Rules file: UTF-8, one `source<TAB>target` pair per line, `#` starts a
// comment line. Sources are matched case-insensitively (both the rule
// sources and the input are lowercased) with longest match winning.

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/unicode.hpp"

namespace allo::g2p {

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& why)
      : Error("rules line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateSource : public Error {
 public:
  explicit DuplicateSource(const std::string& s)
      : Error("duplicate rule source '" + s + "'") {}
};

class EmptyRuleSet : public Error {
 public:
  EmptyRuleSet() : Error("rule set has no rules") {}
};

/// Every input position no rule covers, as (code point index, character).
class UnmappableInput : public Error {
 public:
  using Location = std::pair<std::size_t, std::string>;

  explicit UnmappableInput(std::vector<Location> where)
      : Error(describe(where)), where_(std::move(where)) {}
  const std::vector<Location>& locations() const { return where_; }

 private:
  static std::string describe(const std::vector<Location>& where) {
    std::string msg = "unmappable input at";
    for (const auto& [pos, frag] : where)
      msg += " " + std::to_string(pos) + " '" + frag + "'";
    return msg;
  }
  std::vector<Location> where_;
};

struct Rule {
  std::string source;
  std::string target;
  bool operator==(const Rule&) const = default;
};

class RuleSet {
 public:
  explicit RuleSet(std::vector<Rule> rules) {
    if (rules.empty()) throw EmptyRuleSet();
    for (auto& r : rules) {
      r.source = unicode::lower(r.source);
      r.target = unicode::nfc(r.target);
      if (r.source.empty()) throw InvalidArgument("rule with empty source");
      if (!index_.emplace(r.source, rules_.size()).second)
        throw DuplicateSource(r.source);
      max_len_ = std::max(max_len_, unicode::code_points(r.source).size());
      rules_.push_back(std::move(r));
    }
  }

  const std::vector<Rule>& rules() const { return rules_; }
  std::size_t size() const { return rules_.size(); }

  std::string transliterate(std::string_view text) const {
    const auto cps = unicode::code_points(unicode::lower(text));
    std::string out;
    std::vector<UnmappableInput::Location> bad;
    std::size_t pos = 0;
    while (pos < cps.size()) {
      std::string candidate;
      const Rule* best = nullptr;
      std::size_t best_len = 0;
      const std::size_t limit = std::min(max_len_, cps.size() - pos);
      for (std::size_t len = 1; len <= limit; ++len) {
        candidate += cps[pos + len - 1];
        auto it = index_.find(candidate);
        if (it != index_.end()) {
          best = &rules_[it->second];
          best_len = len;
        }
      }
      if (best == nullptr) {
        bad.emplace_back(pos, cps[pos]);
        ++pos;
        continue;
      }
      out += best->target;
      pos += best_len;
    }
    if (!bad.empty()) throw UnmappableInput(std::move(bad));
    return out;
  }

 private:
  std::vector<Rule> rules_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t max_len_ = 0;
};

inline RuleSet parse_rules(std::istream& in) {
  std::vector<Rule> rules;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(lineno, "expected source<TAB>target");
    if (line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(lineno, "more than one TAB");
    if (tab == 0) throw ParseError(lineno, "empty source");
    rules.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return RuleSet(std::move(rules));
}

inline RuleSet compile_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rules file " + path);
  return parse_rules(in);
}

inline std::string transliterate(std::string_view text, const RuleSet& rules) {
  return rules.transliterate(text);
}

}  // namespace allo::g2p
