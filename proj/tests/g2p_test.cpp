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

#include "allophone/g2p.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "oracles.hpp"

namespace allo::g2p {
namespace {

RuleSet rules_from(const std::string& text) {
  std::istringstream in(text);
  return parse_rules(in);
}

TEST(CompileRules, KeepsFileOrder) {
  auto dir = testing::temp_dir("g2p_compile");
  const auto path = (dir / "rules.tsv").string();
  std::ofstream(path) << "# saamia sample\nch\ttʃ\na\ta\n\nn\tn\n";
  auto rs = compile_rules(path);
  ASSERT_EQ(rs.size(), 3u);
  EXPECT_EQ(rs.rules()[0], (Rule{"ch", "tʃ"}));
  EXPECT_EQ(rs.rules()[2], (Rule{"n", "n"}));
}

TEST(CompileRules, DuplicateSource) {
  EXPECT_THROW(rules_from("ch\ttʃ\nch\tk\n"), DuplicateSource);
  // Case-folded sources collide too.
  EXPECT_THROW(rules_from("ch\ttʃ\nCH\tk\n"), DuplicateSource);
}

TEST(CompileRules, EmptyRuleSet) {
  EXPECT_THROW(rules_from(""), EmptyRuleSet);
  EXPECT_THROW(rules_from("# only a comment\n\n"), EmptyRuleSet);
}

TEST(CompileRules, ParseErrorCarriesLine) {
  try {
    rules_from("a\ta\nbroken line\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(rules_from("a\tb\tc\n"), ParseError);
}

TEST(CompileRules, MissingFile) {
  EXPECT_THROW(compile_rules("/nonexistent/rules.tsv"), IoError);
}

TEST(Transliterate, RuleTargetsConcatenate) {
  auto rs = rules_from("ch\ttʃ\na\ta\n");
  EXPECT_EQ(transliterate("chacha", rs), "tʃatʃa");
}

TEST(Transliterate, LongestSourceWins) {
  auto rs = rules_from("s\ts\nsh\tʃ\na\ta\n");
  EXPECT_EQ(transliterate("sha", rs), "ʃa");
  EXPECT_EQ(transliterate("sa", rs), "sa");
}

TEST(Transliterate, InputIsLowercased) {
  auto rs = rules_from("ch\ttʃ\na\ta\n");
  EXPECT_EQ(transliterate("ChACHa", rs), "tʃatʃa");
}

TEST(Transliterate, ReportsEveryUnmappableCharacter) {
  auto rs = rules_from("a\ta\n");
  try {
    transliterate("ab", rs);
    FAIL() << "expected UnmappableInput";
  } catch (const UnmappableInput& e) {
    ASSERT_EQ(e.locations().size(), 1u);
    EXPECT_EQ(e.locations()[0].first, 1u);
    EXPECT_EQ(e.locations()[0].second, "b");
  }
  try {
    transliterate("xaya", rs);
    FAIL() << "expected UnmappableInput";
  } catch (const UnmappableInput& e) {
    ASSERT_EQ(e.locations().size(), 2u);
    EXPECT_EQ(e.locations()[0].first, 0u);
    EXPECT_EQ(e.locations()[1].first, 2u);
  }
}

TEST(TransliterateProperty, SingleCharacterRulesActAsCharacterMap) {
  const std::vector<std::string> src = {"a", "b", "c", "d", "e", "k"};
  const std::vector<std::string> dst = {"ɑ", "β", "tʃ", "ð", "ɛ", "kʰ"};
  std::string text;
  for (std::size_t i = 0; i < src.size(); ++i)
    text += src[i] + "\t" + dst[i] + "\n";
  auto rs = rules_from(text);
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::string in, want;
    const std::size_t n = rng.below(12);
    for (std::size_t k = 0; k < n; ++k) {
      const auto c = rng.below(src.size());
      in += src[c];
      want += dst[c];
    }
    EXPECT_EQ(transliterate(in, rs), want);
    EXPECT_EQ(transliterate(in, rs), transliterate(in, rs));
  }
}

}  // namespace
}  // namespace allo::g2p
