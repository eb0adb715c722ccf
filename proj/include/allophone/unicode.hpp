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

// Thin UTF-8 helpers over ICU. IPA symbols are compared in NFC so that
// precomposed and combining-sequence spellings of the same phone agree.

#pragma once

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <string>
#include <string_view>
#include <vector>

#include "allophone/common.hpp"

namespace allo::unicode {

inline std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable", false);
  icu::UnicodeString us = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = norm->normalize(us, status);
  if (U_FAILURE(status)) throw Error("invalid UTF-8 input");
  std::string result;
  out.toUTF8String(result);
  return result;
}

/// Locale-independent full lowercase mapping, followed by NFC.
inline std::string lower(std::string_view s) {
  icu::UnicodeString us = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  us.toLower(icu::Locale::getRoot());
  std::string result;
  us.toUTF8String(result);
  return nfc(result);
}

/// Splits a UTF-8 string into code points, each returned as its UTF-8 bytes.
inline std::vector<std::string> code_points(std::string_view s) {
  std::vector<std::string> out;
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto len = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < len) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, len, c);
    if (c < 0) throw Error("invalid UTF-8 at byte " + std::to_string(start));
    out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline bool is_space(std::string_view cp) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(cp.data());
  int32_t i = 0;
  UChar32 c;
  U8_NEXT(p, i, static_cast<int32_t>(cp.size()), c);
  return c >= 0 && u_isUWhiteSpace(c);
}

}  // namespace allo::unicode
