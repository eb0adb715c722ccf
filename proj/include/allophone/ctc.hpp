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

// CTC loss over unnormalized logits (forward-backward in log space), the
// exhaustive path-enumeration oracle, and greedy / inventory-constrained
// best-path decoding. Column 0 of every logit matrix is the blank.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "allophone/common.hpp"

namespace allo::ctc {

inline constexpr std::size_t kBlank = 0;

using LabelSequence = std::vector<std::size_t>;

class InfeasibleAlignment : public Error {
 public:
  InfeasibleAlignment(std::size_t frames, std::size_t needed)
      : Error("CTC alignment infeasible: " + std::to_string(frames) +
              " frames, at least " + std::to_string(needed) + " required") {}
};

class IndexOutOfRange : public Error {
 public:
  IndexOutOfRange(std::size_t label, std::size_t width)
      : Error("label " + std::to_string(label) + " outside [1, " +
              std::to_string(width - 1) + "]") {}
};

class InstanceTooLarge : public Error {
 public:
  InstanceTooLarge() : Error("brute-force CTC limited to T<=6, V<=5", false) {}
};

struct CtcResult {
  double loss = 0.0;
  MatrixD grad;  // d loss / d logits, T x V
};

/// Minimum number of frames able to emit `labels`: one per label plus a
/// separating blank between equal neighbours.
inline std::size_t min_frames(std::span<const std::size_t> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline MatrixD log_softmax(const MatrixD& logits) {
  MatrixD out(logits.rows, logits.cols);
  for (std::size_t t = 0; t < logits.rows; ++t) {
    auto in = logits.row(t);
    double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double x : in) sum += std::exp(x - mx);
    const double lz = mx + std::log(sum);
    auto o = out.row(t);
    for (std::size_t k = 0; k < in.size(); ++k) o[k] = in[k] - lz;
  }
  return out;
}

inline void check_inputs(const MatrixD& logits,
                         std::span<const std::size_t> labels) {
  if (logits.rows == 0 || logits.cols < 2)
    throw DimensionMismatch("CTC needs T>=1 frames and V>=2 symbols");
  if (!all_finite(logits.data))
    throw InvalidArgument("CTC logits must be finite");
  for (auto l : labels)
    if (l == kBlank || l >= logits.cols) throw IndexOutOfRange(l, logits.cols);
  const auto need = min_frames(labels);
  if (need > logits.rows) throw InfeasibleAlignment(logits.rows, need);
}

}  // namespace detail

/// Negative log-likelihood of `labels` and its gradient w.r.t. the logits.
/// An empty label sequence is scored as the all-blank path.
inline CtcResult ctc_loss(const MatrixD& logits,
                          std::span<const std::size_t> labels) {
  using detail::kNegInf;
  using detail::log_add;
  detail::check_inputs(logits, labels);

  const std::size_t T = logits.rows;
  const std::size_t V = logits.cols;
  const std::size_t S = 2 * labels.size() + 1;
  std::vector<std::size_t> ext(S, kBlank);
  for (std::size_t u = 0; u < labels.size(); ++u) ext[2 * u + 1] = labels[u];

  const MatrixD lp = detail::log_softmax(logits);
  // skip(s): the transition s-2 -> s is legal.
  auto skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
  };

  MatrixD alpha(T, S, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + lp(t, ext[s]);
    }
  }
  double log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, alpha(T - 1, S - 2));
  if (log_p == kNegInf) throw InfeasibleAlignment(T, min_frames(labels));

  // beta(t, s): log probability of the remaining frames given state s at t
  // (emission at t excluded).
  MatrixD beta(T, S, kNegInf);
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s) + lp(t + 1, ext[s]);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + lp(t + 1, ext[s + 1]));
      if (s + 2 < S && skip(s + 2))
        b = log_add(b, beta(t + 1, s + 2) + lp(t + 1, ext[s + 2]));
      beta(t, s) = b;
    }
  }

  CtcResult r;
  r.loss = -log_p;
  r.grad = MatrixD(T, V);
  for (std::size_t t = 0; t < T; ++t) {
    auto g = r.grad.row(t);
    for (std::size_t k = 0; k < V; ++k) g[k] = std::exp(lp(t, k));
    for (std::size_t s = 0; s < S; ++s) {
      const double occ = alpha(t, s) + beta(t, s) - log_p;
      if (occ != kNegInf) g[ext[s]] -= std::exp(occ);
    }
  }
  return r;
}

/// Test oracle: sums the probability of every one of the V^T framewise paths
/// that collapses to `labels`.
inline double brute_force_ctc(const MatrixD& logits,
                              std::span<const std::size_t> labels) {
  const std::size_t T = logits.rows;
  const std::size_t V = logits.cols;
  if (T > 6 || V > 5) throw InstanceTooLarge();
  if (T == 0 || V < 2)
    throw DimensionMismatch("CTC needs T>=1 frames and V>=2 symbols");
  for (auto l : labels)
    if (l == kBlank || l >= V) throw IndexOutOfRange(l, V);

  MatrixD prob(T, V);
  for (std::size_t t = 0; t < T; ++t) {
    auto in = logits.row(t);
    double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double x : in) z += std::exp(x - mx);
    for (std::size_t k = 0; k < V; ++k) prob(t, k) = std::exp(in[k] - mx) / z;
  }

  std::vector<std::size_t> path(T, 0);
  LabelSequence collapsed;
  double total = 0.0;
  while (true) {
    collapsed.clear();
    std::size_t prev = kBlank;
    double p = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      p *= prob(t, path[t]);
      if (path[t] != kBlank && path[t] != prev) collapsed.push_back(path[t]);
      prev = path[t];
    }
    if (std::equal(collapsed.begin(), collapsed.end(), labels.begin(),
                   labels.end()))
      total += p;
    // Odometer increment.
    std::size_t t = 0;
    while (t < T && ++path[t] == V) path[t++] = 0;
    if (t == T) break;
  }
  if (total == 0.0) throw InfeasibleAlignment(T, min_frames(labels));
  return -std::log(total);
}

/// Best path: framewise argmax (lowest index on ties), merge repeats, drop
/// blanks.
inline LabelSequence greedy_decode(const MatrixD& logits) {
  if (logits.rows == 0) throw DimensionMismatch("decode needs T>=1");
  LabelSequence out;
  std::size_t prev = kBlank;
  for (std::size_t t = 0; t < logits.rows; ++t) {
    auto r = logits.row(t);
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k)
      if (r[k] > r[best]) best = k;
    if (best != kBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

/// Greedy decoding restricted to `allowed` (plus the blank). Indices outside
/// the set are masked to -inf before the argmax.
inline LabelSequence constrained_decode(const MatrixD& logits,
                                        std::span<const std::size_t> allowed) {
  std::vector<bool> keep(logits.cols, false);
  keep[kBlank] = true;
  for (auto k : allowed) {
    if (k == kBlank || k >= logits.cols)
      throw InvalidArgument("allowed index " + std::to_string(k) +
                            " outside [1, V-1]");
    keep[k] = true;
  }
  MatrixD masked = logits;
  for (std::size_t t = 0; t < masked.rows; ++t) {
    auto r = masked.row(t);
    for (std::size_t k = 0; k < r.size(); ++k)
      if (!keep[k]) r[k] = detail::kNegInf;
  }
  return greedy_decode(masked);
}

}  // namespace allo::ctc
