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

// Acoustic encoder (stacked bidirectional LSTM + affine projection to the
// universal phone logits) and the allophone layer, with exact reverse-mode
// gradients. All arithmetic is double precision.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "allophone/common.hpp"
#include "allophone/phoneset.hpp"

namespace allo::nn {

class TraceMismatch : public Error {
 public:
  explicit TraceMismatch(const std::string& what)
      : Error("trace mismatch: " + what, false) {}
};

struct EncoderConfig {
  std::size_t input_dim = 40;
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;  // per direction
  std::size_t output_dim = 0;    // |P_uni| + 1
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || num_layers < 1 || hidden_size < 1)
      throw InvalidArgument("encoder dimensions must be >= 1");
    if (output_dim < 2)
      throw InvalidArgument("encoder output_dim must be |P_uni|+1 >= 2");
  }
  bool operator==(const EncoderConfig&) const = default;
};

/// One LSTM direction. Gate blocks are stacked [input, forget, cell, output]
/// along the rows of wx/wh/b.
struct LstmWeights {
  MatrixD wx;  // 4H x D
  MatrixD wh;  // 4H x H
  MatrixD b;   // 1 x 4H
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<std::array<LstmWeights, 2>> layers;  // [forward, backward]
  MatrixD proj;    // V x 2H
  MatrixD proj_b;  // 1 x V

  /// Visits every tensor in the canonical (checkpoint) order: for each layer,
  /// forward then backward direction as wx, wh, b; then proj, proj_b.
  template <typename F>
  void for_each(F&& f) {
    for (auto& layer : layers)
      for (auto& d : layer) {
        f(d.wx);
        f(d.wh);
        f(d.b);
      }
    f(proj);
    f(proj_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& layer : layers)
      for (const auto& d : layer) {
        f(d.wx);
        f(d.wh);
        f(d.b);
      }
    f(proj);
    f(proj_b);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const MatrixD& m) { n += m.size(); });
    return n;
  }

  bool operator==(const EncoderParams& o) const {
    if (!(config == o.config) || layers.size() != o.layers.size())
      return false;
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (int d = 0; d < 2; ++d)
        if (!(layers[l][d].wx == o.layers[l][d].wx) ||
            !(layers[l][d].wh == o.layers[l][d].wh) ||
            !(layers[l][d].b == o.layers[l][d].b))
          return false;
    return proj == o.proj && proj_b == o.proj_b;
  }
};

/// Parameters with every tensor zero, shaped by `config`.
inline EncoderParams zero_params(const EncoderConfig& config) {
  config.validate();
  const std::size_t H = config.hidden_size;
  EncoderParams p;
  p.config = config;
  p.layers.resize(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t D = l == 0 ? config.input_dim : 2 * H;
    for (auto& d : p.layers[l]) {
      d.wx = MatrixD(4 * H, D);
      d.wh = MatrixD(4 * H, H);
      d.b = MatrixD(1, 4 * H);
    }
  }
  p.proj = MatrixD(config.output_dim, 2 * H);
  p.proj_b = MatrixD(1, config.output_dim);
  return p;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate biases 1.
inline EncoderParams init_encoder(const EncoderConfig& config) {
  EncoderParams p = zero_params(config);
  Rng rng(config.seed);
  const std::size_t H = config.hidden_size;
  for (auto& layer : p.layers)
    for (auto& d : layer) {
      const double bound = 1.0 / std::sqrt(double(d.wx.cols + H));
      for (MatrixD* m : {&d.wx, &d.wh, &d.b})
        for (double& x : m->data) x = rng.uniform(-bound, bound);
      for (std::size_t i = H; i < 2 * H; ++i) d.b.data[i] = 1.0;
    }
  const double bound = 1.0 / std::sqrt(double(2 * H));
  for (double& x : p.proj.data) x = rng.uniform(-bound, bound);
  for (double& x : p.proj_b.data) x = rng.uniform(-bound, bound);
  return p;
}

/// Activations of one direction of one layer, indexed by frame.
struct DirectionTrace {
  MatrixD gates;   // T x 4H, post-nonlinearity [i, f, g, o]
  MatrixD cell;    // T x H
  MatrixD tanh_c;  // T x H
  MatrixD hidden;  // T x H
};

struct ForwardTrace {
  EncoderConfig config;
  std::vector<MatrixD> inputs;  // layer inputs; inputs[l] is T x D_l
  std::vector<std::array<DirectionTrace, 2>> dirs;
  MatrixD top;  // T x 2H, input of the projection
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void run_direction(const MatrixD& x, const LstmWeights& w,
                          bool reverse, DirectionTrace& tr) {
  const std::size_t T = x.rows;
  const std::size_t D = x.cols;
  const std::size_t H = w.wh.cols;
  tr.gates = MatrixD(T, 4 * H);
  tr.cell = MatrixD(T, H);
  tr.tanh_c = MatrixD(T, H);
  tr.hidden = MatrixD(T, H);
  std::vector<double> h_prev(H, 0.0), c_prev(H, 0.0), z(4 * H);
  for (std::size_t step = 0; step < T; ++step) {
    const std::size_t t = reverse ? T - 1 - step : step;
    const double* xt = x.data.data() + t * D;
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double acc = w.b.data[r];
      const double* wxr = w.wx.data.data() + r * D;
      for (std::size_t c = 0; c < D; ++c) acc += wxr[c] * xt[c];
      const double* whr = w.wh.data.data() + r * H;
      for (std::size_t c = 0; c < H; ++c) acc += whr[c] * h_prev[c];
      z[r] = acc;
    }
    double* g = tr.gates.data.data() + t * 4 * H;
    for (std::size_t i = 0; i < H; ++i) {
      g[i] = sigmoid(z[i]);
      g[H + i] = sigmoid(z[H + i]);
      g[2 * H + i] = std::tanh(z[2 * H + i]);
      g[3 * H + i] = sigmoid(z[3 * H + i]);
      const double c = g[H + i] * c_prev[i] + g[i] * g[2 * H + i];
      const double tc = std::tanh(c);
      tr.cell(t, i) = c;
      tr.tanh_c(t, i) = tc;
      tr.hidden(t, i) = g[3 * H + i] * tc;
      c_prev[i] = c;
      h_prev[i] = tr.hidden(t, i);
    }
  }
}

/// Accumulates weight gradients into `gw` and input gradients into `dx`.
inline void backprop_direction(const MatrixD& x, const LstmWeights& w,
                               bool reverse, const DirectionTrace& tr,
                               const MatrixD& dh_out, std::size_t dh_col,
                               LstmWeights& gw, MatrixD& dx) {
  const std::size_t T = x.rows;
  const std::size_t D = x.cols;
  const std::size_t H = w.wh.cols;
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(4 * H);
  std::vector<double> zeros(H, 0.0);
  for (std::size_t step = T; step-- > 0;) {
    const std::size_t t = reverse ? T - 1 - step : step;
    const bool first = step == 0;
    const std::size_t t_prev = reverse ? t + 1 : t - 1;  // valid if !first
    const double* g = tr.gates.data.data() + t * 4 * H;
    const double* c_prev = first ? zeros.data() : &tr.cell(t_prev, 0);
    const double* h_prev = first ? zeros.data() : &tr.hidden(t_prev, 0);
    for (std::size_t i = 0; i < H; ++i) {
      const double dh = dh_out(t, dh_col + i) + dh_next[i];
      const double ig = g[i], fg = g[H + i], cg = g[2 * H + i],
                   og = g[3 * H + i];
      const double tc = tr.tanh_c(t, i);
      const double dc = dh * og * (1.0 - tc * tc) + dc_next[i];
      dz[i] = dc * cg * ig * (1.0 - ig);
      dz[H + i] = dc * c_prev[i] * fg * (1.0 - fg);
      dz[2 * H + i] = dc * ig * (1.0 - cg * cg);
      dz[3 * H + i] = dh * tc * og * (1.0 - og);
      dc_next[i] = dc * fg;
    }
    const double* xt = x.data.data() + t * D;
    double* dxt = dx.data.data() + t * D;
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double d = dz[r];
      gw.b.data[r] += d;
      double* gwx = gw.wx.data.data() + r * D;
      const double* wxr = w.wx.data.data() + r * D;
      for (std::size_t c = 0; c < D; ++c) {
        gwx[c] += d * xt[c];
        dxt[c] += d * wxr[c];
      }
      double* gwh = gw.wh.data.data() + r * H;
      const double* whr = w.wh.data.data() + r * H;
      for (std::size_t c = 0; c < H; ++c) {
        gwh[c] += d * h_prev[c];
        dh_next[c] += d * whr[c];
      }
    }
  }
}

}  // namespace detail

/// Universal phone logits h (T x output_dim) and the trace for backward().
inline std::pair<MatrixD, ForwardTrace> encoder_forward(
    const MatrixD& features, const EncoderParams& params) {
  const auto& cfg = params.config;
  if (features.rows < 1) throw DimensionMismatch("encoder needs T >= 1");
  if (features.cols != cfg.input_dim)
    throw DimensionMismatch("feature width " + std::to_string(features.cols) +
                            " != input_dim " + std::to_string(cfg.input_dim));
  const std::size_t T = features.rows;
  const std::size_t H = cfg.hidden_size;
  ForwardTrace tr;
  tr.config = cfg;
  tr.inputs.push_back(features);
  tr.dirs.resize(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    for (int d = 0; d < 2; ++d)
      detail::run_direction(tr.inputs[l], params.layers[l][d], d == 1,
                            tr.dirs[l][d]);
    MatrixD out(T, 2 * H);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H; ++i) {
        out(t, i) = tr.dirs[l][0].hidden(t, i);
        out(t, H + i) = tr.dirs[l][1].hidden(t, i);
      }
    if (l + 1 < cfg.num_layers)
      tr.inputs.push_back(std::move(out));
    else
      tr.top = std::move(out);
  }
  const std::size_t V = cfg.output_dim;
  MatrixD logits(T, V);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v) {
      double acc = params.proj_b.data[v];
      const double* pr = params.proj.data.data() + v * 2 * H;
      const double* y = tr.top.data.data() + t * 2 * H;
      for (std::size_t c = 0; c < 2 * H; ++c) acc += pr[c] * y[c];
      logits(t, v) = acc;
    }
  return {std::move(logits), std::move(tr)};
}

inline MatrixD encoder_logits(const MatrixD& features,
                              const EncoderParams& params) {
  return encoder_forward(features, params).first;
}

/// Gradient of a scalar loss w.r.t. every encoder parameter, given the
/// loss gradient w.r.t. the logits of the traced forward pass.
inline EncoderParams encoder_backward(const ForwardTrace& trace,
                                      const MatrixD& dlogits,
                                      const EncoderParams& params) {
  const auto& cfg = params.config;
  if (!(trace.config == cfg))
    throw TraceMismatch("trace was produced with a different encoder config");
  const std::size_t T = trace.top.rows;
  const std::size_t H = cfg.hidden_size;
  const std::size_t V = cfg.output_dim;
  if (dlogits.rows != T || dlogits.cols != V)
    throw TraceMismatch("upstream gradient is " + std::to_string(dlogits.rows) +
                        "x" + std::to_string(dlogits.cols) + ", expected " +
                        std::to_string(T) + "x" + std::to_string(V));

  EncoderParams grad = zero_params(cfg);
  MatrixD dtop(T, 2 * H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* y = trace.top.data.data() + t * 2 * H;
    double* dy = dtop.data.data() + t * 2 * H;
    for (std::size_t v = 0; v < V; ++v) {
      const double d = dlogits(t, v);
      if (d == 0.0) continue;
      grad.proj_b.data[v] += d;
      double* gp = grad.proj.data.data() + v * 2 * H;
      const double* pr = params.proj.data.data() + v * 2 * H;
      for (std::size_t c = 0; c < 2 * H; ++c) {
        gp[c] += d * y[c];
        dy[c] += d * pr[c];
      }
    }
  }
  MatrixD dout = std::move(dtop);
  for (std::size_t l = cfg.num_layers; l-- > 0;) {
    const MatrixD& x = trace.inputs[l];
    MatrixD dx(T, x.cols);
    for (int d = 0; d < 2; ++d)
      detail::backprop_direction(x, params.layers[l][d], d == 1,
                                 trace.dirs[l][d], dout, d == 0 ? 0 : H,
                                 grad.layers[l][d], dx);
    dout = std::move(dx);
  }
  return grad;
}

/// Language-specific allophone layer: trainable W initialized from the
/// signature S, with penalty weight alpha.
struct AllophoneLayer {
  MatrixD w;  // |Q_i| x |P_uni|
  SignatureMatrix s;
  double alpha = 10.0;

  AllophoneLayer() = default;
  AllophoneLayer(SignatureMatrix sig, double a)
      : w(sig.as_real()), s(std::move(sig)), alpha(a) {}
  AllophoneLayer(MatrixD weights, SignatureMatrix sig, double a)
      : w(std::move(weights)), s(std::move(sig)), alpha(a) {
    if (w.rows != s.phonemes() || w.cols != s.phones())
      throw DimensionMismatch("allophone W and S shapes differ");
  }

  std::size_t phonemes() const { return w.rows; }
  std::size_t phones() const { return w.cols; }
  bool operator==(const AllophoneLayer&) const = default;
};

struct AllophoneTrace {
  std::size_t frames = 0;
  std::size_t phonemes = 0;
  std::size_t phones = 0;
  std::vector<std::size_t> argmax;  // frames x phonemes, phone column
  MatrixD h;                        // the phone logits that were pooled
};

/// Phoneme logits G (T x (|Q_i|+1)): per frame and phoneme j, the maximum of
/// w_jk * h_k over the allophones k of j (S_jk = 1); ties resolve to the
/// lowest phone index. Column 0 (blank) is copied from h.
inline std::pair<MatrixD, AllophoneTrace> allophone_forward(
    const MatrixD& h, const AllophoneLayer& layer) {
  const std::size_t Q = layer.phonemes();
  const std::size_t P = layer.phones();
  if (h.cols != P + 1)
    throw DimensionMismatch("phone logits have " + std::to_string(h.cols) +
                            " columns, allophone layer expects " +
                            std::to_string(P + 1));
  const std::size_t T = h.rows;
  AllophoneTrace tr{T, Q, P, std::vector<std::size_t>(T * Q), h};
  MatrixD g(T, Q + 1);
  for (std::size_t t = 0; t < T; ++t) {
    g(t, 0) = h(t, 0);
    for (std::size_t j = 0; j < Q; ++j) {
      bool any = false;
      double best = 0.0;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < P; ++k) {
        if (!layer.s(j, k)) continue;
        const double v = layer.w(j, k) * h(t, k + 1);
        if (!any || v > best) {
          best = v;
          arg = k;
          any = true;
        }
      }
      g(t, j + 1) = best;
      tr.argmax[t * Q + j] = arg;
    }
  }
  return {std::move(g), std::move(tr)};
}

struct AllophoneGrads {
  MatrixD dh;  // T x (|P_uni|+1)
  MatrixD dw;  // |Q_i| x |P_uni|, data term only
};

/// Routes each phoneme-logit gradient to its argmax allophone.
inline AllophoneGrads allophone_backward(const AllophoneTrace& trace,
                                         const MatrixD& dg,
                                         const AllophoneLayer& layer) {
  if (trace.phonemes != layer.phonemes() || trace.phones != layer.phones())
    throw TraceMismatch("allophone layer shape differs from trace");
  if (dg.rows != trace.frames || dg.cols != trace.phonemes + 1)
    throw TraceMismatch("phoneme-logit gradient shape differs from trace");
  const std::size_t Q = trace.phonemes;
  AllophoneGrads out{MatrixD(trace.frames, trace.phones + 1),
                     MatrixD(Q, trace.phones)};
  for (std::size_t t = 0; t < trace.frames; ++t) {
    out.dh(t, 0) += dg(t, 0);
    for (std::size_t j = 0; j < Q; ++j) {
      const double d = dg(t, j + 1);
      const std::size_t k = trace.argmax[t * Q + j];
      out.dh(t, k + 1) += d * layer.w(j, k);
      out.dw(j, k) += d * trace.h(t, k + 1);
    }
  }
  return out;
}

/// alpha * ||W - S||_F^2.
inline double allophone_penalty(const AllophoneLayer& layer) {
  double sum = 0.0;
  const auto& s = layer.s.entries().data;
  for (std::size_t i = 0; i < layer.w.size(); ++i) {
    const double d = layer.w.data[i] - s[i];
    sum += d * d;
  }
  return layer.alpha * sum;
}

/// Adds 2 * alpha * (W - S) to `dw`.
inline void add_penalty_gradient(const AllophoneLayer& layer, MatrixD& dw) {
  if (!dw.same_shape(layer.w))
    throw DimensionMismatch("penalty gradient shape");
  const auto& s = layer.s.entries().data;
  for (std::size_t i = 0; i < dw.size(); ++i)
    dw.data[i] += 2.0 * layer.alpha * (layer.w.data[i] - s[i]);
}

}  // namespace allo::nn
