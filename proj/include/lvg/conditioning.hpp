#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lvg/errors.hpp"
#include "lvg/nn.hpp"
#include "lvg/tensor.hpp"

namespace lvg {

// Speaker embedding s plus per-frame content embedding sequence p (Dp x N).
// s is shared by every frame of one conversion.
struct ConditioningBundle {
  std::vector<double> s;
  Tensor2<double> p;

  std::size_t frames() const { return p.cols; }
};

// Learned per-speaker embeddings, trained jointly with the generator nets.
struct SpeakerTable {
  Tensor2<double> emb;  // K x Ds

  std::size_t speakers() const { return emb.rows; }
  std::size_t dim() const { return emb.cols; }
};

inline SpeakerTable make_speaker_table(std::size_t k, std::size_t ds, Rng& rng) {
  SpeakerTable t;
  t.emb = random_normal<double>(k, ds, rng, 0.1);
  return t;
}

inline std::vector<double> speaker_embed(const SpeakerTable& table, std::size_t speaker_id) {
  if (speaker_id >= table.speakers())
    throw LookupError("unknown speaker id " + std::to_string(speaker_id));
  const double* r = table.emb.row(speaker_id);
  return std::vector<double>(r, r + table.dim());
}

constexpr double kContentSmoothing = 0.05;

// Fixed smoothed one-hot per frame; mirrors a frozen content extractor.
inline Tensor2<double> content_embed(const std::vector<std::uint8_t>& codes,
                                     std::size_t alphabet) {
  Tensor2<double> p(alphabet, codes.size(), kContentSmoothing / static_cast<double>(alphabet));
  for (std::size_t n = 0; n < codes.size(); ++n) {
    if (codes[n] >= alphabet)
      throw LookupError("unknown content code " + std::to_string(int(codes[n])));
    p(codes[n], n) += 1.0 - kContentSmoothing;
  }
  return p;
}

// Sinusoidal encoding of t in [0,1], scaled onto an integer-like grid.
// At t=0 the sin half is all zeros and the cos half all ones.
inline std::vector<double> sinusoid_embed(double t, std::size_t dim) {
  if (dim % 2 != 0 || dim == 0) throw ConfigError("sinusoid dim must be even and positive");
  if (t < 0.0 || t > 1.0) throw ConfigError("sinusoid t out of [0,1]");
  std::vector<double> out(dim);
  const double pos = 1000.0 * t;
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[i] = std::sin(pos * freq);
    out[half + i] = std::cos(pos * freq);
  }
  return out;
}

// Sinusoid followed by a trainable 3-layer MLP with two Mish activations.
struct TimeEmbed {
  std::size_t sin_dim = 0;
  DenseNet<double> mlp;

  std::size_t out_dim() const { return mlp.output_dim(); }
};

inline TimeEmbed make_time_embed(std::size_t sin_dim, std::size_t hidden, std::size_t out,
                                 Rng& rng) {
  TimeEmbed te;
  te.sin_dim = sin_dim;
  te.mlp = make_mlp<double>({sin_dim, hidden, hidden, out}, Activation::mish,
                            Activation::identity, rng);
  return te;
}

inline std::vector<double> time_embed(const TimeEmbed& te, double t) {
  const std::vector<double> raw = sinusoid_embed(t, te.sin_dim);
  Tensor2<double> in(1, te.sin_dim);
  in.data = raw;
  Tensor2<double> out = forward(te.mlp, in);
  return out.data;
}

// Single-frame conditioned evaluation. Input layout: [x | s | p_frame | t_embed].
inline std::vector<double> eval_conditioned(const DenseNet<double>& net,
                                            const std::vector<double>& x_frame,
                                            const std::vector<double>& s,
                                            const std::vector<double>& p_frame,
                                            const std::vector<double>& t_embed) {
  const std::size_t dim = x_frame.size() + s.size() + p_frame.size() + t_embed.size();
  if (dim != net.input_dim())
    throw ShapeError("eval_conditioned: concatenated dim " + std::to_string(dim) + " != " +
                     std::to_string(net.input_dim()));
  Tensor2<double> in(1, dim);
  double* r = in.row(0);
  std::size_t k = 0;
  for (double v : x_frame) r[k++] = v;
  for (double v : s) r[k++] = v;
  for (double v : p_frame) r[k++] = v;
  for (double v : t_embed) r[k++] = v;
  return forward(net, in).data;
}

// Score / vector-field network: conditioned trunk plus its time-embedding MLP.
// Applied frame-wise; frames are rows of the x matrix.
struct ConditionedNet {
  DenseNet<double> trunk;
  TimeEmbed temb;
  std::size_t x_dim = 0;
  std::size_t ds = 0;
  std::size_t dp = 0;

  std::size_t param_count() const { return trunk.param_count() + temb.mlp.param_count(); }
};

inline ConditionedNet make_conditioned_net(std::size_t x_dim, std::size_t ds, std::size_t dp,
                                           std::size_t sin_dim, std::size_t temb_dim,
                                           std::size_t width, Rng& rng) {
  ConditionedNet cn;
  cn.x_dim = x_dim;
  cn.ds = ds;
  cn.dp = dp;
  cn.temb = make_time_embed(sin_dim, temb_dim, temb_dim, rng);
  cn.trunk = make_mlp<double>({x_dim + ds + dp + temb_dim, width, width, width, x_dim},
                              Activation::leaky_relu, Activation::identity, rng);
  return cn;
}

inline Tensor2<double> assemble_cond_input(const ConditionedNet& cn, const Tensor2<double>& x_rows,
                                           const ConditioningBundle& cond,
                                           const std::vector<double>& tvec) {
  if (x_rows.cols != cn.x_dim) throw ShapeError("conditioned net: x dim mismatch");
  if (cond.s.size() != cn.ds) throw ShapeError("conditioned net: speaker dim mismatch");
  if (cond.p.rows != cn.dp) throw ShapeError("conditioned net: content dim mismatch");
  if (cond.p.cols != x_rows.rows) throw ShapeError("conditioned net: frame count mismatch");
  const std::size_t dt = tvec.size();
  Tensor2<double> in(x_rows.rows, cn.x_dim + cn.ds + cn.dp + dt);
  for (std::size_t n = 0; n < x_rows.rows; ++n) {
    double* r = in.row(n);
    std::size_t k = 0;
    const double* xr = x_rows.row(n);
    for (std::size_t i = 0; i < cn.x_dim; ++i) r[k++] = xr[i];
    for (std::size_t i = 0; i < cn.ds; ++i) r[k++] = cond.s[i];
    for (std::size_t i = 0; i < cn.dp; ++i) r[k++] = cond.p(i, n);
    for (std::size_t i = 0; i < dt; ++i) r[k++] = tvec[i];
  }
  return in;
}

// x_rows: N x x_dim (frames as rows). Returns N x x_dim.
inline Tensor2<double> eval_conditioned_seq(const ConditionedNet& cn, const Tensor2<double>& x_rows,
                                            const ConditioningBundle& cond, double t) {
  const std::vector<double> tvec = time_embed(cn.temb, t);
  return forward(cn.trunk, assemble_cond_input(cn, x_rows, cond, tvec));
}

struct ConditionedGrads {
  NetGrads<double> trunk;
  NetGrads<double> temb_mlp;
  std::vector<double> ds;       // gradient w.r.t. the speaker embedding
  Tensor2<double> dx;           // gradient w.r.t. x_rows
};

inline ConditionedGrads zero_cond_grads(const ConditionedNet& cn) {
  ConditionedGrads g;
  g.trunk = zero_grads(cn.trunk);
  g.temb_mlp = zero_grads(cn.temb.mlp);
  g.ds.assign(cn.ds, 0.0);
  return g;
}

// Accumulates gradients of a scalar loss into `g` given d loss / d output.
inline void backward_conditioned_seq(const ConditionedNet& cn, const Tensor2<double>& x_rows,
                                     const ConditioningBundle& cond, double t,
                                     const Tensor2<double>& upstream, ConditionedGrads& g,
                                     bool want_dx = false) {
  const std::vector<double> raw = sinusoid_embed(t, cn.temb.sin_dim);
  Tensor2<double> sin_in(1, cn.temb.sin_dim);
  sin_in.data = raw;
  ForwardTrace<double> temb_tr = forward_trace(cn.temb.mlp, sin_in);
  const std::vector<double>& tvec = temb_tr.post.back().data;

  Tensor2<double> in = assemble_cond_input(cn, x_rows, cond, tvec);
  ForwardTrace<double> tr = forward_trace(cn.trunk, in);

  NetGrads<double> local = zero_grads(cn.trunk);
  local.input_grad = Tensor2<double>(in.rows, in.cols);
  backward_accumulate(cn.trunk, in, tr, upstream, local);

  for (std::size_t li = 0; li < local.layers.size(); ++li) {
    auto& dst = g.trunk.layers[li];
    const auto& src = local.layers[li];
    for (std::size_t i = 0; i < src.dw.size(); ++i) dst.dw.data[i] += src.dw.data[i];
    for (std::size_t i = 0; i < src.db.size(); ++i) dst.db[i] += src.db[i];
  }

  // Slice the trunk input gradient back into x / s / t-embed parts. The time
  // embedding and speaker vector are shared across frames, so their gradients
  // sum over rows.
  const std::size_t dt = cn.temb.out_dim();
  Tensor2<double> temb_up(1, dt);
  if (want_dx && g.dx.size() == 0) g.dx = Tensor2<double>(x_rows.rows, x_rows.cols);
  for (std::size_t n = 0; n < in.rows; ++n) {
    const double* gr = local.input_grad.row(n);
    if (want_dx) {
      double* dxr = g.dx.row(n);
      for (std::size_t i = 0; i < cn.x_dim; ++i) dxr[i] += gr[i];
    }
    for (std::size_t i = 0; i < cn.ds; ++i) g.ds[i] += gr[cn.x_dim + i];
    const double* gt = gr + cn.x_dim + cn.ds + cn.dp;
    for (std::size_t i = 0; i < dt; ++i) temb_up.data[i] += gt[i];
  }
  backward_accumulate(cn.temb.mlp, sin_in, temb_tr, temb_up, g.temb_mlp);
}

}  // namespace lvg
