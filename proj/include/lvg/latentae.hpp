#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lvg/diffusion.hpp"
#include "lvg/errors.hpp"
#include "lvg/nn.hpp"
#include "lvg/rng.hpp"
#include "lvg/tensor.hpp"

namespace lvg {

// --- autoencoder --------------------------------------------------------------

// Undercomplete frame-wise autoencoder. The encoder sees a +-context stack of
// neighbor frames (clamped at utterance edges); the decoder is frame-local.
struct Autoencoder {
  DenseNet<double> enc;  // (2*context+1)*feat_dim -> bottleneck
  DenseNet<double> dec;  // bottleneck -> feat_dim
  std::size_t feat_dim = 0;
  std::size_t bottleneck = 0;
  std::size_t context = 2;

  std::size_t param_count() const { return enc.param_count() + dec.param_count(); }
};

inline Autoencoder make_autoencoder(std::size_t feat_dim, std::size_t bottleneck,
                                    std::size_t width, std::size_t context, Rng& rng) {
  if (bottleneck >= feat_dim) throw ConfigError("autoencoder: bottleneck must be < feature dim");
  Autoencoder ae;
  ae.feat_dim = feat_dim;
  ae.bottleneck = bottleneck;
  ae.context = context;
  const std::size_t in = (2 * context + 1) * feat_dim;
  ae.enc = make_mlp<double>({in, width, width, width, bottleneck}, Activation::leaky_relu,
                            Activation::identity, rng);
  ae.dec = make_mlp<double>({bottleneck, width, width, width, feat_dim}, Activation::leaky_relu,
                            Activation::identity, rng);
  return ae;
}

// N x (2c+1)D stack of clamped neighbor frames; x is D x N.
inline Tensor2<double> stack_context(const Tensor2<double>& x, std::size_t context) {
  const std::size_t d = x.rows, n = x.cols;
  const std::size_t span = 2 * context + 1;
  Tensor2<double> out(n, span * d);
  for (std::size_t f = 0; f < n; ++f) {
    double* r = out.row(f);
    for (std::size_t s = 0; s < span; ++s) {
      const std::ptrdiff_t raw = static_cast<std::ptrdiff_t>(f) + static_cast<std::ptrdiff_t>(s) -
                                 static_cast<std::ptrdiff_t>(context);
      const std::size_t src = static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(n) - 1));
      for (std::size_t i = 0; i < d; ++i) r[s * d + i] = x(i, src);
    }
  }
  return out;
}

// Scatter a gradient w.r.t. the stacked input back onto the D x N sequence.
inline void unstack_context_grad(const Tensor2<double>& dstack, std::size_t context,
                                 Tensor2<double>& dx) {
  const std::size_t d = dx.rows, n = dx.cols;
  const std::size_t span = 2 * context + 1;
  for (std::size_t f = 0; f < n; ++f) {
    const double* r = dstack.row(f);
    for (std::size_t s = 0; s < span; ++s) {
      const std::ptrdiff_t raw = static_cast<std::ptrdiff_t>(f) + static_cast<std::ptrdiff_t>(s) -
                                 static_cast<std::ptrdiff_t>(context);
      const std::size_t src = static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(n) - 1));
      for (std::size_t i = 0; i < d; ++i) dx(i, src) += r[s * d + i];
    }
  }
}

// FeatureSeq (D x N) -> LatentSeq (Dz x N); deterministic, frame count kept.
inline Tensor2<double> encode(const Autoencoder& ae, const Tensor2<double>& x) {
  if (x.rows != ae.feat_dim) throw ShapeError("encode: feature dim mismatch");
  return forward(ae.enc, stack_context(x, ae.context)).transposed();
}

inline Tensor2<double> decode(const Autoencoder& ae, const Tensor2<double>& z) {
  if (z.rows != ae.bottleneck) throw ShapeError("decode: bottleneck dim mismatch");
  return forward(ae.dec, z.transposed()).transposed();
}

// Mean L1 round-trip error.
inline double recon_loss(const Autoencoder& ae, const Tensor2<double>& x) {
  Tensor2<double> xhat = decode(ae, encode(ae, x));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(xhat.data[i] - x.data[i]);
  return acc / static_cast<double>(x.size());
}

// 0.5 (sigma^2 + mu^2 - 1 - log sigma^2) with mu, sigma^2 taken over all
// elements of z. Zero iff the elements are standard-normal-moment matched.
inline double kl_loss(const Tensor2<double>& z) {
  const std::size_t m = z.size();
  if (m < 2) throw TrainingError("kl_loss: degenerate latent (needs >= 2 elements)");
  double sum = 0.0, sum2 = 0.0;
  for (double v : z.data) {
    sum += v;
    sum2 += v * v;
  }
  const double mu = sum / static_cast<double>(m);
  const double var = sum2 / static_cast<double>(m) - mu * mu;
  if (!(var > 1e-30)) throw TrainingError("kl_loss: zero-variance latent");
  return 0.5 * (var + mu * mu - 1.0 - std::log(var));
}

// d kl_loss / d z, accumulated into dz with weight.
inline void kl_loss_grad(const Tensor2<double>& z, double weight, Tensor2<double>& dz) {
  const auto m = static_cast<double>(z.size());
  double sum = 0.0, sum2 = 0.0;
  for (double v : z.data) {
    sum += v;
    sum2 += v * v;
  }
  const double mu = sum / m;
  const double var = sum2 / m - mu * mu;
  const double a = (1.0 - 1.0 / var) / m;
  for (std::size_t i = 0; i < z.size(); ++i)
    dz.data[i] += weight * (a * (z.data[i] - mu) + mu / m);
}

// Per-dimension variant of the moment matching: moments taken per bottleneck
// channel (columns of the frames-as-rows latent), averaged over channels.
inline double kl_loss_per_dim(const Tensor2<double>& z_rows) {
  if (z_rows.rows < 2) throw TrainingError("kl_loss: degenerate latent (needs >= 2 frames)");
  double acc = 0.0;
  const auto n = static_cast<double>(z_rows.rows);
  for (std::size_t d = 0; d < z_rows.cols; ++d) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t r = 0; r < z_rows.rows; ++r) {
      const double v = z_rows(r, d);
      sum += v;
      sum2 += v * v;
    }
    const double mu = sum / n;
    const double var = sum2 / n - mu * mu;
    if (!(var > 1e-30)) throw TrainingError("kl_loss: zero-variance latent channel");
    acc += 0.5 * (var + mu * mu - 1.0 - std::log(var));
  }
  return acc / static_cast<double>(z_rows.cols);
}

inline void kl_loss_per_dim_grad(const Tensor2<double>& z_rows, double weight,
                                 Tensor2<double>& dz) {
  const auto n = static_cast<double>(z_rows.rows);
  const double inv_dims = 1.0 / static_cast<double>(z_rows.cols);
  for (std::size_t d = 0; d < z_rows.cols; ++d) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t r = 0; r < z_rows.rows; ++r) {
      const double v = z_rows(r, d);
      sum += v;
      sum2 += v * v;
    }
    const double mu = sum / n;
    const double var = sum2 / n - mu * mu;
    const double a = (1.0 - 1.0 / var) / n;
    for (std::size_t r = 0; r < z_rows.rows; ++r)
      dz(r, d) += weight * inv_dims * (a * (z_rows(r, d) - mu) + mu / n);
  }
}

// --- render transform ---------------------------------------------------------

// Fixed differentiable stand-in for the downstream synthesis path: every frame
// is projected onto a cosine basis, overlap-added with a Hann window at 50%
// hop, and squashed by a gentle tanh. The paired analysis transform inverts
// the blend in the linear regime, so the render-domain L1 term mostly agrees
// with the plain reconstruction loss.
struct RenderTransform {
  std::size_t feat_dim = 0;
  std::size_t hop = 0;     // samples per frame
  std::size_t window = 0;  // 2 * hop
  double tanh_scale = 0.25;
  Tensor2<double> basis;      // window x feat_dim, orthonormal columns
  std::vector<double> win;    // periodic Hann
  Tensor2<double> inv_blend;  // feat_dim x hop, undoes the windowed blend
};

inline RenderTransform make_render(std::size_t feat_dim) {
  RenderTransform r;
  r.feat_dim = feat_dim;
  r.hop = feat_dim;
  r.window = 2 * feat_dim;
  // Each half of the window carries the same orthogonal cosine projection, so
  // the Hann crossfade of adjacent frames blends into exactly that projection
  // and the analysis inverse stays perfectly conditioned.
  Tensor2<double> proj(feat_dim, feat_dim);
  const double norm = std::sqrt(2.0 / static_cast<double>(feat_dim));
  for (std::size_t j = 0; j < feat_dim; ++j)
    for (std::size_t d = 0; d < feat_dim; ++d)
      proj(j, d) = norm * std::cos(M_PI * (static_cast<double>(j) + 0.5) *
                                   (static_cast<double>(d) + 0.5) / static_cast<double>(feat_dim));
  r.basis = Tensor2<double>(r.window, feat_dim);
  const double half = 1.0 / std::sqrt(2.0);
  for (std::size_t j = 0; j < feat_dim; ++j)
    for (std::size_t d = 0; d < feat_dim; ++d) {
      r.basis(j, d) = half * proj(j, d);
      r.basis(j + r.hop, d) = half * proj(j, d);
    }
  r.win.resize(r.window);
  for (std::size_t j = 0; j < r.window; ++j)
    r.win[j] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(j) / static_cast<double>(r.window)));
  Tensor2<double> blend(r.hop, feat_dim);
  for (std::size_t j = 0; j < r.hop; ++j)
    for (std::size_t d = 0; d < feat_dim; ++d)
      blend(j, d) = r.win[j] * r.basis(j, d) + r.win[j + r.hop] * r.basis(j + r.hop, d);
  r.inv_blend = invert_square(blend);
  return r;
}

using RenderSeq = std::vector<double>;

inline std::size_t render_length(const RenderTransform& r, std::size_t frames) {
  return r.hop * (frames + 1);
}

struct RenderTrace {
  RenderSeq raw;  // pre-tanh overlap-add
  RenderSeq y;    // tanh(scale * raw)
};

inline RenderTrace render_trace(const RenderTransform& r, const Tensor2<double>& x) {
  if (x.rows != r.feat_dim) throw ShapeError("render: feature dim mismatch");
  RenderTrace tr;
  tr.raw.assign(render_length(r, x.cols), 0.0);
  std::vector<double> proj(r.window);
  for (std::size_t n = 0; n < x.cols; ++n) {
    for (std::size_t j = 0; j < r.window; ++j) {
      double acc = 0.0;
      const double* bj = r.basis.row(j);
      for (std::size_t d = 0; d < r.feat_dim; ++d) acc += bj[d] * x(d, n);
      proj[j] = acc;
    }
    double* dst = tr.raw.data() + n * r.hop;
    for (std::size_t j = 0; j < r.window; ++j) dst[j] += r.win[j] * proj[j];
  }
  tr.y.resize(tr.raw.size());
  for (std::size_t i = 0; i < tr.raw.size(); ++i) tr.y[i] = std::tanh(r.tanh_scale * tr.raw[i]);
  return tr;
}

inline RenderSeq render(const RenderTransform& r, const Tensor2<double>& x) {
  return render_trace(r, x).y;
}

// dx += d loss / dx given d loss / dy and the forward trace.
inline void render_backward(const RenderTransform& r, const Tensor2<double>& x,
                            const RenderTrace& tr, const RenderSeq& dy, Tensor2<double>& dx) {
  std::vector<double> draw(tr.raw.size());
  for (std::size_t i = 0; i < draw.size(); ++i) {
    const double th = tr.y[i];
    draw[i] = dy[i] * r.tanh_scale * (1.0 - th * th);
  }
  std::vector<double> dproj(r.window);
  for (std::size_t n = 0; n < x.cols; ++n) {
    const double* src = draw.data() + n * r.hop;
    for (std::size_t j = 0; j < r.window; ++j) dproj[j] = r.win[j] * src[j];
    for (std::size_t d = 0; d < r.feat_dim; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r.window; ++j) acc += r.basis(j, d) * dproj[j];
      dx(d, n) += acc;
    }
  }
}

// Fixed linear analysis paired with render; maps a rendered signal back to a
// D x N feature estimate.
inline Tensor2<double> render_analysis(const RenderTransform& r, const RenderSeq& y,
                                       std::size_t frames) {
  if (y.size() != render_length(r, frames)) throw ShapeError("analysis: signal length mismatch");
  Tensor2<double> out(r.feat_dim, frames);
  const double s = 1.0 / r.tanh_scale;
  for (std::size_t n = 0; n < frames; ++n) {
    const double* block = y.data() + n * r.hop;
    for (std::size_t d = 0; d < r.feat_dim; ++d) {
      double acc = 0.0;
      const double* gr = r.inv_blend.row(d);
      for (std::size_t j = 0; j < r.hop; ++j) acc += gr[j] * block[j];
      out(d, n) = s * acc;
    }
  }
  return out;
}

inline void render_analysis_backward(const RenderTransform& r, const Tensor2<double>& dout,
                                     RenderSeq& dy) {
  const double s = 1.0 / r.tanh_scale;
  for (std::size_t n = 0; n < dout.cols; ++n) {
    double* block = dy.data() + n * r.hop;
    for (std::size_t d = 0; d < r.feat_dim; ++d) {
      const double g = s * dout(d, n);
      const double* gr = r.inv_blend.row(d);
      for (std::size_t j = 0; j < r.hop; ++j) block[j] += gr[j] * g;
    }
  }
}

// --- discriminator --------------------------------------------------------------

// Dense per-window discriminator over the render domain; every layer output is
// a feature tap.
struct Discriminator {
  DenseNet<double> net;
  std::size_t window = 0;
  std::size_t hop = 0;

  std::size_t layer_count() const { return net.layers.size(); }
};

inline Discriminator make_discriminator(const RenderTransform& r, std::size_t width, Rng& rng) {
  Discriminator d;
  d.window = r.window;
  d.hop = r.hop;
  d.net = make_mlp<double>({d.window, width, width, width, 1}, Activation::leaky_relu,
                           Activation::identity, rng);
  return d;
}

inline Tensor2<double> disc_windows(const Discriminator& d, const RenderSeq& y) {
  if (y.size() < d.window) throw ShapeError("discriminator: signal shorter than one window");
  const std::size_t count = (y.size() - d.window) / d.hop + 1;
  Tensor2<double> out(count, d.window);
  for (std::size_t i = 0; i < count; ++i)
    std::copy(y.begin() + static_cast<std::ptrdiff_t>(i * d.hop),
              y.begin() + static_cast<std::ptrdiff_t>(i * d.hop + d.window), out.row(i));
  return out;
}

inline void scatter_window_grads(const Discriminator& d, const Tensor2<double>& dwin,
                                 RenderSeq& dy) {
  for (std::size_t i = 0; i < dwin.rows; ++i) {
    const double* r = dwin.row(i);
    double* dst = dy.data() + i * d.hop;
    for (std::size_t j = 0; j < d.window; ++j) dst[j] += r[j];
  }
}

struct LsganLosses {
  double adv_gen = 0.0;   // E[(d(fake) - 1)^2]
  double adv_disc = 0.0;  // E[(d(real) - 1)^2] + E[d(fake)^2]
};

inline LsganLosses lsgan_losses(const Discriminator& d, const RenderSeq& real,
                                const RenderSeq& fake) {
  if (real.size() != fake.size()) throw ShapeError("lsgan: render length mismatch");
  Tensor2<double> s_real = forward(d.net, disc_windows(d, real));
  Tensor2<double> s_fake = forward(d.net, disc_windows(d, fake));
  LsganLosses out;
  for (double v : s_fake.data) {
    out.adv_gen += (v - 1.0) * (v - 1.0);
    out.adv_disc += v * v;
  }
  for (double v : s_real.data) out.adv_disc += (v - 1.0) * (v - 1.0);
  const auto n = static_cast<double>(s_fake.size());
  out.adv_gen /= n;
  out.adv_disc /= n;
  return out;
}

// Sum over layers of (1/N_i) * L1 distance between real and fake taps,
// averaged over windows.
inline double feature_matching_loss(const Discriminator& d, const RenderSeq& real,
                                    const RenderSeq& fake) {
  if (real.size() != fake.size()) throw ShapeError("feature_matching: render length mismatch");
  ForwardTrace<double> tr_r = forward_trace(d.net, disc_windows(d, real));
  ForwardTrace<double> tr_f = forward_trace(d.net, disc_windows(d, fake));
  double acc = 0.0;
  const std::size_t windows = tr_r.post[0].rows;
  for (std::size_t li = 0; li < d.net.layers.size(); ++li) {
    const auto& a = tr_f.post[li];
    const auto& b = tr_r.post[li];
    double layer = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) layer += std::abs(a.data[i] - b.data[i]);
    acc += layer / static_cast<double>(a.cols);
  }
  return acc / static_cast<double>(windows);
}

// --- training step ------------------------------------------------------------

enum class AeObjective { regular, adversarial };

inline AeObjective ae_objective_from_name(const std::string& s) {
  if (s == "regular") return AeObjective::regular;
  if (s == "adversarial") return AeObjective::adversarial;
  throw ConfigError("unknown ae objective: " + s);
}

struct AeLossBreakdown {
  double rec = 0.0;
  double mel = 0.0;
  double kl = 0.0;
  double adv_gen = 0.0;
  double feat = 0.0;
  double disc = 0.0;
  double total_ae = 0.0;
};

struct AeGrads {
  NetGrads<double> enc;
  NetGrads<double> dec;
};

struct AeTrainParams {
  double lambda = 45.0;
  AeObjective mode = AeObjective::adversarial;
  double grad_clip = 10.0;
  bool kl_per_dimension = false;
};

namespace detail {

inline void check_component(double v, const char* name) {
  if (!std::isfinite(v)) throw TrainingError(std::string("ae training: non-finite ") + name);
}

}  // namespace detail

// Generator-side objective and gradients for one crop (x is D x F).
// Returns the component values; gradients accumulate into `g` scaled by
// `weight` (1/batch for training, 1 for gradient checks).
inline AeLossBreakdown ae_objective(const Autoencoder& ae, const Discriminator& disc,
                                    const RenderTransform& rt, const Tensor2<double>& x,
                                    const AeTrainParams& prm, double weight, AeGrads* g) {
  const double lambda = prm.lambda;
  const AeObjective mode = prm.mode;
  AeLossBreakdown out;
  const std::size_t frames = x.cols;
  Tensor2<double> stacked = stack_context(x, ae.context);
  ForwardTrace<double> enc_tr = forward_trace(ae.enc, stacked);
  const Tensor2<double>& z_rows = enc_tr.post.back();
  ForwardTrace<double> dec_tr = forward_trace(ae.dec, z_rows);
  const Tensor2<double>& xhat_rows = dec_tr.post.back();

  Tensor2<double> dxhat_rows(xhat_rows.rows, xhat_rows.cols);

  // J_rec: mean |xhat - x|
  {
    double acc = 0.0;
    const double w = weight * lambda / static_cast<double>(x.size());
    for (std::size_t n = 0; n < frames; ++n)
      for (std::size_t d = 0; d < x.rows; ++d) {
        const double diff = xhat_rows(n, d) - x(d, n);
        acc += std::abs(diff);
        if (g) dxhat_rows(n, d) += diff > 0 ? w : (diff < 0 ? -w : 0.0);
      }
    out.rec = acc / static_cast<double>(x.size());
    detail::check_component(out.rec, "rec");
  }

  // J_KL on the bottleneck elements
  out.kl = prm.kl_per_dimension ? kl_loss_per_dim(z_rows) : kl_loss(z_rows);
  detail::check_component(out.kl, "kl");

  Tensor2<double> dz_rows(z_rows.rows, z_rows.cols);
  if (g) {
    if (prm.kl_per_dimension)
      kl_loss_per_dim_grad(z_rows, weight * lambda, dz_rows);
    else
      kl_loss_grad(z_rows, weight * lambda, dz_rows);
  }

  if (mode == AeObjective::adversarial) {
    Tensor2<double> xhat = xhat_rows.transposed();
    Tensor2<double> dxhat_cols(xhat.rows, xhat.cols);
    RenderTrace fake_tr = render_trace(rt, xhat);
    RenderSeq real_y = render(rt, x);
    RenderSeq dy(fake_tr.y.size(), 0.0);

    // J_mel analog: L1 between the analysis of the fake render and x.
    {
      Tensor2<double> mel = render_analysis(rt, fake_tr.y, frames);
      Tensor2<double> dmel(mel.rows, mel.cols);
      double acc = 0.0;
      const double w = weight * lambda / static_cast<double>(x.size());
      for (std::size_t i = 0; i < mel.size(); ++i) {
        const double diff = mel.data[i] - x.data[i];
        acc += std::abs(diff);
        if (g) dmel.data[i] = diff > 0 ? w : (diff < 0 ? -w : 0.0);
      }
      out.mel = acc / static_cast<double>(x.size());
      detail::check_component(out.mel, "mel");
      if (g) render_analysis_backward(rt, dmel, dy);
    }

    // Adversarial + feature-matching terms through the frozen discriminator.
    Tensor2<double> win_f = disc_windows(disc, fake_tr.y);
    Tensor2<double> win_r = disc_windows(disc, real_y);
    ForwardTrace<double> tr_f = forward_trace(disc.net, win_f);
    ForwardTrace<double> tr_r = forward_trace(disc.net, win_r);
    const Tensor2<double>& score_f = tr_f.post.back();
    const std::size_t windows = score_f.rows;

    Tensor2<double> dscore(score_f.rows, score_f.cols);
    {
      double acc = 0.0;
      const double w = weight / static_cast<double>(score_f.size());
      for (std::size_t i = 0; i < score_f.size(); ++i) {
        const double v = score_f.data[i];
        acc += (v - 1.0) * (v - 1.0);
        if (g) dscore.data[i] = 2.0 * (v - 1.0) * w;
      }
      out.adv_gen = acc / static_cast<double>(score_f.size());
      detail::check_component(out.adv_gen, "adv_gen");
    }

    std::vector<Tensor2<double>> tap_grads(disc.net.layers.size());
    {
      double acc = 0.0;
      for (std::size_t li = 0; li < disc.net.layers.size(); ++li) {
        const auto& a = tr_f.post[li];
        const auto& b = tr_r.post[li];
        const double wl = weight / (static_cast<double>(a.cols) * static_cast<double>(windows));
        double layer = 0.0;
        if (g) tap_grads[li] = Tensor2<double>(a.rows, a.cols);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double diff = a.data[i] - b.data[i];
          layer += std::abs(diff);
          if (g) tap_grads[li].data[i] = diff > 0 ? wl : (diff < 0 ? -wl : 0.0);
        }
        acc += layer / static_cast<double>(a.cols);
      }
      out.feat = acc / static_cast<double>(windows);
      detail::check_component(out.feat, "feat");
    }

    if (g) {
      // The last tap coincides with the score output; merge its gradient and
      // backprop through the frozen discriminator for input grads only.
      auto& last = tap_grads.back();
      for (std::size_t i = 0; i < dscore.size(); ++i) last.data[i] += dscore.data[i];
      Tensor2<double> zero_up(score_f.rows, score_f.cols);
      NetGrads<double> disc_g = zero_grads(disc.net);
      disc_g.input_grad = Tensor2<double>(win_f.rows, win_f.cols);
      backward_accumulate(disc.net, win_f, tr_f, zero_up, disc_g, &tap_grads);
      scatter_window_grads(disc, disc_g.input_grad, dy);
      render_backward(rt, xhat, fake_tr, dy, dxhat_cols);
      for (std::size_t n = 0; n < frames; ++n)
        for (std::size_t d = 0; d < x.rows; ++d) dxhat_rows(n, d) += dxhat_cols(d, n);
    }
  }

  out.total_ae = lambda * (out.rec + out.mel + out.kl) + out.adv_gen + out.feat;

  if (g) {
    NetGrads<double> dec_local = zero_grads(ae.dec);
    dec_local.input_grad = Tensor2<double>(z_rows.rows, z_rows.cols);
    backward_accumulate(ae.dec, z_rows, dec_tr, dxhat_rows, dec_local);
    for (std::size_t li = 0; li < dec_local.layers.size(); ++li) {
      auto& dst = g->dec.layers[li];
      const auto& src = dec_local.layers[li];
      for (std::size_t i = 0; i < src.dw.size(); ++i) dst.dw.data[i] += src.dw.data[i];
      for (std::size_t i = 0; i < src.db.size(); ++i) dst.db[i] += src.db[i];
    }
    for (std::size_t i = 0; i < dz_rows.size(); ++i)
      dz_rows.data[i] += dec_local.input_grad.data[i];
    backward_accumulate(ae.enc, stacked, enc_tr, dz_rows, g->enc);
  }
  return out;
}

// Discriminator objective for one crop; the autoencoder output is a constant
// here, so no gradient reaches the generator.
inline double disc_objective(const Autoencoder& ae, const Discriminator& disc,
                             const RenderTransform& rt, const Tensor2<double>& x, double weight,
                             NetGrads<double>* g) {
  Tensor2<double> xhat = decode(ae, encode(ae, x));
  RenderSeq y_real = render(rt, x);
  RenderSeq y_fake = render(rt, xhat);
  Tensor2<double> win_r = disc_windows(disc, y_real);
  Tensor2<double> win_f = disc_windows(disc, y_fake);
  ForwardTrace<double> tr_r = forward_trace(disc.net, win_r);
  ForwardTrace<double> tr_f = forward_trace(disc.net, win_f);
  const Tensor2<double>& s_r = tr_r.post.back();
  const Tensor2<double>& s_f = tr_f.post.back();
  const double n = static_cast<double>(s_r.size());
  double loss = 0.0;
  Tensor2<double> up_r(s_r.rows, s_r.cols), up_f(s_f.rows, s_f.cols);
  for (std::size_t i = 0; i < s_r.size(); ++i) {
    loss += (s_r.data[i] - 1.0) * (s_r.data[i] - 1.0);
    up_r.data[i] = 2.0 * (s_r.data[i] - 1.0) * weight / n;
  }
  for (std::size_t i = 0; i < s_f.size(); ++i) {
    loss += s_f.data[i] * s_f.data[i];
    up_f.data[i] = 2.0 * s_f.data[i] * weight / n;
  }
  if (g) {
    backward_accumulate(disc.net, win_r, tr_r, up_r, *g);
    backward_accumulate(disc.net, win_f, tr_f, up_f, *g);
  }
  return loss / n;
}

namespace detail {

inline void check_net_grads(const NetGrads<double>& g, const char* which) {
  for (std::size_t li = 0; li < g.layers.size(); ++li) {
    for (double v : g.layers[li].dw.data)
      if (!std::isfinite(v))
        throw TrainingError(std::string("non-finite gradient in ") + which + " layer " +
                            std::to_string(li));
    for (double v : g.layers[li].db)
      if (!std::isfinite(v))
        throw TrainingError(std::string("non-finite gradient in ") + which + " layer " +
                            std::to_string(li));
  }
}

}  // namespace detail

// Joint Adam update over encoder + decoder with one moment state.
inline void adam_step_ae(Autoencoder& ae, const AeGrads& g, AdamState<double>& st) {
  detail::check_net_grads(g.enc, "encoder");
  detail::check_net_grads(g.dec, "decoder");
  std::vector<double> p = flatten_params(ae.enc);
  std::vector<double> pd = flatten_params(ae.dec);
  p.insert(p.end(), pd.begin(), pd.end());
  std::vector<double> gr = flatten_grads(g.enc);
  std::vector<double> gd = flatten_grads(g.dec);
  gr.insert(gr.end(), gd.begin(), gd.end());
  adam_step_flat(p.data(), gr.data(), p.size(), st);
  std::vector<double> enc_part(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(ae.enc.param_count()));
  std::vector<double> dec_part(p.begin() + static_cast<std::ptrdiff_t>(ae.enc.param_count()), p.end());
  set_params(ae.enc, enc_part);
  set_params(ae.dec, dec_part);
}

// One alternating update: discriminator step on its LSGAN objective, then a
// generator step on lambda*(rec + mel + kl) + adv_gen + feat. Regular mode
// trains only lambda*(rec + kl) and leaves the discriminator untouched.
inline AeLossBreakdown ae_train_step(Autoencoder& ae, Discriminator& disc,
                                     const RenderTransform& rt,
                                     const std::vector<Tensor2<double>>& batch,
                                     AdamState<double>& ae_opt, AdamState<double>& disc_opt,
                                     const AeTrainParams& prm) {
  if (batch.empty()) throw ConfigError("ae_train_step: empty batch");
  if (!(prm.lambda > 0.0)) throw ConfigError("ae_train_step: lambda must be positive");
  AeLossBreakdown out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  if (prm.mode == AeObjective::adversarial) {
    NetGrads<double> dg = zero_grads(disc.net);
    std::vector<double> vals;
    for (const auto& x : batch) vals.push_back(disc_objective(ae, disc, rt, x, inv_b, &dg));
    out.disc = detail::sorted_mean(std::move(vals));
    detail::check_component(out.disc, "disc");
    const double norm = std::sqrt(grad_sq_norm(dg));
    if (norm > prm.grad_clip) scale_grads(dg, prm.grad_clip / norm);
    adam_step(disc.net, dg, disc_opt);
  }

  AeGrads g{zero_grads(ae.enc), zero_grads(ae.dec)};
  std::vector<double> rec, mel, kl, adv, feat, tot;
  for (const auto& x : batch) {
    AeLossBreakdown b = ae_objective(ae, disc, rt, x, prm, inv_b, &g);
    rec.push_back(b.rec);
    mel.push_back(b.mel);
    kl.push_back(b.kl);
    adv.push_back(b.adv_gen);
    feat.push_back(b.feat);
    tot.push_back(b.total_ae);
  }
  out.rec = detail::sorted_mean(std::move(rec));
  out.mel = detail::sorted_mean(std::move(mel));
  out.kl = detail::sorted_mean(std::move(kl));
  out.adv_gen = detail::sorted_mean(std::move(adv));
  out.feat = detail::sorted_mean(std::move(feat));
  out.total_ae = detail::sorted_mean(std::move(tot));
  const double sq = grad_sq_norm(g.enc) + grad_sq_norm(g.dec);
  if (sq > prm.grad_clip * prm.grad_clip) {
    const double s = prm.grad_clip / std::sqrt(sq);
    scale_grads(g.enc, s);
    scale_grads(g.dec, s);
  }
  adam_step_ae(ae, g, ae_opt);
  return out;
}

}  // namespace lvg
