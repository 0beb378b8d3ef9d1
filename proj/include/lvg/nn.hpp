#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lvg/errors.hpp"
#include "lvg/rng.hpp"
#include "lvg/tensor.hpp"

namespace lvg {

enum class Activation { identity, leaky_relu, mish, tanh };

constexpr double kLeakySlope = 0.2;

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::mish: return "mish";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "mish") return Activation::mish;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation: " + s);
}

namespace detail {

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

template <typename T>
T activate(Activation a, T x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::leaky_relu: return x >= T(0) ? x : static_cast<T>(kLeakySlope) * x;
    case Activation::mish: {
      const double xv = static_cast<double>(x);
      return static_cast<T>(xv * std::tanh(detail::softplus(xv)));
    }
    case Activation::tanh: return static_cast<T>(std::tanh(static_cast<double>(x)));
  }
  return x;
}

// Derivative w.r.t. pre-activation.
template <typename T>
T activate_grad(Activation a, T x) {
  switch (a) {
    case Activation::identity: return T(1);
    case Activation::leaky_relu: return x >= T(0) ? T(1) : static_cast<T>(kLeakySlope);
    case Activation::mish: {
      const double xv = static_cast<double>(x);
      const double th = std::tanh(detail::softplus(xv));
      return static_cast<T>(th + xv * (1.0 - th * th) * detail::sigmoid(xv));
    }
    case Activation::tanh: {
      const double th = std::tanh(static_cast<double>(x));
      return static_cast<T>(1.0 - th * th);
    }
  }
  return T(1);
}

template <typename T = double>
struct DenseLayer {
  Tensor2<T> w;       // out_dim x in_dim
  std::vector<T> b;   // out_dim
  Activation act = Activation::identity;
};

// Sequential dense network; layer dims must chain.
template <typename T = double>
struct DenseNet {
  std::vector<DenseLayer<T>> layers;

  std::size_t input_dim() const { return layers.front().w.cols; }
  std::size_t output_dim() const { return layers.back().w.rows; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

template <typename T>
void validate_chain(const DenseNet<T>& net) {
  if (net.layers.empty()) throw ShapeError("DenseNet: no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.b.size() != l.w.rows) throw ShapeError("DenseNet: bias/weight row mismatch");
    if (i > 0 && l.w.cols != net.layers[i - 1].w.rows)
      throw ShapeError("DenseNet: layer " + std::to_string(i) + " does not chain");
  }
}

// He-style init; hidden activation applied to all but the last layer.
template <typename T = double>
DenseNet<T> make_mlp(const std::vector<std::size_t>& dims, Activation hidden, Activation out,
                     Rng& rng) {
  if (dims.size() < 2) throw ShapeError("make_mlp: need at least in/out dims");
  DenseNet<T> net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer<T> l;
    const T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(dims[i])));
    l.w = random_normal<T>(dims[i + 1], dims[i], rng, scale);
    l.b.assign(dims[i + 1], T(0));
    l.act = (i + 2 == dims.size()) ? out : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

// Per-layer pre-activations and outputs of one forward pass.
template <typename T = double>
struct ForwardTrace {
  std::vector<Tensor2<T>> pre;   // z_l = a_{l-1} W_l^T + b_l
  std::vector<Tensor2<T>> post;  // a_l = act(z_l)
};

template <typename T>
ForwardTrace<T> forward_trace(const DenseNet<T>& net, const Tensor2<T>& input) {
  if (input.cols != net.input_dim())
    throw ShapeError("forward: input dim " + std::to_string(input.cols) + " != " +
                     std::to_string(net.input_dim()));
  ForwardTrace<T> tr;
  const Tensor2<T>* cur = &input;
  for (const auto& l : net.layers) {
    Tensor2<T> z = matmul_bt(*cur, l.w);
    for (std::size_t r = 0; r < z.rows; ++r) {
      T* zr = z.row(r);
      for (std::size_t c = 0; c < z.cols; ++c) zr[c] += l.b[c];
    }
    Tensor2<T> a(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) a.data[i] = activate(l.act, z.data[i]);
    tr.pre.push_back(std::move(z));
    tr.post.push_back(std::move(a));
    cur = &tr.post.back();
  }
  return tr;
}

// Pure function of (net, input); rows are independent samples.
template <typename T>
Tensor2<T> forward(const DenseNet<T>& net, const Tensor2<T>& input) {
  return forward_trace(net, input).post.back();
}

template <typename T = double>
struct LayerGrads {
  Tensor2<T> dw;
  std::vector<T> db;
};

template <typename T = double>
struct NetGrads {
  std::vector<LayerGrads<T>> layers;
  Tensor2<T> input_grad;
};

template <typename T>
NetGrads<T> zero_grads(const DenseNet<T>& net) {
  NetGrads<T> g;
  for (const auto& l : net.layers) {
    LayerGrads<T> lg;
    lg.dw = Tensor2<T>(l.w.rows, l.w.cols);
    lg.db.assign(l.b.size(), T(0));
    g.layers.push_back(std::move(lg));
  }
  return g;
}

// Backprop from an existing trace. `tap_grads`, when non-null, injects extra
// upstream gradient into each layer's post-activation output (feature taps).
// Gradients accumulate into `g`, so one grads object can serve a whole batch.
template <typename T>
void backward_accumulate(const DenseNet<T>& net, const Tensor2<T>& input,
                         const ForwardTrace<T>& tr, const Tensor2<T>& upstream, NetGrads<T>& g,
                         const std::vector<Tensor2<T>>* tap_grads = nullptr) {
  const std::size_t last = net.layers.size() - 1;
  if (!upstream.same_shape(tr.post[last])) throw ShapeError("backward: upstream shape mismatch");
  Tensor2<T> delta = upstream;  // d loss / d post-activation of current layer
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& l = net.layers[li];
    if (tap_grads && !(*tap_grads)[li].data.empty()) {
      const auto& tg = (*tap_grads)[li];
      if (!tg.same_shape(delta)) throw ShapeError("backward: tap grad shape mismatch");
      for (std::size_t i = 0; i < delta.size(); ++i) delta.data[i] += tg.data[i];
    }
    // d loss / d pre-activation
    const Tensor2<T>& z = tr.pre[li];
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta.data[i] *= activate_grad(l.act, z.data[i]);
    const Tensor2<T>& layer_in = (li == 0) ? input : tr.post[li - 1];
    add_atb(delta, layer_in, g.layers[li].dw);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const T* dr = delta.row(r);
      for (std::size_t c = 0; c < delta.cols; ++c) g.layers[li].db[c] += dr[c];
    }
    if (li > 0 || g.input_grad.size() > 0) {
      Tensor2<T> down = matmul(delta, l.w);
      if (li == 0) {
        for (std::size_t i = 0; i < down.size(); ++i) g.input_grad.data[i] += down.data[i];
      } else {
        delta = std::move(down);
      }
    }
  }
}

// Exact reverse-mode gradients of a scalar loss whose gradient w.r.t. the
// network output is `upstream`. Recomputes the forward pass internally.
template <typename T>
NetGrads<T> backward(const DenseNet<T>& net, const Tensor2<T>& input, const Tensor2<T>& upstream) {
  ForwardTrace<T> tr = forward_trace(net, input);
  NetGrads<T> g = zero_grads(net);
  g.input_grad = Tensor2<T>(input.rows, input.cols);
  backward_accumulate(net, input, tr, upstream, g);
  return g;
}

// --- parameter plumbing -----------------------------------------------------

template <typename T, typename Fn>
void for_each_param(DenseNet<T>& net, Fn&& fn) {
  for (auto& l : net.layers) {
    for (auto& v : l.w.data) fn(v);
    for (auto& v : l.b) fn(v);
  }
}

template <typename T, typename Fn>
void for_each_param(const DenseNet<T>& net, Fn&& fn) {
  for (const auto& l : net.layers) {
    for (const auto& v : l.w.data) fn(v);
    for (const auto& v : l.b) fn(v);
  }
}

template <typename T>
std::vector<T> flatten_params(const DenseNet<T>& net) {
  std::vector<T> out;
  out.reserve(net.param_count());
  for_each_param(net, [&](const T& v) { out.push_back(v); });
  return out;
}

template <typename T>
void set_params(DenseNet<T>& net, const std::vector<T>& flat) {
  if (flat.size() != net.param_count()) throw ShapeError("set_params: count mismatch");
  std::size_t i = 0;
  for_each_param(net, [&](T& v) { v = flat[i++]; });
}

template <typename T>
std::vector<T> flatten_grads(const NetGrads<T>& g) {
  std::vector<T> out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.dw.data.begin(), l.dw.data.end());
    out.insert(out.end(), l.db.begin(), l.db.end());
  }
  return out;
}

// --- Adam -------------------------------------------------------------------

template <typename T = double>
struct AdamState {
  std::vector<T> m;  // first moments, flattened parameter order
  std::vector<T> v;  // second moments
  std::int64_t step = 0;
  T lr = static_cast<T>(2e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
};

template <typename T>
AdamState<T> make_adam(std::size_t param_count, T lr) {
  AdamState<T> s;
  s.m.assign(param_count, T(0));
  s.v.assign(param_count, T(0));
  s.lr = lr;
  return s;
}

// One bias-corrected Adam update over a flat parameter view.
template <typename T>
void adam_step_flat(T* params, const T* grads, std::size_t n, AdamState<T>& st) {
  if (st.m.size() != n || st.v.size() != n) throw ShapeError("adam: state size mismatch");
  st.step += 1;
  const double b1 = static_cast<double>(st.beta1);
  const double b2 = static_cast<double>(st.beta2);
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = static_cast<double>(grads[i]);
    const double mi = b1 * static_cast<double>(st.m[i]) + (1.0 - b1) * gi;
    const double vi = b2 * static_cast<double>(st.v[i]) + (1.0 - b2) * gi * gi;
    st.m[i] = static_cast<T>(mi);
    st.v[i] = static_cast<T>(vi);
    const double mhat = mi / corr1;
    const double vhat = vi / corr2;
    params[i] -= static_cast<T>(static_cast<double>(st.lr) * mhat /
                                (std::sqrt(vhat) + static_cast<double>(st.eps)));
  }
}

template <typename T>
void adam_step(DenseNet<T>& net, const NetGrads<T>& grads, AdamState<T>& st) {
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    for (const auto& gv : grads.layers[li].dw.data)
      if (!std::isfinite(static_cast<double>(gv)))
        throw TrainingError("adam: non-finite gradient in layer " + std::to_string(li));
    for (const auto& gv : grads.layers[li].db)
      if (!std::isfinite(static_cast<double>(gv)))
        throw TrainingError("adam: non-finite gradient in layer " + std::to_string(li));
  }
  std::vector<T> p = flatten_params(net);
  std::vector<T> g = flatten_grads(grads);
  adam_step_flat(p.data(), g.data(), p.size(), st);
  set_params(net, p);
}

template <typename T>
double grad_sq_norm(const NetGrads<T>& g) {
  double acc = 0;
  for (const auto& l : g.layers) {
    for (T v : l.dw.data) acc += static_cast<double>(v) * static_cast<double>(v);
    for (T v : l.db) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return acc;
}

template <typename T>
void scale_grads(NetGrads<T>& g, double s) {
  for (auto& l : g.layers) {
    for (auto& v : l.dw.data) v = static_cast<T>(static_cast<double>(v) * s);
    for (auto& v : l.db) v = static_cast<T>(static_cast<double>(v) * s);
  }
}

}  // namespace lvg
