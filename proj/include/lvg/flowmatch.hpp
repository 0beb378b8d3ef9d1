#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lvg/conditioning.hpp"
#include "lvg/diffusion.hpp"
#include "lvg/errors.hpp"
#include "lvg/tensor.hpp"

namespace lvg {

// Point on the straight-line conditional path: x_t = t x1 + (1-t) x0 + sigma eps.
inline Tensor2<double> sample_path_point(const Tensor2<double>& x0, const Tensor2<double>& x1,
                                         double t, double sigma, const Tensor2<double>& eps) {
  if (!x0.same_shape(x1) || !x0.same_shape(eps))
    throw ShapeError("sample_path_point: shape mismatch");
  if (t < 0.0 || t > 1.0) throw ConfigError("sample_path_point: t out of [0,1]");
  Tensor2<double> out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = t * x1.data[i] + (1.0 - t) * x0.data[i] + sigma * eps.data[i];
  return out;
}

// Conditional target field for the straight-line path; constant in t.
inline Tensor2<double> cfm_target(const Tensor2<double>& x0, const Tensor2<double>& x1) {
  if (!x0.same_shape(x1)) throw ShapeError("cfm_target: shape mismatch");
  Tensor2<double> u(x0.rows, x0.cols);
  for (std::size_t i = 0; i < u.size(); ++i) u.data[i] = x1.data[i] - x0.data[i];
  return u;
}

struct CfmBatchSample {
  Tensor2<double> x1_rows;  // data sample, frames as rows
  Tensor2<double> x0_rows;  // standard-normal draw
  double t = 0.5;
  Tensor2<double> eps;      // path jitter
  double sigma = 0.0;
  ConditioningBundle cond;
};

// Mean L1 distance between the predicted field and x1 - x0.
inline double cfm_train_loss(const ConditionedNet& net, const std::vector<CfmBatchSample>& batch,
                             std::vector<ConditionedGrads>* grads = nullptr) {
  std::vector<double> per_sample;
  per_sample.reserve(batch.size());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const auto& s = batch[bi];
    Tensor2<double> xt = sample_path_point(s.x0_rows, s.x1_rows, s.t, s.sigma, s.eps);
    Tensor2<double> target = cfm_target(s.x0_rows, s.x1_rows);
    Tensor2<double> pred = eval_conditioned_seq(net, xt, s.cond, s.t);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred.data[i] - target.data[i]);
    const double n = static_cast<double>(pred.size());
    per_sample.push_back(acc / n);
    if (grads) {
      Tensor2<double> up(pred.rows, pred.cols);
      const double w = inv_batch / n;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        up.data[i] = d > 0 ? w : (d < 0 ? -w : 0.0);
      }
      backward_conditioned_seq(net, xt, s.cond, s.t, up, (*grads)[bi]);
    }
  }
  const double loss = detail::sorted_mean(std::move(per_sample));
  if (!std::isfinite(loss)) throw TrainingError("cfm_train_loss: non-finite loss");
  return loss;
}

// x' = (1-r) x + r eps; the sampler's noise-mixed start.
inline Tensor2<double> noise_mix(const Tensor2<double>& x, double r, const Tensor2<double>& eps) {
  if (r < 0.0 || r > 1.0) throw ConfigError("noise_mix: r out of [0,1]");
  if (!x.same_shape(eps)) throw ShapeError("noise_mix: shape mismatch");
  Tensor2<double> out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = (1.0 - r) * x.data[i] + r * eps.data[i];
  return out;
}

// Fixed-step Euler: for l = 1..L, x += (1/L) v(x, l/L). Step sizes sum to 1.
inline SampleResult euler_integrate(const ConditionedNet& net, const Tensor2<double>& x_init,
                                    std::size_t L, const ConditioningBundle& cond,
                                    const StepObserver& observer = {}) {
  if (L < 1) throw ConfigError("euler_integrate: L must be >= 1");
  SampleResult res;
  res.x = x_init;
  const double h = 1.0 / static_cast<double>(L);
  for (std::size_t l = 1; l <= L; ++l) {
    const double t = static_cast<double>(l) / static_cast<double>(L);
    Tensor2<double> v = eval_conditioned_seq(net, res.x, cond, t);
    for (std::size_t i = 0; i < res.x.size(); ++i) res.x.data[i] += h * v.data[i];
    ++res.nfe;
    if (!all_finite(res.x))
      throw SamplingError("euler_integrate: non-finite state at step " + std::to_string(l));
    if (observer) observer(l, res.x);
  }
  return res;
}

}  // namespace lvg
