// Finite-difference gradient oracle used across the test suites. Central
// differences over the f64 loss readout; comparison is the L2-norm relative
// error between the analytic and numeric gradient of each parameter tensor.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "smartbird/tensor.hpp"

namespace gradcheck {

// Relative error between vectors: ||a-b|| / max(||a||, ||b||, floor). The
// unit floor makes the check absolute for gradients below the problem's O(1)
// scale, where f32-store rounding in the finite-difference numerator would
// otherwise dominate a pure ratio.
inline double rel_error(const std::vector<double>& a,
                        const std::vector<double>& b, double floor = 1.0) {
  double na = 0.0, nb = 0.0, nd = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    const double d = a[i] - b[i];
    nd += d * d;
  }
  return std::sqrt(nd) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Numeric gradient of loss_fn wrt param by central differences. loss_fn must
// recompute the full forward pass from current parameter values.
inline std::vector<double> numeric_grad(
    smartbird::Tensor param, const std::function<double()>& loss_fn,
    double eps = 1e-3) {
  std::vector<double> grad(static_cast<size_t>(param.numel()));
  std::span<float> w = param.values();
  for (int64_t i = 0; i < param.numel(); ++i) {
    const float saved = w[static_cast<size_t>(i)];
    w[static_cast<size_t>(i)] = static_cast<float>(saved + eps);
    const double up = loss_fn();
    w[static_cast<size_t>(i)] = static_cast<float>(saved - eps);
    const double down = loss_fn();
    w[static_cast<size_t>(i)] = saved;
    grad[static_cast<size_t>(i)] = (up - down) / (2.0 * eps);
  }
  return grad;
}

inline std::vector<double> analytic_grad(smartbird::Tensor param) {
  std::vector<double> g(static_cast<size_t>(param.numel()), 0.0);
  if (param.grad_allocated()) {
    auto gs = param.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] = gs[i];
  }
  return g;
}

// Runs forward under a fresh tape, backward, then compares every listed
// parameter's analytic gradient to central differences.
// build_loss: constructs the graph and returns the scalar loss tensor.
inline double max_param_rel_error(
    std::vector<smartbird::Tensor> params,
    const std::function<smartbird::Tensor()>& build_loss, double eps = 1e-3) {
  using namespace smartbird;
  zero_grads(std::span<Tensor>(params));
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = build_loss();
    tape.backward(loss);
  }
  auto loss_value = [&]() {
    NoGradScope ng;
    return build_loss().item64();
  };
  double worst = 0.0;
  for (Tensor& p : params) {
    const std::vector<double> an = analytic_grad(p);
    const std::vector<double> num = numeric_grad(p, loss_value, eps);
    worst = std::max(worst, rel_error(an, num));
  }
  return worst;
}

// True when the draw keeps every relu pre-activation outside the kink band,
// so a central difference of step eps cannot cross it. Draws that fail are
// re-rolled by the caller (standard gradcheck practice for piecewise-linear
// nets).
inline bool kink_free(const std::function<smartbird::Tensor()>& build_loss,
                      double guard) {
  smartbird::NoGradScope ng;
  smartbird::numeric_flags().clear();
  (void)build_loss();
  const double min_abs = smartbird::numeric_flags().min_relu_abs;
  smartbird::numeric_flags().clear();
  return min_abs > guard;
}

// Uniform values bounded away from zero, for kink-free ReLU-path checks.
inline smartbird::Tensor away_from_zero(smartbird::Shape shape, double lo,
                                        double hi, smartbird::SplitMix64& rng,
                                        bool requires_grad = true) {
  smartbird::Tensor t = smartbird::Tensor::zeros(std::move(shape),
                                                 requires_grad);
  for (float& x : t.values()) {
    const double mag = rng.uniform(lo, hi);
    x = static_cast<float>(rng.uniform01() < 0.5 ? -mag : mag);
  }
  return t;
}

}  // namespace gradcheck
