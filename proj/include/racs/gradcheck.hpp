#pragma once
// Central finite-difference verification of the analytic gradients,
// including the path through the tied pseudoinverse. 64-bit only.

#include <functional>
#include <vector>

#include "racs/losses.hpp"
#include "racs/nn.hpp"
#include "racs/sensing.hpp"

namespace racs::nn {

inline constexpr double kGradCheckStep = 1e-5;

// Returns max over checked parameters of |g_analytic - g_fd| / max(|g_fd|, 1e-6),
// with h = 1e-5. Checks every unfrozen weight/bias entry and, when a sensing
// operator is bound, every entry of its trainable prefix rows. The denominator
// floor sits above the cancellation noise of central differences in double
// (about eps * |loss| / (2h), near 1e-11 for unit-scale losses); a lower floor
// would measure that noise instead of the gradient.
inline double grad_check(
    Model<double>& model, sensing::MeasurementMatrix<double>* mm, int r,
    const Tensor<double>& input,
    const std::function<LossResult<double>(const Tensor<double>&)>& loss_fn) {
  auto loss_value = [&]() -> double {
    Tape<double> tape;
    if (mm != nullptr) {
      auto dec = linalg::pinv_prefix(mm->rows, r);
      auto view = SensingView<double>::bind(*mm, dec);
      return loss_fn(forward_pass(model, &view, input, tape)).value;
    }
    return loss_fn(forward_pass(model, nullptr, input, tape)).value;
  };

  Gradients<double> analytic;
  {
    Tape<double> tape;
    if (mm != nullptr) {
      auto dec = linalg::pinv_prefix(mm->rows, r);
      auto view = SensingView<double>::bind(*mm, dec);
      auto out = forward_pass(model, &view, input, tape);
      auto res = loss_fn(out);
      analytic = backward_pass(model, &view, tape, res.grad);
    } else {
      auto out = forward_pass(model, nullptr, input, tape);
      auto res = loss_fn(out);
      analytic = backward_pass(model, nullptr, tape, res.grad);
    }
  }

  const double h = kGradCheckStep;
  double worst = 0.0;
  auto probe = [&](double& slot, double analytic_g) {
    const double saved = slot;
    slot = saved + h;
    const double hi = loss_value();
    slot = saved - h;
    const double lo = loss_value();
    slot = saved;
    const double fd = (hi - lo) / (2.0 * h);
    const double rel = std::fabs(analytic_g - fd) / std::max(std::fabs(fd), 1e-6);
    worst = std::max(worst, rel);
  };

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (model.params.weights[li].numel() == 0) continue;
    if (!model.params.weight_frozen[li]) {
      auto& w = model.params.weights[li];
      for (std::size_t i = 0; i < w.data.size(); ++i)
        probe(w.data[i], analytic.weights[li].data[i]);
    }
    if (!model.params.bias_frozen[li]) {
      auto& b = model.params.biases[li];
      for (std::size_t i = 0; i < b.data.size(); ++i)
        probe(b.data[i], analytic.biases[li].data[i]);
    }
  }
  if (mm != nullptr && analytic.phi_rows.numel() > 0) {
    for (int row = 0; row < r; ++row) {
      if (!mm->trainable_rows[static_cast<std::size_t>(row)]) continue;
      for (int k = 0; k < mm->n; ++k) {
        const std::size_t idx = static_cast<std::size_t>(row) * mm->n + k;
        probe(mm->rows.data[idx], analytic.phi_rows.data[idx]);
      }
    }
  }
  return worst;
}

inline double grad_check_euclidean(Model<double>& model, sensing::MeasurementMatrix<double>* mm,
                                   int r, const Tensor<double>& input,
                                   const Tensor<double>& target) {
  return grad_check(model, mm, r, input,
                    [&](const Tensor<double>& out) { return loss_euclidean(out, target); });
}

inline double grad_check_cross_entropy(Model<double>& model,
                                       sensing::MeasurementMatrix<double>* mm, int r,
                                       const Tensor<double>& input,
                                       const std::vector<int>& labels) {
  return grad_check(model, mm, r, input,
                    [&](const Tensor<double>& out) { return loss_cross_entropy(out, labels); });
}

}  // namespace racs::nn
