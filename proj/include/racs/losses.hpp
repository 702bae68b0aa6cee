#pragma once
// Training losses. Both reduce by the mean over batch and elements so the
// learning rate keeps its meaning across block sizes.

#include <cmath>
#include <vector>

#include "racs/errors.hpp"
#include "racs/tensor.hpp"

namespace racs::nn {

template <class T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // w.r.t. the prediction / logits
};

template <class T>
LossResult<T> loss_euclidean(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!pred.same_shape(target))
    throw DimensionError("loss shapes differ: " + shape_str(pred.shape) + " vs " +
                         shape_str(target.shape));
  LossResult<T> res;
  res.grad = Tensor<T>::zeros(pred.shape);
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
    res.grad.data[i] = static_cast<T>(2.0 * d * inv);
  }
  res.value = acc * inv;
  return res;
}

// Softmax + negative log-likelihood, mean over the batch.
// logits: {batch, classes}; labels: one class index per batch item.
template <class T>
LossResult<T> loss_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw DimensionError("cross-entropy expects {batch, classes} logits, got " +
                         shape_str(logits.shape));
  const int batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  LossResult<T> res;
  res.grad = Tensor<T>::zeros(logits.shape);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double acc = 0.0;
  for (int s = 0; s < batch; ++s) {
    const int label = labels[static_cast<std::size_t>(s)];
    if (label < 0 || label >= classes)
      throw DimensionError("label " + std::to_string(label) + " outside [0, " +
                           std::to_string(classes) + ")");
    const T* row = logits.data.data() + static_cast<std::size_t>(s) * classes;
    double mx = static_cast<double>(row[0]);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    const double log_z = std::log(z) + mx;
    acc += log_z - static_cast<double>(row[label]);
    T* g = res.grad.data.data() + static_cast<std::size_t>(s) * classes;
    for (int c = 0; c < classes; ++c) {
      const double p = std::exp(static_cast<double>(row[c]) - log_z);
      g[c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) * inv_b);
    }
  }
  res.value = acc * inv_b;
  return res;
}

// Softmax probabilities for one logit row; used by inference and the
// confidence-style adaptation signal.
template <class T>
std::vector<double> softmax_row(const T* logits, int classes) {
  std::vector<double> p(static_cast<std::size_t>(classes));
  double mx = static_cast<double>(logits[0]);
  for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
  double z = 0.0;
  for (int c = 0; c < classes; ++c) {
    p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits[c]) - mx);
    z += p[static_cast<std::size_t>(c)];
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace racs::nn
