#pragma once
// Adam with bias correction over model parameters and the trainable rows of
// the sensing operator. Frozen tensors and frozen rows are skipped outright,
// so their bytes never change.

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "racs/errors.hpp"
#include "racs/nn.hpp"
#include "racs/sensing.hpp"
#include "racs/tensor.hpp"

namespace racs::nn {

template <class T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Tensor<T>> m_w, v_w, m_b, v_b;  // aligned with layers
  Tensor<T> m_phi, v_phi;                     // aligned with the trained prefix
};

template <class T>
AdamState<T> make_adam_state(const Model<T>& model,
                             std::type_identity_t<const sensing::MeasurementMatrix<T>*> mm,
                             int r, double lr) {
  AdamState<T> st;
  st.lr = lr;
  const std::size_t count = model.layers.size();
  st.m_w.resize(count);
  st.v_w.resize(count);
  st.m_b.resize(count);
  st.v_b.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (model.params.weights[i].numel() > 0) {
      st.m_w[i] = Tensor<T>::zeros(model.params.weights[i].shape);
      st.v_w[i] = Tensor<T>::zeros(model.params.weights[i].shape);
      st.m_b[i] = Tensor<T>::zeros(model.params.biases[i].shape);
      st.v_b[i] = Tensor<T>::zeros(model.params.biases[i].shape);
    }
  }
  if (mm != nullptr) {
    mm->check_prefix(r);
    st.m_phi = Tensor<T>::zeros({r, mm->n});
    st.v_phi = Tensor<T>::zeros({r, mm->n});
  }
  return st;
}

namespace detail {

template <class T>
void adam_update_span(T* p, const T* g, T* m, T* v, std::size_t count, double lr,
                      double beta1, double beta2, double epsilon, double bc1, double bc2) {
  for (std::size_t i = 0; i < count; ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + epsilon));
  }
}

}  // namespace detail

// One optimizer step. mm may be null for models without a sensing operator;
// when given, only rows flagged trainable inside the first grads.phi_rows
// rows are touched.
template <class T>
void adam_step(Model<T>& model, std::type_identity_t<sensing::MeasurementMatrix<T>*> mm,
               const Gradients<T>& grads, AdamState<T>& st) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  bool touched_params = false;

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Tensor<T>& w = model.params.weights[i];
    if (w.numel() == 0) continue;
    if (!model.params.weight_frozen[i]) {
      if (grads.weights[i].numel() == 0)
        throw ContractError("missing gradient for unfrozen tensor '" +
                            model.layers[i].name + ".weight'");
      if (!grads.weights[i].same_shape(w))
        throw ContractError("gradient shape mismatch for '" + model.layers[i].name + ".weight'");
      detail::adam_update_span(w.data.data(), grads.weights[i].data.data(),
                               st.m_w[i].data.data(), st.v_w[i].data.data(), w.data.size(),
                               st.lr, st.beta1, st.beta2, st.epsilon, bc1, bc2);
      touched_params = true;
    }
    Tensor<T>& b = model.params.biases[i];
    if (!model.params.bias_frozen[i]) {
      if (grads.biases[i].numel() == 0)
        throw ContractError("missing gradient for unfrozen tensor '" +
                            model.layers[i].name + ".bias'");
      if (!grads.biases[i].same_shape(b))
        throw ContractError("gradient shape mismatch for '" + model.layers[i].name + ".bias'");
      detail::adam_update_span(b.data.data(), grads.biases[i].data.data(),
                               st.m_b[i].data.data(), st.v_b[i].data.data(), b.data.size(),
                               st.lr, st.beta1, st.beta2, st.epsilon, bc1, bc2);
      touched_params = true;
    }
  }
  if (touched_params) model.params.bump();

  if (mm == nullptr) return;
  const int r = st.m_phi.numel() > 0 ? st.m_phi.dim(0) : 0;
  bool any_trainable = false;
  for (int i = 0; i < r; ++i)
    if (mm->trainable_rows[static_cast<std::size_t>(i)]) any_trainable = true;
  if (!any_trainable) return;
  if (grads.phi_rows.numel() == 0)
    throw ContractError("missing gradient for trainable sensing rows");
  if (grads.phi_rows.dim(0) != r || grads.phi_rows.dim(1) != mm->n)
    throw ContractError("sensing gradient shape " + shape_str(grads.phi_rows.shape) +
                        " does not match the optimizer state " + shape_str({r, mm->n}));
  bool touched_phi = false;
  for (int i = 0; i < r; ++i) {
    if (!mm->trainable_rows[static_cast<std::size_t>(i)]) continue;
    const std::size_t off = static_cast<std::size_t>(i) * mm->n;
    detail::adam_update_span(mm->rows.data.data() + off, grads.phi_rows.data.data() + off,
                             st.m_phi.data.data() + off, st.v_phi.data.data() + off,
                             static_cast<std::size_t>(mm->n), st.lr, st.beta1, st.beta2,
                             st.epsilon, bc1, bc2);
    touched_phi = true;
  }
  if (touched_phi) mm->bump();
}

}  // namespace racs::nn
