#pragma once
// Builders for the three network heads and single-block application
// helpers. Every head starts with the measurement + tied-decode pair, so a
// b x b block in gives the head's output for whatever prefix the caller
// binds at run time.

#include <cstddef>
#include <vector>

#include "racs/errors.hpp"
#include "racs/nn.hpp"
#include "racs/rng.hpp"
#include "racs/sensing.hpp"

namespace racs::models {

inline void check_block_side(int b, int n) {
  if (b < 1 || b * b != n)
    throw DimensionError("block side " + std::to_string(b) +
                         " does not square to the operator's signal size " + std::to_string(n));
}

// Reconstruction head: pseudo-image followed by two conv units
// (11x11x64 -> 1x1x32 -> 7x7x1, all same-padded); every conv carries a ReLU
// except the last layer of the second unit. Output shape equals input shape.
template <class T>
nn::Model<T> build_reconnet(int b, const sensing::MeasurementMatrix<T>& mm, Rng& rng) {
  check_block_side(b, mm.n);
  const int n = mm.n;
  std::vector<nn::LayerSpec> layers = {
      nn::reshape({n}),
      nn::measurement(),
      nn::pinv_decode(),
      nn::reshape({1, b, b}),
      nn::conv2d(11, 11, 1, 64), nn::relu(),
      nn::conv2d(1, 1, 64, 32),  nn::relu(),
      nn::conv2d(7, 7, 32, 1),   nn::relu(),
      nn::conv2d(11, 11, 1, 64), nn::relu(),
      nn::conv2d(1, 1, 64, 32),  nn::relu(),
      nn::conv2d(7, 7, 32, 1),
      nn::reshape({b, b}),
  };
  return nn::build_model<T>(std::move(layers), rng);
}

// Autoencoder head: pseudo-image -> FC n->m with ReLU -> linear FC m->n,
// with m the operator's full row budget.
template <class T>
nn::Model<T> build_autoencoder(int b, const sensing::MeasurementMatrix<T>& mm, Rng& rng) {
  check_block_side(b, mm.n);
  const int n = mm.n, m = mm.m_max;
  std::vector<nn::LayerSpec> layers = {
      nn::reshape({n}),
      nn::measurement(),
      nn::pinv_decode(),
      nn::fc(n, m), nn::relu(),
      nn::fc(m, n),
      nn::reshape({b, b}),
  };
  return nn::build_model<T>(std::move(layers), rng);
}

inline constexpr int kClassifierHidden = 64;

// Classification head working directly from the pseudo-image: two
// conv+pool stages (8 then 16 filters of 5x5) into two FC layers ending in
// the logits. Needs the block side divisible by 4 for the two pools.
template <class T>
nn::Model<T> build_classifier(int b, const sensing::MeasurementMatrix<T>& mm, int num_classes,
                              Rng& rng) {
  check_block_side(b, mm.n);
  if (b % 4 != 0)
    throw DimensionError("classifier needs a block side divisible by 4, got " +
                         std::to_string(b));
  if (num_classes < 2) throw DimensionError("classifier needs at least 2 classes");
  const int flat = 16 * (b / 4) * (b / 4);
  std::vector<nn::LayerSpec> layers = {
      nn::reshape({mm.n}),
      nn::measurement(),
      nn::pinv_decode(),
      nn::reshape({1, b, b}),
      nn::conv2d(5, 5, 1, 8),  nn::relu(), nn::maxpool2(),
      nn::conv2d(5, 5, 8, 16), nn::relu(), nn::maxpool2(),
      nn::reshape({flat}),
      nn::fc(flat, kClassifierHidden),
      nn::fc(kClassifierHidden, num_classes),
  };
  return nn::build_model<T>(std::move(layers), rng);
}

// Trainable parameter count of the head, excluding the sensing operator.
template <class T>
std::size_t count_params(const nn::Model<T>& model) {
  std::size_t total = 0;
  for (const auto& w : model.params.weights) total += w.data.size();
  for (const auto& b : model.params.biases) total += b.data.size();
  return total;
}

// x̂ = head(psi_r · phi_r · x) for one b x b block.
template <class T>
Tensor<T> reconstruct_block(const nn::Model<T>& model, const sensing::MeasurementMatrix<T>& mm,
                            const Tensor<T>& block, int r) {
  if (block.ndim() != 2)
    throw DimensionError("reconstruct_block expects a 2-d block, got " + shape_str(block.shape));
  auto dec = sensing::prefix_decoder(mm, r);
  auto view = nn::SensingView<T>::bind(mm, dec);
  Tensor<T> batch{{1, block.dim(0), block.dim(1)}, block.data};
  nn::Tape<T> tape;
  Tensor<T> out = nn::forward_pass(model, &view, batch, tape);
  return Tensor<T>{{out.dim(1), out.dim(2)}, std::move(out.data)};
}

// Logits for one block at the given prefix.
template <class T>
std::vector<T> classify_logits(const nn::Model<T>& model, const sensing::MeasurementMatrix<T>& mm,
                               const Tensor<T>& block, int r) {
  if (block.ndim() != 2)
    throw DimensionError("classify_logits expects a 2-d block, got " + shape_str(block.shape));
  auto dec = sensing::prefix_decoder(mm, r);
  auto view = nn::SensingView<T>::bind(mm, dec);
  Tensor<T> batch{{1, block.dim(0), block.dim(1)}, block.data};
  nn::Tape<T> tape;
  Tensor<T> out = nn::forward_pass(model, &view, batch, tape);
  return out.data;
}

}  // namespace racs::models
