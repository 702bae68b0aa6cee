#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "racs/gradcheck.hpp"
#include "racs/losses.hpp"
#include "racs/models.hpp"
#include "racs/nn.hpp"
#include "racs/rng.hpp"
#include "racs/sensing.hpp"
#include "racs/tensor.hpp"

using racs::Rng;
using racs::Tensor;
namespace models = racs::models;
namespace nn = racs::nn;
namespace sensing = racs::sensing;

namespace {

template <class T>
sensing::MeasurementMatrix<T> random_operator(int n, int m_max, int k_min, uint64_t seed) {
  return sensing::gaussian_init<T>(n, m_max, k_min, seed);
}

// Selection operator: row i reads coordinate pick[i], so the prefix
// pseudoinverse is the transpose and the pseudo-image is a masked copy.
template <class T>
sensing::MeasurementMatrix<T> selection_operator(int n, const std::vector<int>& pick, int k_min) {
  auto mm = sensing::gaussian_init<T>(n, static_cast<int>(pick.size()), k_min, 1);
  mm.rows.fill(T(0));
  for (std::size_t i = 0; i < pick.size(); ++i) mm.rows.at(static_cast<int>(i), pick[i]) = T(1);
  mm.bump();
  return mm;
}

template <class T>
void zero_all_params(nn::Model<T>& model) {
  for (auto& w : model.params.weights) w.fill(T(0));
  for (auto& b : model.params.biases) b.fill(T(0));
  model.params.bump();
}

}  // namespace

TEST_CASE("autoencoder parameter count matches the closed form") {
  Rng rng(7);
  auto mm = random_operator<float>(33 * 33, 272, 44, 5);
  auto model = models::build_autoencoder(33, mm, rng);
  const std::size_t n = 33 * 33, m = 272;
  const std::size_t expected = m * n + m + n * m + n;
  CHECK(expected == 593777u);
  CHECK(models::count_params(model) == expected);
}

TEST_CASE("reconnet parameter count matches the closed form") {
  Rng rng(8);
  auto mm = random_operator<float>(16 * 16, 64, 4, 6);
  auto model = models::build_reconnet(16, mm, rng);
  const std::size_t unit = (11 * 11 * 1 * 64 + 64) + (1 * 1 * 64 * 32 + 32) + (7 * 7 * 32 * 1 + 1);
  CHECK(models::count_params(model) == 2 * unit);
  CHECK(2 * unit == 22914u);
}

TEST_CASE("classifier parameter count matches the closed form") {
  Rng rng(9);
  auto mm = random_operator<float>(16 * 16, 64, 4, 7);
  auto model = models::build_classifier(16, mm, 4, rng);
  const std::size_t flat = 16 * 4 * 4;
  const std::size_t expected = (5 * 5 * 1 * 8 + 8) + (5 * 5 * 8 * 16 + 16) +
                               (flat * 64 + 64) + (64u * 4 + 4);
  CHECK(models::count_params(model) == expected);
}

TEST_CASE("reconstruction heads preserve block shape at every prefix") {
  Rng rng(10);
  auto mm = random_operator<float>(256, 64, 4, 8);
  auto recon = models::build_reconnet(16, mm, rng);
  auto auto_enc = models::build_autoencoder(16, mm, rng);
  Tensor<float> block = Tensor<float>::zeros({16, 16});
  Rng pix(11);
  for (auto& v : block.data) v = static_cast<float>(pix.uniform());
  for (int r : {4, 17, 64}) {
    for (const auto* model : {&recon, &auto_enc}) {
      auto xhat = models::reconstruct_block(*model, mm, block, r);
      REQUIRE(xhat.ndim() == 2);
      CHECK(xhat.dim(0) == 16);
      CHECK(xhat.dim(1) == 16);
      CHECK(racs::all_finite(xhat));
    }
  }
}

TEST_CASE("classifier emits one finite logit per class") {
  Rng rng(12);
  auto mm = random_operator<float>(784, 196, 16, 9);
  CHECK(mm.m_max == static_cast<int>(std::lround(0.25 * 784)));
  auto model = models::build_classifier(28, mm, 10, rng);
  Tensor<float> block = Tensor<float>::zeros({28, 28});
  Rng pix(13);
  for (auto& v : block.data) v = static_cast<float>(pix.uniform());
  auto logits = models::classify_logits(model, mm, block, 49);
  REQUIRE(logits.size() == 10u);
  for (float v : logits) CHECK(std::isfinite(v));
}

TEST_CASE("delta-kernel reconnet reproduces the pseudo-image exactly") {
  const int b = 4, n = 16;
  auto mm = selection_operator<float>(n, {1, 6, 11, 14, 3}, 1);
  Rng rng(14);
  auto model = models::build_reconnet(b, mm, rng);
  zero_all_params(model);
  // Route channel 0 through both units with centered delta kernels.
  auto delta = [&](int layer_idx, int kh, int kw) {
    auto& w = model.params.weights[layer_idx];
    w.at(0, 0, kh / 2, kw / 2) = 1.0f;
  };
  int conv_at[6];
  int found = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].kind == nn::LayerKind::Conv2d) conv_at[found++] = static_cast<int>(i);
  REQUIRE(found == 6);
  delta(conv_at[0], 11, 11);
  delta(conv_at[1], 1, 1);
  delta(conv_at[2], 7, 7);
  delta(conv_at[3], 11, 11);
  delta(conv_at[4], 1, 1);
  delta(conv_at[5], 7, 7);
  model.params.bump();

  Tensor<float> block = Tensor<float>::zeros({b, b});
  Rng pix(15);
  for (auto& v : block.data) v = static_cast<float>(pix.uniform());

  const int r = 3;
  auto y = sensing::measure(mm, block.data.data(), r);
  auto dec = sensing::prefix_decoder(mm, r);
  Tensor<float> pseudo = Tensor<float>::zeros({n});
  racs::linalg::pinv_apply(dec, y.values.data(), pseudo.data.data());

  auto xhat = models::reconstruct_block(model, mm, block, r);
  for (int i = 0; i < n; ++i) CHECK(std::abs(xhat[i] - pseudo[i]) < 1e-6f);
  // Selection reading: measured coordinates survive, the rest vanish.
  CHECK(std::abs(xhat.at(0, 1) - block.at(0, 1)) < 1e-6f);
  CHECK(std::abs(xhat.at(1, 2) - block.at(1, 2)) < 1e-6f);
  CHECK(std::abs(xhat.at(2, 3) - block.at(2, 3)) < 1e-6f);
  CHECK(std::abs(xhat.at(0, 0)) < 1e-6f);
  CHECK(std::abs(xhat.at(3, 2)) < 1e-6f);
}

TEST_CASE("zeroed heads collapse to constant outputs") {
  Rng rng(16);
  auto mm = random_operator<float>(64, 16, 2, 10);
  Tensor<float> block = Tensor<float>::zeros({8, 8});
  Rng pix(17);
  for (auto& v : block.data) v = static_cast<float>(pix.uniform());

  SUBCASE("reconnet with zero convs outputs zero") {
    auto model = models::build_reconnet(8, mm, rng);
    zero_all_params(model);
    auto xhat = models::reconstruct_block(model, mm, block, 9);
    for (float v : xhat.data) CHECK(v == 0.0f);
  }
  SUBCASE("autoencoder bias wiring reaches the output unchanged") {
    auto model = models::build_autoencoder(8, mm, rng);
    zero_all_params(model);
    std::vector<int> fc_at;
    for (std::size_t i = 0; i < model.layers.size(); ++i)
      if (model.layers[i].kind == nn::LayerKind::FullyConnected)
        fc_at.push_back(static_cast<int>(i));
    REQUIRE(fc_at.size() == 2u);
    model.params.biases[fc_at[0]].fill(1.0f);
    model.params.biases[fc_at[1]].fill(-2.5f);
    model.params.bump();
    auto xhat = models::reconstruct_block(model, mm, block, 9);
    for (float v : xhat.data) CHECK(v == -2.5f);
  }
}

TEST_CASE("builders are deterministic in the seed") {
  auto mm = random_operator<float>(64, 16, 2, 11);
  Rng a(21), b(21), c(22);
  auto ma = models::build_reconnet(8, mm, a);
  auto mb = models::build_reconnet(8, mm, b);
  auto mc = models::build_reconnet(8, mm, c);
  for (std::size_t i = 0; i < ma.params.weights.size(); ++i)
    CHECK(racs::bitwise_equal(ma.params.weights[i], mb.params.weights[i]));
  bool any_diff = false;
  for (std::size_t i = 0; i < ma.params.weights.size(); ++i)
    if (!racs::bitwise_equal(ma.params.weights[i], mc.params.weights[i])) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("sensing flops grow with the prefix while head flops stay fixed") {
  Rng rng(23);
  auto mm = random_operator<float>(64, 16, 2, 12);
  auto model = models::build_autoencoder(8, mm, rng);
  auto run = [&](int r) {
    auto dec = sensing::prefix_decoder(mm, r);
    auto view = nn::SensingView<float>::bind(mm, dec);
    Tensor<float> batch = Tensor<float>::zeros({2, 8, 8});
    Rng pix(24);
    for (auto& v : batch.data) v = static_cast<float>(pix.uniform());
    nn::Tape<float> tape;
    nn::forward_pass(model, &view, batch, tape);
    return std::pair<long long, long long>(tape.flops_sensing, tape.flops_head);
  };
  auto [s4, h4] = run(4);
  auto [s12, h12] = run(12);
  CHECK(s4 == 2LL * 2 * 4 * 64);
  CHECK(s12 == 2LL * 2 * 12 * 64);
  CHECK(s4 < s12);
  CHECK(h4 == h12);
  CHECK(h4 > 0);
}

TEST_CASE("builder preconditions are enforced") {
  Rng rng(25);
  auto mm = random_operator<float>(64, 16, 2, 13);
  CHECK_THROWS_AS(models::build_reconnet(7, mm, rng), racs::DimensionError);
  CHECK_THROWS_AS(models::build_autoencoder(9, mm, rng), racs::DimensionError);
  CHECK_THROWS_AS(models::build_classifier(8, mm, 1, rng), racs::DimensionError);
  auto mm18 = random_operator<float>(18 * 18, 32, 2, 14);
  CHECK_THROWS_AS(models::build_classifier(18, mm18, 4, rng), racs::DimensionError);
}

TEST_CASE("built classifier passes a gradient check") {
  Rng rng(26);
  auto mm = random_operator<double>(16, 6, 2, 15);
  auto model = models::build_classifier(4, mm, 3, rng);
  Tensor<double> input = Tensor<double>::zeros({2, 4, 4});
  Rng pix(27);
  for (auto& v : input.data) v = pix.uniform();
  std::vector<int> labels = {1, 2};
  double err = racs::nn::grad_check_cross_entropy(model, &mm, 4, input, labels);
  CHECK(err < 1e-4);
}

TEST_CASE("built autoencoder passes a gradient check") {
  Rng rng(28);
  auto mm = random_operator<double>(9, 4, 2, 16);
  auto model = models::build_autoencoder(3, mm, rng);
  Tensor<double> input = Tensor<double>::zeros({2, 3, 3});
  Tensor<double> target = Tensor<double>::zeros({2, 3, 3});
  Rng pix(29);
  for (auto& v : input.data) v = pix.uniform();
  for (auto& v : target.data) v = pix.uniform();
  double err = racs::nn::grad_check_euclidean(model, &mm, 3, input, target);
  CHECK(err < 1e-5);
}
