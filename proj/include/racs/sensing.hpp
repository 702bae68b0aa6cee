#pragma once
// Measurement operator with row-prefix semantics: any leading block of rows
// acts as a standalone sensing matrix, decoded by that prefix's
// pseudoinverse. Also covers the random-Gaussian baseline and the 9-bit
// signed export used for programmable hardware.

#include <cmath>
#include <cstdint>
#include <vector>

#include "racs/errors.hpp"
#include "racs/linalg.hpp"
#include "racs/rng.hpp"
#include "racs/tensor.hpp"

namespace racs::sensing {

template <class T>
struct EncodedBlock {
  int r = 0;
  std::vector<T> values;  // length r
};

template <class T>
struct MeasurementMatrix {
  int n = 0;      // block pixel count
  int m_max = 0;  // total row budget
  int k_min = 0;  // shortest usable prefix
  Tensor<T> rows;            // m_max x n
  std::vector<std::uint8_t> trainable_rows;  // per-row training mask
  std::uint64_t revision = 0;  // bumped by every mutation of rows

  void check_prefix(int r) const {
    if (r < k_min || r > m_max)
      throw DimensionError("prefix length " + std::to_string(r) + " outside [" +
                           std::to_string(k_min) + ", " + std::to_string(m_max) + "]");
  }
  void bump() { ++revision; }
};

inline void validate_bounds(int n, int m_max, int k_min) {
  if (!(1 <= k_min && k_min <= m_max && m_max <= n))
    throw DimensionError("need 1 <= k_min <= m_max <= n, got k_min=" +
                         std::to_string(k_min) + " m_max=" + std::to_string(m_max) +
                         " n=" + std::to_string(n));
}

// Entries i.i.d. Gaussian(0, 1/n); identical matrices for identical seeds.
template <class T>
MeasurementMatrix<T> gaussian_init(int n, int m_max, int k_min, std::uint64_t seed) {
  validate_bounds(n, m_max, k_min);
  MeasurementMatrix<T> mm;
  mm.n = n;
  mm.m_max = m_max;
  mm.k_min = k_min;
  mm.rows = Tensor<T>::zeros({m_max, n});
  mm.trainable_rows.assign(static_cast<std::size_t>(m_max), 1);
  Rng rng(seed);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : mm.rows.data) v = static_cast<T>(rng.gaussian() * sigma);
  mm.revision = 1;
  return mm;
}

// y = rows(1:r,:)·x
template <class T>
EncodedBlock<T> measure(const MeasurementMatrix<T>& mm, const T* x, int r) {
  mm.check_prefix(r);
  EncodedBlock<T> out;
  out.r = r;
  out.values.resize(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const T* row = mm.rows.data.data() + static_cast<std::size_t>(i) * mm.n;
    double sum = 0.0;
    for (int k = 0; k < mm.n; ++k)
      sum += static_cast<double>(row[k]) * static_cast<double>(x[k]);
    out.values[i] = static_cast<T>(sum);
  }
  return out;
}

template <class T>
linalg::PinvState<T> prefix_decoder(const MeasurementMatrix<T>& mm, int r) {
  mm.check_prefix(r);
  return linalg::pinv_prefix(mm.rows, r);
}

// Pseudo-image from one measurement vector, reshaped to the square block.
template <class T>
Tensor<T> decode_init(const MeasurementMatrix<T>& mm, const EncodedBlock<T>& y) {
  mm.check_prefix(y.r);
  if (static_cast<int>(y.values.size()) != y.r)
    throw DimensionError("encoded block length " + std::to_string(y.values.size()) +
                         " does not match its prefix " + std::to_string(y.r));
  const int b = static_cast<int>(std::lround(std::sqrt(static_cast<double>(mm.n))));
  if (b * b != mm.n)
    throw DimensionError("block pixel count " + std::to_string(mm.n) + " is not a square");
  auto st = linalg::pinv_prefix(mm.rows, y.r);
  Tensor<T> out = Tensor<T>::zeros({b, b});
  linalg::pinv_apply(st, y.values.data(), out.data.data());
  return out;
}

struct QuantizedPrefix {
  int rows = 0;
  int cols = 0;
  std::vector<std::int16_t> values;  // 9-bit signed range [-256, 255]
  double scale = 0.0;                // dequantized entry = values * scale
};

// q_ij = round(rows_ij / max_abs * 255) clamped to [-256, 255], with max_abs
// taken over the exported prefix; scale = max_abs / 255.
template <class T>
QuantizedPrefix quantize_export(const MeasurementMatrix<T>& mm, int r) {
  mm.check_prefix(r);
  const std::size_t count = static_cast<std::size_t>(r) * mm.n;
  double max_abs = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    max_abs = std::max(max_abs, std::fabs(static_cast<double>(mm.rows.data[i])));
  if (max_abs == 0.0) throw NumericError("cannot quantize an all-zero operator");
  QuantizedPrefix out;
  out.rows = r;
  out.cols = mm.n;
  out.scale = max_abs / 255.0;
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    long q = std::lround(static_cast<double>(mm.rows.data[i]) / max_abs * 255.0);
    q = std::min(255L, std::max(-256L, q));
    out.values[i] = static_cast<std::int16_t>(q);
  }
  return out;
}

}  // namespace racs::sensing
