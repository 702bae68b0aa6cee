#pragma once
// Row-prefix pseudoinverse machinery. A PinvState holds the decoder
// psi = phiᵀ(phi·phiᵀ + ridge·I)⁻¹ for a row block phi and supports an
// O(n·r) single-row append through a bordered Cholesky factor, plus the
// gradient of a scalar loss through the map phi -> psi(phi).
//
// All inner products accumulate in double regardless of the scalar type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "racs/errors.hpp"
#include "racs/tensor.hpp"

namespace racs::linalg {

inline constexpr double kRidgeScale = 1e-6;      // ridge = kRidgeScale * trace(gram) / rows
inline constexpr double kDegenerateTol = 1e-12;  // schur <= tol * row_energy forces a recompute

// In-place Cholesky of a packed row-major lower triangle (row i holds
// entries (i,0..i) at offset i*(i+1)/2). Returns false on a non-positive
// pivot and leaves the buffer partially overwritten.
template <class T>
bool cholesky_packed(std::vector<T>& a, int r) {
  for (int i = 0; i < r; ++i) {
    T* row_i = a.data() + static_cast<std::size_t>(i) * (i + 1) / 2;
    for (int j = 0; j <= i; ++j) {
      const T* row_j = a.data() + static_cast<std::size_t>(j) * (j + 1) / 2;
      double sum = static_cast<double>(row_i[j]);
      for (int k = 0; k < j; ++k)
        sum -= static_cast<double>(row_i[k]) * static_cast<double>(row_j[k]);
      if (i == j) {
        if (!(sum > 0.0)) return false;
        row_i[j] = static_cast<T>(std::sqrt(sum));
      } else {
        row_i[j] = static_cast<T>(sum / static_cast<double>(row_j[j]));
      }
    }
  }
  return true;
}

// Solve L x = b in place.
template <class T>
void solve_lower(const std::vector<T>& chol, int r, std::vector<double>& b) {
  for (int i = 0; i < r; ++i) {
    const T* row = chol.data() + static_cast<std::size_t>(i) * (i + 1) / 2;
    double sum = b[i];
    for (int k = 0; k < i; ++k) sum -= static_cast<double>(row[k]) * b[k];
    b[i] = sum / static_cast<double>(row[i]);
  }
}

// Solve Lᵀ x = b in place.
template <class T>
void solve_lower_t(const std::vector<T>& chol, int r, std::vector<double>& b) {
  for (int i = r - 1; i >= 0; --i) {
    double sum = b[i];
    for (int k = i + 1; k < r; ++k)
      sum -= static_cast<double>(chol[static_cast<std::size_t>(k) * (k + 1) / 2 + i]) * b[k];
    b[i] = sum / static_cast<double>(chol[static_cast<std::size_t>(i) * (i + 1) / 2 + i]);
  }
}

// Decoder state for one row block. The block itself is not stored; it is
// recoverable as (L·Lᵀ)·psi_t, which the degenerate-append path uses.
template <class T>
struct PinvState {
  int rows = 0;
  int cols = 0;
  std::vector<T> chol;  // packed lower-triangular factor of the (ridged) gram
  Tensor<T> psi_t;      // transposed pseudoinverse, rows x cols
  T ridge = T(0);
};

namespace detail {

// Packed lower triangle of phi·phiᵀ + ridge·I; also reports trace(phi·phiᵀ).
template <class T>
std::vector<T> packed_gram(const Tensor<T>& phi, double ridge, double* trace_out) {
  const int r = phi.dim(0), n = phi.dim(1);
  std::vector<T> g(static_cast<std::size_t>(r) * (r + 1) / 2);
  double trace = 0.0;
  std::size_t idx = 0;
  for (int i = 0; i < r; ++i) {
    const T* ri = phi.data.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j <= i; ++j) {
      const T* rj = phi.data.data() + static_cast<std::size_t>(j) * n;
      double sum = 0.0;
      for (int k = 0; k < n; ++k)
        sum += static_cast<double>(ri[k]) * static_cast<double>(rj[k]);
      if (i == j) {
        trace += sum;
        sum += ridge;
      }
      g[idx++] = static_cast<T>(sum);
    }
  }
  if (trace_out) *trace_out = trace;
  return g;
}

// Solve (L·Lᵀ)·X = B column by column; B is r x n row-major and is
// overwritten with X.
template <class T>
void gram_solve_block(const std::vector<T>& chol, int r, int n, T* b) {
  std::vector<double> col(r);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < r; ++i)
      col[i] = static_cast<double>(b[static_cast<std::size_t>(i) * n + j]);
    solve_lower(chol, r, col);
    solve_lower_t(chol, r, col);
    for (int i = 0; i < r; ++i)
      b[static_cast<std::size_t>(i) * n + j] = static_cast<T>(col[i]);
  }
}

template <class T>
PinvState<T> build_state(const Tensor<T>& phi, bool force_ridge) {
  const int r = phi.dim(0), n = phi.dim(1);
  double trace = 0.0;
  T ridge = T(0);
  std::vector<T> g = packed_gram(phi, 0.0, &trace);
  bool ok = false;
  if (!force_ridge) ok = cholesky_packed(g, r);
  if (!ok) {
    ridge = static_cast<T>(kRidgeScale * trace / r);
    g = packed_gram(phi, static_cast<double>(ridge), nullptr);
    ok = cholesky_packed(g, r);
  }
  if (!ok)
    throw NumericError("row gram of shape " + shape_str({r, r}) +
                       " is not positive definite even after ridging");
  PinvState<T> st;
  st.rows = r;
  st.cols = n;
  st.ridge = ridge;
  st.psi_t = phi;
  gram_solve_block(g, r, n, st.psi_t.data.data());
  st.chol = std::move(g);
  return st;
}

}  // namespace detail

template <class T>
PinvState<T> pinv_rows(const Tensor<T>& phi) {
  if (phi.ndim() != 2)
    throw DimensionError("pinv_rows expects a matrix, got shape " + shape_str(phi.shape));
  return detail::build_state(phi, false);
}

// State for the first r rows of a taller matrix.
template <class T>
PinvState<T> pinv_prefix(const Tensor<T>& phi, int r) {
  if (phi.ndim() != 2)
    throw DimensionError("pinv_prefix expects a matrix, got shape " + shape_str(phi.shape));
  if (r < 1 || r > phi.dim(0))
    throw DimensionError("pinv_prefix: row count " + std::to_string(r) +
                         " outside [1, " + std::to_string(phi.dim(0)) + "]");
  const int n = phi.dim(1);
  Tensor<T> head{{r, n},
                 std::vector<T>(phi.data.begin(),
                                phi.data.begin() + static_cast<std::size_t>(r) * n)};
  return pinv_rows(head);
}

// Reconstruct the row block that generated the state: phi = (L·Lᵀ)·psi_t.
template <class T>
Tensor<T> phi_from_state(const PinvState<T>& st) {
  const int r = st.rows, n = st.cols;
  std::vector<double> gram(static_cast<std::size_t>(r) * r);
  for (int i = 0; i < r; ++i) {
    const T* li = st.chol.data() + static_cast<std::size_t>(i) * (i + 1) / 2;
    for (int j = 0; j <= i; ++j) {
      const T* lj = st.chol.data() + static_cast<std::size_t>(j) * (j + 1) / 2;
      double sum = 0.0;
      for (int k = 0; k <= j; ++k)
        sum += static_cast<double>(li[k]) * static_cast<double>(lj[k]);
      gram[static_cast<std::size_t>(i) * r + j] = sum;
      gram[static_cast<std::size_t>(j) * r + i] = sum;
    }
  }
  Tensor<T> phi = Tensor<T>::zeros({r, n});
  std::vector<double> acc(n);
  for (int i = 0; i < r; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int j = 0; j < r; ++j) {
      const double g = gram[static_cast<std::size_t>(i) * r + j];
      const T* pj = st.psi_t.data.data() + static_cast<std::size_t>(j) * n;
      for (int k = 0; k < n; ++k) acc[k] += g * static_cast<double>(pj[k]);
    }
    T* out = phi.data.data() + static_cast<std::size_t>(i) * n;
    for (int k = 0; k < n; ++k) out[k] = static_cast<T>(acc[k]);
  }
  return phi;
}

// Extend the state by one row. Cost O(n·rows) in the regular case; if the
// new row is numerically inside the span of the existing ones the whole
// state is rebuilt from scratch with a ridge.
template <class T>
void pinv_append_row(PinvState<T>& st, const T* row) {
  const int r = st.rows, n = st.cols;
  if (n < 1) throw DimensionError("pinv_append_row on an uninitialized state");
  const T* psi = st.psi_t.data.data();

  std::vector<double> t(r);
  for (int i = 0; i < r; ++i) {
    const T* pi = psi + static_cast<std::size_t>(i) * n;
    double sum = 0.0;
    for (int k = 0; k < n; ++k)
      sum += static_cast<double>(pi[k]) * static_cast<double>(row[k]);
    t[i] = sum;
  }
  // c = gram·t, formed as L·(Lᵀ·t)
  std::vector<double> z(r), c(r);
  for (int i = 0; i < r; ++i) {
    double sum = 0.0;
    for (int k = i; k < r; ++k)
      sum += static_cast<double>(st.chol[static_cast<std::size_t>(k) * (k + 1) / 2 + i]) * t[k];
    z[i] = sum;
  }
  for (int i = 0; i < r; ++i) {
    const T* li = st.chol.data() + static_cast<std::size_t>(i) * (i + 1) / 2;
    double sum = 0.0;
    for (int k = 0; k <= i; ++k) sum += static_cast<double>(li[k]) * z[k];
    c[i] = sum;
  }
  std::vector<double> w = c;
  solve_lower(st.chol, r, w);

  double d = static_cast<double>(st.ridge);
  for (int k = 0; k < n; ++k) d += static_cast<double>(row[k]) * static_cast<double>(row[k]);
  double ww = 0.0;
  for (double x : w) ww += x * x;
  const double schur = d - ww;

  if (!std::isfinite(schur) || !(schur > kDegenerateTol * d)) {
    Tensor<T> phi = phi_from_state(st);
    phi.data.resize(static_cast<std::size_t>(r + 1) * n);
    phi.shape[0] = r + 1;
    std::copy(row, row + n, phi.data.data() + static_cast<std::size_t>(r) * n);
    st = detail::build_state(phi, true);
    return;
  }

  std::vector<double> u = w;
  solve_lower_t(st.chol, r, u);
  std::vector<double> q(n);
  for (int k = 0; k < n; ++k) q[k] = static_cast<double>(row[k]);
  for (int i = 0; i < r; ++i) {
    const T* pi = psi + static_cast<std::size_t>(i) * n;
    const double ci = c[i];
    for (int k = 0; k < n; ++k) q[k] -= ci * static_cast<double>(pi[k]);
  }

  const double inv_s2 = 1.0 / schur;
  T* mut = st.psi_t.data.data();
  for (int i = 0; i < r; ++i) {
    T* pi = mut + static_cast<std::size_t>(i) * n;
    const double f = u[i] * inv_s2;
    for (int k = 0; k < n; ++k)
      pi[k] = static_cast<T>(static_cast<double>(pi[k]) - f * q[k]);
  }
  st.psi_t.data.resize(static_cast<std::size_t>(r + 1) * n);
  st.psi_t.shape[0] = r + 1;
  T* last = st.psi_t.data.data() + static_cast<std::size_t>(r) * n;
  for (int k = 0; k < n; ++k) last[k] = static_cast<T>(q[k] * inv_s2);

  st.chol.reserve(st.chol.size() + r + 1);
  for (int k = 0; k < r; ++k) st.chol.push_back(static_cast<T>(w[k]));
  st.chol.push_back(static_cast<T>(std::sqrt(schur)));
  st.rows = r + 1;
}

// x = psi·y (decode a measurement vector).
template <class T>
void pinv_apply(const PinvState<T>& st, const T* y, T* x) {
  const int r = st.rows, n = st.cols;
  std::vector<double> acc(n, 0.0);
  for (int i = 0; i < r; ++i) {
    const T* pi = st.psi_t.data.data() + static_cast<std::size_t>(i) * n;
    const double yi = static_cast<double>(y[i]);
    for (int k = 0; k < n; ++k) acc[k] += yi * static_cast<double>(pi[k]);
  }
  for (int k = 0; k < n; ++k) x[k] = static_cast<T>(acc[k]);
}

// y = psiᵀ·x (adjoint of decode, used by backpropagation).
template <class T>
void pinv_apply_adjoint(const PinvState<T>& st, const T* x, T* y) {
  const int r = st.rows, n = st.cols;
  for (int i = 0; i < r; ++i) {
    const T* pi = st.psi_t.data.data() + static_cast<std::size_t>(i) * n;
    double sum = 0.0;
    for (int k = 0; k < n; ++k)
      sum += static_cast<double>(pi[k]) * static_cast<double>(x[k]);
    y[i] = static_cast<T>(sum);
  }
}

template <class T>
struct PinvGradResult {
  Tensor<T> grad_phi;  // rows x cols
  bool ridged = false; // gradient taken through a ridged decoder
};

// Gradient of a scalar loss through psi(phi). grad_psi_t is the loss
// gradient with respect to psi_t, laid out like psi_t (rows x cols).
// With gram G = phi·phiᵀ + ridge·I (ridge held constant) and B = grad_psi_t:
//   grad_phi = G⁻¹·B − (S + Sᵀ)·phi,   S = (G⁻¹·B)·psi_tᵀ.
// phi must be the exact row block the state was built from.
template <class T>
PinvGradResult<T> pinv_grad(const PinvState<T>& st, const Tensor<T>& phi,
                            const Tensor<T>& grad_psi_t) {
  const int r = st.rows, n = st.cols;
  if (phi.ndim() != 2 || phi.dim(0) != r || phi.dim(1) != n)
    throw DimensionError("pinv_grad: phi shape " + shape_str(phi.shape) +
                         " does not match state " + shape_str({r, n}));
  if (!grad_psi_t.same_shape(phi))
    throw DimensionError("pinv_grad: gradient shape " + shape_str(grad_psi_t.shape) +
                         " does not match state " + shape_str({r, n}));

  Tensor<T> term1 = grad_psi_t;
  detail::gram_solve_block(st.chol, r, n, term1.data.data());

  std::vector<double> s_mat(static_cast<std::size_t>(r) * r);
  for (int i = 0; i < r; ++i) {
    const T* ti = term1.data.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < r; ++j) {
      const T* pj = st.psi_t.data.data() + static_cast<std::size_t>(j) * n;
      double sum = 0.0;
      for (int k = 0; k < n; ++k)
        sum += static_cast<double>(ti[k]) * static_cast<double>(pj[k]);
      s_mat[static_cast<std::size_t>(i) * r + j] = sum;
    }
  }

  Tensor<T> grad = Tensor<T>::zeros({r, n});
  std::vector<double> acc(n);
  for (int i = 0; i < r; ++i) {
    const T* ti = term1.data.data() + static_cast<std::size_t>(i) * n;
    for (int k = 0; k < n; ++k) acc[k] = static_cast<double>(ti[k]);
    for (int j = 0; j < r; ++j) {
      const double m = s_mat[static_cast<std::size_t>(i) * r + j] +
                       s_mat[static_cast<std::size_t>(j) * r + i];
      const T* fj = phi.data.data() + static_cast<std::size_t>(j) * n;
      for (int k = 0; k < n; ++k) acc[k] -= m * static_cast<double>(fj[k]);
    }
    T* out = grad.data.data() + static_cast<std::size_t>(i) * n;
    for (int k = 0; k < n; ++k) out[k] = static_cast<T>(acc[k]);
  }
  return {std::move(grad), st.ridge > T(0)};
}

}  // namespace racs::linalg
