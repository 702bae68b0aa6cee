#pragma once
// Layer-chain network engine: forward/backward over an explicit activation
// tape, restricted to the layer kinds the bundled models need. Measurement
// and decode layers borrow the sensing operator instead of owning weights;
// their backward pass routes gradients through both the measurement product
// and the tied pseudoinverse.

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "racs/errors.hpp"
#include "racs/linalg.hpp"
#include "racs/rng.hpp"
#include "racs/sensing.hpp"
#include "racs/tensor.hpp"

namespace racs::nn {

enum class LayerKind {
  FullyConnected,
  Conv2d,
  Relu,
  MaxPool2,
  Reshape,
  Measurement,
  PinvDecode,
};

struct LayerSpec {
  LayerKind kind = LayerKind::Reshape;
  int in_dim = 0, out_dim = 0;               // fully-connected
  int kh = 0, kw = 0, in_ch = 0, out_ch = 0;  // conv2d (zero-pad same, stride 1)
  std::vector<int> target_shape;             // reshape target, batch dim excluded
  std::string name;
};

inline LayerSpec fc(int in_dim, int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::FullyConnected;
  s.in_dim = in_dim;
  s.out_dim = out_dim;
  return s;
}
inline LayerSpec conv2d(int kh, int kw, int in_ch, int out_ch) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.kh = kh;
  s.kw = kw;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  return s;
}
inline LayerSpec relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}
inline LayerSpec maxpool2() {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2;
  return s;
}
inline LayerSpec reshape(std::vector<int> item_shape) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.target_shape = std::move(item_shape);
  return s;
}
inline LayerSpec measurement() {
  LayerSpec s;
  s.kind = LayerKind::Measurement;
  return s;
}
inline LayerSpec pinv_decode() {
  LayerSpec s;
  s.kind = LayerKind::PinvDecode;
  return s;
}

template <class T>
struct ModelParams {
  std::vector<Tensor<T>> weights;  // empty tensors for parameterless layers
  std::vector<Tensor<T>> biases;
  std::vector<std::uint8_t> weight_frozen;
  std::vector<std::uint8_t> bias_frozen;
  std::uint64_t revision = 0;
  void bump() { ++revision; }
};

template <class T>
struct Model {
  std::vector<LayerSpec> layers;
  ModelParams<T> params;
};

// Allocate and initialize parameters: weights Gaussian(0, 2/fan_in),
// biases zero. Layer names default to kind + position.
template <class T>
Model<T> build_model(std::vector<LayerSpec> layers, Rng& rng) {
  Model<T> m;
  m.layers = std::move(layers);
  const int count = static_cast<int>(m.layers.size());
  m.params.weights.resize(count);
  m.params.biases.resize(count);
  m.params.weight_frozen.assign(count, 0);
  m.params.bias_frozen.assign(count, 0);
  for (int i = 0; i < count; ++i) {
    LayerSpec& l = m.layers[i];
    if (l.name.empty()) {
      const char* base = "layer";
      switch (l.kind) {
        case LayerKind::FullyConnected: base = "fc"; break;
        case LayerKind::Conv2d: base = "conv"; break;
        case LayerKind::Relu: base = "relu"; break;
        case LayerKind::MaxPool2: base = "pool"; break;
        case LayerKind::Reshape: base = "reshape"; break;
        case LayerKind::Measurement: base = "measure"; break;
        case LayerKind::PinvDecode: base = "decode"; break;
      }
      l.name = base + std::to_string(i);
    }
    if (l.kind == LayerKind::FullyConnected) {
      if (l.in_dim < 1 || l.out_dim < 1)
        throw DimensionError("fully-connected layer '" + l.name + "' needs positive dims");
      m.params.weights[i] = Tensor<T>::zeros({l.out_dim, l.in_dim});
      m.params.biases[i] = Tensor<T>::zeros({l.out_dim});
      const double sigma = std::sqrt(2.0 / l.in_dim);
      for (auto& v : m.params.weights[i].data) v = static_cast<T>(rng.gaussian() * sigma);
    } else if (l.kind == LayerKind::Conv2d) {
      if (l.kh < 1 || l.kw < 1 || l.in_ch < 1 || l.out_ch < 1)
        throw DimensionError("conv layer '" + l.name + "' needs positive dims");
      m.params.weights[i] = Tensor<T>::zeros({l.out_ch, l.in_ch, l.kh, l.kw});
      m.params.biases[i] = Tensor<T>::zeros({l.out_ch});
      const double sigma = std::sqrt(2.0 / (static_cast<double>(l.in_ch) * l.kh * l.kw));
      for (auto& v : m.params.weights[i].data) v = static_cast<T>(rng.gaussian() * sigma);
    }
  }
  m.params.revision = 1;
  return m;
}

// Read-only binding of a model run to a sensing prefix. The decoder must
// have been built from the first r rows of mm at its current revision.
template <class T>
struct SensingView {
  const sensing::MeasurementMatrix<T>* mm = nullptr;
  const linalg::PinvState<T>* decoder = nullptr;
  int r = 0;
  std::uint64_t mm_revision = 0;  // revision the decoder was built against

  static SensingView bind(const sensing::MeasurementMatrix<T>& mat,
                          const linalg::PinvState<T>& dec) {
    if (dec.cols != mat.n || dec.rows < mat.k_min || dec.rows > mat.m_max)
      throw ContractError("decoder of shape " + shape_str({dec.rows, dec.cols}) +
                          " does not fit the sensing operator");
    SensingView v;
    v.mm = &mat;
    v.decoder = &dec;
    v.r = dec.rows;
    v.mm_revision = mat.revision;
    return v;
  }
};

template <class T>
struct Tape {
  std::vector<Tensor<T>> acts;             // acts[0] = input, acts[i+1] = layer i output
  std::vector<std::vector<int>> pool_idx;  // per layer: winning flat input index per output
  std::uint64_t params_revision = 0;
  std::uint64_t phi_revision = 0;
  int r = 0;
  long long flops_sensing = 0;
  long long flops_head = 0;
  bool valid = false;
};

template <class T>
struct Gradients {
  std::vector<Tensor<T>> weights;  // aligned with layers; empty when frozen/absent
  std::vector<Tensor<T>> biases;
  Tensor<T> phi_rows;   // r x n, rows of frozen prefix entries zeroed; empty if untouched
  bool phi_ridged = false;
};

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const std::string& layer_name) {
  if (!all_finite(t))
    throw NumericError("non-finite activation after layer '" + layer_name + "'");
}

template <class T>
Tensor<T> phi_prefix_copy(const sensing::MeasurementMatrix<T>& mm, int r) {
  return Tensor<T>{{r, mm.n},
                   std::vector<T>(mm.rows.data.begin(),
                                  mm.rows.data.begin() + static_cast<std::size_t>(r) * mm.n)};
}

}  // namespace detail

template <class T>
Tensor<T> forward_pass(const Model<T>& model, std::type_identity_t<const SensingView<T>*> sv,
                       const Tensor<T>& input, Tape<T>& tape) {
  if (input.ndim() < 1 || input.dim(0) < 1)
    throw DimensionError("forward input needs a leading batch dimension");
  const int batch = input.dim(0);
  tape = Tape<T>{};
  tape.acts.reserve(model.layers.size() + 1);
  tape.pool_idx.resize(model.layers.size());
  tape.acts.push_back(input);
  detail::check_finite(input, "input");

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    const Tensor<T>& in = tape.acts.back();
    Tensor<T> out;
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        if (in.ndim() != 2 || in.dim(1) != l.in_dim)
          throw DimensionError("layer '" + l.name + "' expects shape {batch, " +
                               std::to_string(l.in_dim) + "}, got " + shape_str(in.shape));
        const Tensor<T>& w = model.params.weights[li];
        const Tensor<T>& b = model.params.biases[li];
        out = Tensor<T>::zeros({batch, l.out_dim});
        for (int s = 0; s < batch; ++s) {
          const T* x = in.data.data() + static_cast<std::size_t>(s) * l.in_dim;
          T* y = out.data.data() + static_cast<std::size_t>(s) * l.out_dim;
          for (int o = 0; o < l.out_dim; ++o) {
            const T* wr = w.data.data() + static_cast<std::size_t>(o) * l.in_dim;
            double sum = static_cast<double>(b.data[o]);
            for (int k = 0; k < l.in_dim; ++k)
              sum += static_cast<double>(wr[k]) * static_cast<double>(x[k]);
            y[o] = static_cast<T>(sum);
          }
        }
        tape.flops_head += 1LL * batch * l.out_dim * l.in_dim;
        break;
      }
      case LayerKind::Conv2d: {
        if (in.ndim() != 4 || in.dim(1) != l.in_ch)
          throw DimensionError("layer '" + l.name + "' expects shape {batch, " +
                               std::to_string(l.in_ch) + ", h, w}, got " + shape_str(in.shape));
        const int h = in.dim(2), w = in.dim(3);
        const int py = (l.kh - 1) / 2, px = (l.kw - 1) / 2;
        const Tensor<T>& wt = model.params.weights[li];
        const Tensor<T>& bt = model.params.biases[li];
        out = Tensor<T>::zeros({batch, l.out_ch, h, w});
        for (int s = 0; s < batch; ++s)
          for (int oc = 0; oc < l.out_ch; ++oc)
            for (int y = 0; y < h; ++y)
              for (int x = 0; x < w; ++x) {
                double sum = static_cast<double>(bt.data[oc]);
                for (int ic = 0; ic < l.in_ch; ++ic)
                  for (int ky = 0; ky < l.kh; ++ky) {
                    const int iy = y + ky - py;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < l.kw; ++kx) {
                      const int ix = x + kx - px;
                      if (ix < 0 || ix >= w) continue;
                      sum += static_cast<double>(wt.at(oc, ic, ky, kx)) *
                             static_cast<double>(in.at(s, ic, iy, ix));
                    }
                  }
                out.at(s, oc, y, x) = static_cast<T>(sum);
              }
        tape.flops_head += 1LL * batch * l.out_ch * h * w * l.in_ch * l.kh * l.kw;
        break;
      }
      case LayerKind::Relu: {
        out = in;
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
        tape.flops_head += static_cast<long long>(out.data.size());
        break;
      }
      case LayerKind::MaxPool2: {
        if (in.ndim() != 4)
          throw DimensionError("layer '" + l.name + "' expects 4-d input, got " +
                               shape_str(in.shape));
        const int c = in.dim(1), h = in.dim(2), w = in.dim(3);
        if (h % 2 != 0 || w % 2 != 0)
          throw DimensionError("layer '" + l.name + "' needs even spatial dims, got " +
                               shape_str(in.shape));
        out = Tensor<T>::zeros({batch, c, h / 2, w / 2});
        auto& idx = tape.pool_idx[li];
        idx.assign(out.data.size(), -1);
        std::size_t o = 0;
        for (int s = 0; s < batch; ++s)
          for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; y += 2)
              for (int x = 0; x < w; x += 2, ++o) {
                const std::size_t base =
                    ((static_cast<std::size_t>(s) * c + ch) * h + y) * w + x;
                std::size_t best = base;
                T bv = in.data[base];
                const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
                for (std::size_t cc : cand)
                  if (in.data[cc] > bv) {
                    bv = in.data[cc];
                    best = cc;
                  }
                out.data[o] = bv;
                idx[o] = static_cast<int>(best);
              }
        tape.flops_head += static_cast<long long>(in.data.size());
        break;
      }
      case LayerKind::Reshape: {
        std::vector<int> ns;
        ns.push_back(batch);
        for (int d : l.target_shape) ns.push_back(d);
        if (shape_numel(l.target_shape) != in.item_numel())
          throw DimensionError("layer '" + l.name + "' cannot reshape item of " +
                               shape_str(in.shape) + " to " + shape_str(l.target_shape));
        out = in;
        out.shape = ns;
        break;
      }
      case LayerKind::Measurement: {
        if (sv == nullptr || sv->mm == nullptr || sv->decoder == nullptr)
          throw ContractError("layer '" + l.name + "' requires a bound sensing view");
        if (sv->mm_revision != sv->mm->revision)
          throw ContractError("sensing view for layer '" + l.name +
                              "' is stale: operator changed after binding");
        const int n = sv->mm->n, r = sv->r;
        if (in.ndim() != 2 || in.dim(1) != n)
          throw DimensionError("layer '" + l.name + "' expects shape {batch, " +
                               std::to_string(n) + "}, got " + shape_str(in.shape));
        out = Tensor<T>::zeros({batch, r});
        for (int s = 0; s < batch; ++s) {
          const T* x = in.data.data() + static_cast<std::size_t>(s) * n;
          T* y = out.data.data() + static_cast<std::size_t>(s) * r;
          for (int i = 0; i < r; ++i) {
            const T* row = sv->mm->rows.data.data() + static_cast<std::size_t>(i) * n;
            double sum = 0.0;
            for (int k = 0; k < n; ++k)
              sum += static_cast<double>(row[k]) * static_cast<double>(x[k]);
            y[i] = static_cast<T>(sum);
          }
        }
        tape.r = r;
        tape.flops_sensing += 1LL * batch * r * n;
        break;
      }
      case LayerKind::PinvDecode: {
        if (sv == nullptr || sv->decoder == nullptr)
          throw ContractError("layer '" + l.name + "' requires a bound sensing view");
        if (sv->mm != nullptr && sv->mm_revision != sv->mm->revision)
          throw ContractError("sensing view for layer '" + l.name +
                              "' is stale: operator changed after binding");
        const int r = sv->decoder->rows, n = sv->decoder->cols;
        if (in.ndim() != 2 || in.dim(1) != r)
          throw DimensionError("layer '" + l.name + "' expects shape {batch, " +
                               std::to_string(r) + "}, got " + shape_str(in.shape));
        out = Tensor<T>::zeros({batch, n});
        for (int s = 0; s < batch; ++s)
          linalg::pinv_apply(*sv->decoder, in.data.data() + static_cast<std::size_t>(s) * r,
                             out.data.data() + static_cast<std::size_t>(s) * n);
        tape.flops_sensing += 1LL * batch * r * n;
        break;
      }
    }
    detail::check_finite(out, l.name);
    tape.acts.push_back(std::move(out));
  }
  tape.params_revision = model.params.revision;
  tape.phi_revision = (sv && sv->mm) ? sv->mm->revision : 0;
  if (sv) tape.r = sv->r;
  tape.valid = true;
  return tape.acts.back();
}

template <class T>
Gradients<T> backward_pass(const Model<T>& model, std::type_identity_t<const SensingView<T>*> sv,
                           const Tape<T>& tape, const Tensor<T>& output_grad) {
  if (!tape.valid) throw ContractError("backward_pass on an invalid tape");
  if (tape.acts.size() != model.layers.size() + 1)
    throw ContractError("tape does not match the model's layer count");
  if (tape.params_revision != model.params.revision)
    throw ContractError("stale tape: parameters changed after the forward pass");
  if (sv && sv->mm && tape.phi_revision != sv->mm->revision)
    throw ContractError("stale tape: sensing operator changed after the forward pass");
  if (!output_grad.same_shape(tape.acts.back()))
    throw DimensionError("output gradient shape " + shape_str(output_grad.shape) +
                         " does not match forward output " +
                         shape_str(tape.acts.back().shape));
  for (const LayerSpec& l : model.layers)
    if ((l.kind == LayerKind::Measurement || l.kind == LayerKind::PinvDecode) &&
        (sv == nullptr || sv->mm == nullptr || sv->decoder == nullptr))
      throw ContractError("layer '" + l.name + "' requires a bound sensing view");

  const int batch = tape.acts.front().dim(0);
  Gradients<T> g;
  g.weights.resize(model.layers.size());
  g.biases.resize(model.layers.size());

  // gradient of the loss w.r.t. the transposed pseudoinverse, accumulated at
  // the decode layer and folded into phi_rows at the end
  Tensor<T> grad_psi_t;
  bool tie_seen = false;

  bool phi_wanted = false;
  if (sv && sv->mm) {
    for (int i = 0; i < sv->r; ++i)
      if (sv->mm->trainable_rows[static_cast<std::size_t>(i)]) phi_wanted = true;
  }

  Tensor<T> grad = output_grad;
  for (int li = static_cast<int>(model.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = model.layers[li];
    const Tensor<T>& in = tape.acts[static_cast<std::size_t>(li)];
    Tensor<T> gin;
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        const Tensor<T>& w = model.params.weights[li];
        const bool want_w = !model.params.weight_frozen[li];
        const bool want_b = !model.params.bias_frozen[li];
        Tensor<T> gw = want_w ? Tensor<T>::zeros(w.shape) : Tensor<T>{};
        Tensor<T> gb = want_b ? Tensor<T>::zeros({l.out_dim}) : Tensor<T>{};
        gin = Tensor<T>::zeros(in.shape);
        for (int s = 0; s < batch; ++s) {
          const T* x = in.data.data() + static_cast<std::size_t>(s) * l.in_dim;
          const T* go = grad.data.data() + static_cast<std::size_t>(s) * l.out_dim;
          T* gx = gin.data.data() + static_cast<std::size_t>(s) * l.in_dim;
          for (int o = 0; o < l.out_dim; ++o) {
            const double goo = static_cast<double>(go[o]);
            const T* wr = w.data.data() + static_cast<std::size_t>(o) * l.in_dim;
            if (want_w) {
              T* gwr = gw.data.data() + static_cast<std::size_t>(o) * l.in_dim;
              for (int k = 0; k < l.in_dim; ++k)
                gwr[k] = static_cast<T>(static_cast<double>(gwr[k]) +
                                        goo * static_cast<double>(x[k]));
            }
            if (want_b)
              gb.data[o] = static_cast<T>(static_cast<double>(gb.data[o]) + goo);
            for (int k = 0; k < l.in_dim; ++k)
              gx[k] = static_cast<T>(static_cast<double>(gx[k]) +
                                     goo * static_cast<double>(wr[k]));
          }
        }
        g.weights[li] = std::move(gw);
        g.biases[li] = std::move(gb);
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor<T>& wt = model.params.weights[li];
        const int h = in.dim(2), w = in.dim(3);
        const int py = (l.kh - 1) / 2, px = (l.kw - 1) / 2;
        const bool want_w = !model.params.weight_frozen[li];
        const bool want_b = !model.params.bias_frozen[li];
        Tensor<T> gw = want_w ? Tensor<T>::zeros(wt.shape) : Tensor<T>{};
        Tensor<T> gb = want_b ? Tensor<T>::zeros({l.out_ch}) : Tensor<T>{};
        gin = Tensor<T>::zeros(in.shape);
        for (int s = 0; s < batch; ++s)
          for (int oc = 0; oc < l.out_ch; ++oc)
            for (int y = 0; y < h; ++y)
              for (int x = 0; x < w; ++x) {
                const double go = static_cast<double>(grad.at(s, oc, y, x));
                if (want_b) gb.data[oc] = static_cast<T>(static_cast<double>(gb.data[oc]) + go);
                for (int ic = 0; ic < l.in_ch; ++ic)
                  for (int ky = 0; ky < l.kh; ++ky) {
                    const int iy = y + ky - py;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < l.kw; ++kx) {
                      const int ix = x + kx - px;
                      if (ix < 0 || ix >= w) continue;
                      if (want_w)
                        gw.at(oc, ic, ky, kx) = static_cast<T>(
                            static_cast<double>(gw.at(oc, ic, ky, kx)) +
                            go * static_cast<double>(in.at(s, ic, iy, ix)));
                      gin.at(s, ic, iy, ix) = static_cast<T>(
                          static_cast<double>(gin.at(s, ic, iy, ix)) +
                          go * static_cast<double>(wt.at(oc, ic, ky, kx)));
                    }
                  }
              }
        g.weights[li] = std::move(gw);
        g.biases[li] = std::move(gb);
        break;
      }
      case LayerKind::Relu: {
        gin = grad;
        for (std::size_t i = 0; i < gin.data.size(); ++i)
          if (!(in.data[i] > T(0))) gin.data[i] = T(0);
        break;
      }
      case LayerKind::MaxPool2: {
        gin = Tensor<T>::zeros(in.shape);
        const auto& idx = tape.pool_idx[static_cast<std::size_t>(li)];
        for (std::size_t o = 0; o < grad.data.size(); ++o)
          gin.data[static_cast<std::size_t>(idx[o])] =
              static_cast<T>(static_cast<double>(gin.data[static_cast<std::size_t>(idx[o])]) +
                             static_cast<double>(grad.data[o]));
        break;
      }
      case LayerKind::Reshape: {
        gin = grad;
        gin.shape = in.shape;
        break;
      }
      case LayerKind::Measurement: {
        const int n = sv->mm->n, r = sv->r;
        gin = Tensor<T>::zeros(in.shape);
        for (int s = 0; s < batch; ++s) {
          const T* go = grad.data.data() + static_cast<std::size_t>(s) * r;
          T* gx = gin.data.data() + static_cast<std::size_t>(s) * n;
          for (int i = 0; i < r; ++i) {
            const T* row = sv->mm->rows.data.data() + static_cast<std::size_t>(i) * n;
            const double gi = static_cast<double>(go[i]);
            for (int k = 0; k < n; ++k)
              gx[k] = static_cast<T>(static_cast<double>(gx[k]) +
                                     gi * static_cast<double>(row[k]));
          }
        }
        if (phi_wanted) {
          if (g.phi_rows.numel() == 0) g.phi_rows = Tensor<T>::zeros({r, n});
          for (int s = 0; s < batch; ++s) {
            const T* go = grad.data.data() + static_cast<std::size_t>(s) * r;
            const T* x = in.data.data() + static_cast<std::size_t>(s) * n;
            for (int i = 0; i < r; ++i) {
              const double gi = static_cast<double>(go[i]);
              if (gi == 0.0) continue;
              T* dst = g.phi_rows.data.data() + static_cast<std::size_t>(i) * n;
              for (int k = 0; k < n; ++k)
                dst[k] = static_cast<T>(static_cast<double>(dst[k]) +
                                        gi * static_cast<double>(x[k]));
            }
          }
        }
        break;
      }
      case LayerKind::PinvDecode: {
        const int r = sv->decoder->rows, n = sv->decoder->cols;
        gin = Tensor<T>::zeros(in.shape);
        for (int s = 0; s < batch; ++s)
          linalg::pinv_apply_adjoint(*sv->decoder,
                                     grad.data.data() + static_cast<std::size_t>(s) * n,
                                     gin.data.data() + static_cast<std::size_t>(s) * r);
        if (phi_wanted) {
          if (!tie_seen) {
            grad_psi_t = Tensor<T>::zeros({r, n});
            tie_seen = true;
          }
          for (int s = 0; s < batch; ++s) {
            const T* y = in.data.data() + static_cast<std::size_t>(s) * r;
            const T* go = grad.data.data() + static_cast<std::size_t>(s) * n;
            for (int i = 0; i < r; ++i) {
              const double yi = static_cast<double>(y[i]);
              if (yi == 0.0) continue;
              T* dst = grad_psi_t.data.data() + static_cast<std::size_t>(i) * n;
              for (int k = 0; k < n; ++k)
                dst[k] = static_cast<T>(static_cast<double>(dst[k]) +
                                        yi * static_cast<double>(go[k]));
            }
          }
        }
        break;
      }
    }
    grad = std::move(gin);
  }

  if (tie_seen) {
    Tensor<T> phi = detail::phi_prefix_copy(*sv->mm, sv->r);
    auto tie = linalg::pinv_grad(*sv->decoder, phi, grad_psi_t);
    g.phi_ridged = tie.ridged;
    if (g.phi_rows.numel() == 0) {
      g.phi_rows = std::move(tie.grad_phi);
    } else {
      for (std::size_t i = 0; i < g.phi_rows.data.size(); ++i)
        g.phi_rows.data[i] = static_cast<T>(static_cast<double>(g.phi_rows.data[i]) +
                                            static_cast<double>(tie.grad_phi.data[i]));
    }
  }
  if (g.phi_rows.numel() > 0) {
    for (int i = 0; i < sv->r; ++i)
      if (!sv->mm->trainable_rows[static_cast<std::size_t>(i)]) {
        T* row = g.phi_rows.data.data() + static_cast<std::size_t>(i) * sv->mm->n;
        std::fill(row, row + sv->mm->n, T(0));
      }
  }
  return g;
}

}  // namespace racs::nn
