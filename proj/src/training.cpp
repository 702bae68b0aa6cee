#include "racs/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "racs/adam.hpp"
#include "racs/errors.hpp"
#include "racs/linalg.hpp"
#include "racs/losses.hpp"
#include "racs/models.hpp"

namespace racs::training {

void validate_config(const TrainConfig& cfg) {
  if (cfg.k_min < 1 || cfg.k_min > cfg.m_max)
    throw ConfigError("need 1 <= k_min <= m_max, got k_min=" + std::to_string(cfg.k_min) +
                      " m_max=" + std::to_string(cfg.m_max));
  if (cfg.max_iters_1 < 0 || cfg.max_iters_2 < 0 || cfg.iters_per_row < 0)
    throw ConfigError("iteration counts must be non-negative");
  if (!(cfg.lr > 0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
}

const char* head_name(HeadKind head) {
  switch (head) {
    case HeadKind::Reconnet: return "reconnet";
    case HeadKind::Autoencoder: return "autoencoder";
    case HeadKind::Classifier: return "classifier";
  }
  throw ContractError("unknown head kind");
}

HeadKind head_from_name(const std::string& name) {
  if (name == "reconnet") return HeadKind::Reconnet;
  if (name == "autoencoder") return HeadKind::Autoencoder;
  if (name == "classifier") return HeadKind::Classifier;
  throw ConfigError("unknown model head '" + name + "'");
}

nn::Model<float> build_head(const ModelSpec& spec, const sensing::MeasurementMatrix<float>& mm,
                            Rng& rng) {
  switch (spec.head) {
    case HeadKind::Reconnet: return models::build_reconnet(spec.b, mm, rng);
    case HeadKind::Autoencoder: return models::build_autoencoder(spec.b, mm, rng);
    case HeadKind::Classifier: return models::build_classifier(spec.b, mm, spec.num_classes, rng);
  }
  throw ContractError("unknown head kind");
}

namespace {

constexpr uint64_t kTagPhiInit = 0x01;
constexpr uint64_t kTagThetaInit = 0x02;
constexpr uint64_t kTagHoldout = 0x03;
constexpr uint64_t kTagLoopStage1 = 0x11;
constexpr uint64_t kTagLoopStage2 = 0x12;
constexpr uint64_t kTagRowBase = 0x1300;
constexpr long kValEvery = 200;
constexpr int kDivergenceLimit = 10;
constexpr int kEvalChunk = 64;

struct DataView {
  const data_io::BlockDataset* ds = nullptr;
  std::vector<std::size_t> train_idx, val_idx;
};

DataView make_holdout(const data_io::BlockDataset& ds, const TrainConfig& cfg) {
  if (ds.blocks.empty()) throw DataError("empty training dataset");
  if (ds.labeled() && ds.labels.size() != ds.blocks.size())
    throw DimensionError("labels do not align with blocks");
  const std::size_t n = ds.blocks.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(cfg.seed, kTagHoldout));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  DataView view;
  view.ds = &ds;
  const std::size_t n_val = n / 10;
  view.val_idx.assign(order.begin(), order.begin() + n_val);
  view.train_idx.assign(order.begin() + n_val, order.end());
  return view;
}

void check_head_data(const ModelSpec& spec, const data_io::BlockDataset& ds) {
  if (ds.b != spec.b)
    throw DimensionError("dataset block side " + std::to_string(ds.b) +
                         " does not match model block side " + std::to_string(spec.b));
  if (spec.head == HeadKind::Classifier && !ds.labeled())
    throw DataError("classifier training needs a labeled dataset");
}

void freeze_theta(nn::Model<float>& model) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!model.params.weights[i].data.empty()) model.params.weight_frozen[i] = 1;
    if (!model.params.biases[i].data.empty()) model.params.bias_frozen[i] = 1;
  }
}

struct Snapshot {
  std::vector<Tensor<float>> weights, biases;
  Tensor<float> phi;
};

Snapshot capture(const nn::Model<float>& model, const sensing::MeasurementMatrix<float>& mm) {
  return Snapshot{model.params.weights, model.params.biases, mm.rows};
}

void restore(nn::Model<float>& model, sensing::MeasurementMatrix<float>& mm,
             const Snapshot& snap) {
  model.params.weights = snap.weights;
  model.params.biases = snap.biases;
  model.params.bump();
  mm.rows = snap.phi;
  mm.bump();
}

struct LoopCfg {
  long iters = 0;
  int r = 0;
  uint64_t loop_tag = 0;
  const linalg::PinvState<float>* frozen_base = nullptr;  // stage 3 prefix
  bool phi_static = false;                                // operator never changes
};

linalg::PinvState<float> build_decoder(const sensing::MeasurementMatrix<float>& mm,
                                       const LoopCfg& lp) {
  if (lp.frozen_base) {
    linalg::PinvState<float> st = *lp.frozen_base;
    linalg::pinv_append_row(st, &mm.rows.data[static_cast<std::size_t>(lp.r - 1) * mm.n]);
    return st;
  }
  return sensing::prefix_decoder(mm, lp.r);
}

// Mean loss over the given blocks at prefix r, combined exactly across
// bounded chunks.
double eval_loss(const nn::Model<float>& model, const sensing::MeasurementMatrix<float>& mm,
                 const LoopCfg& lp, const DataView& data,
                 const std::vector<std::size_t>& idx, bool classifier) {
  auto dec = build_decoder(mm, lp);
  auto view = nn::SensingView<float>::bind(mm, dec);
  const int b = data.ds->b;
  double weighted = 0;
  std::size_t total = 0, done = 0;
  while (done < idx.size()) {
    const int chunk = static_cast<int>(std::min<std::size_t>(kEvalChunk, idx.size() - done));
    Tensor<float> batch = Tensor<float>::zeros({chunk, b, b});
    std::vector<int> labels(classifier ? chunk : 0);
    for (int i = 0; i < chunk; ++i) {
      const auto& blk = data.ds->blocks[idx[done + i]];
      std::copy(blk.data.begin(), blk.data.end(), batch.data.begin() + std::size_t(i) * b * b);
      if (classifier) labels[i] = data.ds->labels[idx[done + i]];
    }
    nn::Tape<float> tape;
    Tensor<float> out = nn::forward_pass(model, &view, batch, tape);
    if (classifier) {
      auto loss = nn::loss_cross_entropy(out, labels);
      weighted += loss.value * chunk;
      total += chunk;
    } else {
      auto loss = nn::loss_euclidean(out, batch);
      weighted += loss.value * out.numel();
      total += out.numel();
    }
    done += chunk;
  }
  return total == 0 ? 0.0 : weighted / static_cast<double>(total);
}

FitReport run_loop(nn::Model<float>& model, sensing::MeasurementMatrix<float>& mm,
                   const DataView& data, const TrainConfig& cfg, const LoopCfg& lp,
                   bool classifier) {
  FitReport rep;
  Rng rng(mix_seed(cfg.seed, lp.loop_tag));
  auto adam = nn::make_adam_state(model, &mm, lp.r, static_cast<float>(cfg.lr));

  Snapshot best_snap = capture(model, mm);
  const bool track_val = !data.val_idx.empty();
  auto validate = [&]() {
    if (!track_val) return;
    double v = eval_loss(model, mm, lp, data, data.val_idx, classifier);
    if (v < rep.best_val) {
      rep.best_val = v;
      best_snap = capture(model, mm);
    }
  };
  validate();

  linalg::PinvState<float> cached_dec;
  bool have_cached = false;
  const int b = data.ds->b;
  const std::size_t pool = data.train_idx.size();
  if (pool == 0) throw DataError("holdout left no training blocks");

  int consecutive_bad = 0;
  for (long step = 0; step < lp.iters; ++step) {
    // Batch indices are drawn before the step so a failed step still
    // advances the stream deterministically.
    std::vector<std::size_t> picks(static_cast<std::size_t>(cfg.batch_size));
    for (auto& p : picks) p = data.train_idx[rng.index(pool)];
    try {
      if (lp.phi_static) {
        if (!have_cached) {
          cached_dec = build_decoder(mm, lp);
          have_cached = true;
        }
      }
      linalg::PinvState<float> dec = lp.phi_static ? cached_dec : build_decoder(mm, lp);
      auto view = nn::SensingView<float>::bind(mm, dec);

      Tensor<float> batch = Tensor<float>::zeros({cfg.batch_size, b, b});
      std::vector<int> labels(classifier ? cfg.batch_size : 0);
      for (int i = 0; i < cfg.batch_size; ++i) {
        const auto& blk = data.ds->blocks[picks[i]];
        std::copy(blk.data.begin(), blk.data.end(), batch.data.begin() + std::size_t(i) * b * b);
        if (classifier) labels[i] = data.ds->labels[picks[i]];
      }

      nn::Tape<float> tape;
      Tensor<float> out = nn::forward_pass(model, &view, batch, tape);
      nn::LossResult<float> loss = classifier ? nn::loss_cross_entropy(out, labels)
                                              : nn::loss_euclidean(out, batch);
      if (!std::isfinite(loss.value)) throw NumericError("non-finite training loss");
      auto grads = nn::backward_pass(model, &view, tape, loss.grad);
      nn::adam_step(model, &mm, grads, adam);

      rep.loss_curve.push_back(loss.value);
      if (grads.phi_ridged) ++rep.ridge_events;
      ++rep.steps;
      consecutive_bad = 0;
      if ((step + 1) % kValEvery == 0) validate();
    } catch (const NumericError&) {
      rep.loss_curve.push_back(std::numeric_limits<double>::quiet_NaN());
      if (++consecutive_bad >= kDivergenceLimit) {
        restore(model, mm, best_snap);
        rep.diverged = true;
        break;
      }
    }
  }

  if (!rep.diverged) {
    try {
      validate();
      if (track_val) restore(model, mm, best_snap);
    } catch (const NumericError&) {  // parameters went non-finite on the last steps
      restore(model, mm, best_snap);
      rep.diverged = true;
    }
  }
  rep.rng_state = rng.serialize();
  return rep;
}

}  // namespace

StagedState train_vanilla(const data_io::BlockDataset& ds, const ModelSpec& spec, int m,
                          const TrainConfig& cfg, bool train_phi, FitReport* report) {
  validate_config(cfg);
  check_head_data(spec, ds);
  const int n = spec.b * spec.b;
  if (m < 1 || m > n)
    throw ConfigError("row budget " + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");

  StagedState state;
  state.stage = 0;
  state.spec = spec;
  // k_min = 1 so evaluation may probe truncations below the training rate.
  state.mm = sensing::gaussian_init<float>(n, m, 1, mix_seed(cfg.seed, kTagPhiInit));
  if (!train_phi) std::fill(state.mm.trainable_rows.begin(), state.mm.trainable_rows.end(), 0);
  Rng theta_rng(mix_seed(cfg.seed, kTagThetaInit));
  state.model = build_head(spec, state.mm, theta_rng);

  DataView data = make_holdout(ds, cfg);
  LoopCfg lp;
  lp.iters = cfg.max_iters_1;
  lp.r = m;
  lp.loop_tag = kTagLoopStage1;
  lp.phi_static = !train_phi;
  FitReport rep = run_loop(state.model, state.mm, data, cfg, lp,
                           spec.head == HeadKind::Classifier);
  state.rng_state = rep.rng_state;
  if (report) *report = std::move(rep);
  return state;
}

StagedState stage1_train(const data_io::BlockDataset& ds, const ModelSpec& spec,
                         const TrainConfig& cfg, FitReport* report) {
  StagedState state = train_vanilla(ds, spec, cfg.m_max, cfg, true, report);
  state.stage = 1;
  state.mm.k_min = cfg.k_min;
  state.phi_full = state.mm.rows;
  return state;
}

FitReport stage2_train(StagedState& state, const data_io::BlockDataset& ds,
                       const TrainConfig& cfg) {
  validate_config(cfg);
  check_head_data(state.spec, ds);
  if (state.stage != 1) throw ContractError("stage 2 needs a stage-1 state");
  if (state.phi_full.ndim() != 2 || state.phi_full.dim(0) != cfg.m_max)
    throw ContractError("stage-1 operator has wrong shape");

  const int n = state.mm.n;
  sensing::MeasurementMatrix<float> mm_k = state.mm;
  mm_k.m_max = cfg.k_min;
  mm_k.k_min = cfg.k_min;
  mm_k.rows = Tensor<float>::zeros({cfg.k_min, n});
  std::copy(state.phi_full.data.begin(),
            state.phi_full.data.begin() + static_cast<std::size_t>(cfg.k_min) * n,
            mm_k.rows.data.begin());
  mm_k.trainable_rows.assign(static_cast<std::size_t>(cfg.k_min), 1);
  mm_k.bump();

  freeze_theta(state.model);
  state.model.params.bump();

  DataView data = make_holdout(ds, cfg);
  LoopCfg lp;
  lp.iters = cfg.max_iters_2;
  lp.r = cfg.k_min;
  lp.loop_tag = kTagLoopStage2;
  FitReport rep = run_loop(state.model, mm_k, data, cfg, lp,
                           state.spec.head == HeadKind::Classifier);
  state.mm = std::move(mm_k);
  state.stage = 2;
  state.rng_state = rep.rng_state;
  return rep;
}

FitReport stage3_train(StagedState& state, const data_io::BlockDataset& ds,
                       const TrainConfig& cfg, bool* prefix_intact) {
  validate_config(cfg);
  check_head_data(state.spec, ds);
  if (state.stage != 2) throw ContractError("stage 3 needs a stage-2 state");
  if (state.phi_full.ndim() != 2 || state.phi_full.dim(0) != cfg.m_max)
    throw ContractError("stage-1 operator has wrong shape");
  if (state.mm.m_max != cfg.k_min) throw ContractError("stage-2 operator has wrong row count");

  const int n = state.mm.n;
  freeze_theta(state.model);
  state.model.params.bump();
  DataView data = make_holdout(ds, cfg);

  Tensor<float> acc = Tensor<float>::zeros({cfg.m_max, n});
  std::copy(state.mm.rows.data.begin(), state.mm.rows.data.end(), acc.data.begin());

  FitReport total;
  total.best_val = std::numeric_limits<double>::infinity();
  bool intact = true;

  linalg::PinvState<float> base = linalg::pinv_rows(state.mm.rows);
  for (int r = cfg.k_min + 1; r <= cfg.m_max; ++r) {
    sensing::MeasurementMatrix<float> mm_r = state.mm;
    mm_r.m_max = r;
    mm_r.k_min = cfg.k_min;
    mm_r.rows = Tensor<float>::zeros({r, n});
    std::copy(acc.data.begin(), acc.data.begin() + static_cast<std::size_t>(r - 1) * n,
              mm_r.rows.data.begin());
    std::copy(state.phi_full.data.begin() + static_cast<std::size_t>(r - 1) * n,
              state.phi_full.data.begin() + static_cast<std::size_t>(r) * n,
              mm_r.rows.data.begin() + static_cast<std::size_t>(r - 1) * n);
    mm_r.trainable_rows.assign(static_cast<std::size_t>(r), 0);
    mm_r.trainable_rows[static_cast<std::size_t>(r - 1)] = 1;
    mm_r.bump();

    std::vector<float> prefix_before(mm_r.rows.data.begin(),
                                     mm_r.rows.data.begin() +
                                         static_cast<std::size_t>(r - 1) * n);

    LoopCfg lp;
    lp.iters = cfg.iters_per_row;
    lp.r = r;
    lp.loop_tag = kTagRowBase + static_cast<uint64_t>(r);
    lp.frozen_base = &base;
    FitReport rep = run_loop(state.model, mm_r, data, cfg, lp,
                             state.spec.head == HeadKind::Classifier);

    if (std::memcmp(prefix_before.data(), mm_r.rows.data.data(),
                    prefix_before.size() * sizeof(float)) != 0)
      intact = false;

    std::copy(mm_r.rows.data.begin() + static_cast<std::size_t>(r - 1) * n,
              mm_r.rows.data.end(), acc.data.begin() + static_cast<std::size_t>(r - 1) * n);
    linalg::pinv_append_row(base, &acc.data[static_cast<std::size_t>(r - 1) * n]);

    total.loss_curve.insert(total.loss_curve.end(), rep.loss_curve.begin(), rep.loss_curve.end());
    total.steps += rep.steps;
    total.ridge_events += rep.ridge_events;
    total.diverged = total.diverged || rep.diverged;
    total.best_val = std::min(total.best_val, rep.best_val);
    total.rng_state = rep.rng_state;
  }

  state.mm.m_max = cfg.m_max;
  state.mm.k_min = cfg.k_min;
  state.mm.rows = std::move(acc);
  state.mm.trainable_rows.assign(static_cast<std::size_t>(cfg.m_max), 1);
  state.mm.bump();
  state.stage = 3;
  state.rng_state = total.rng_state;
  if (prefix_intact) *prefix_intact = intact;
  return total;
}

RateAdaptiveResult run_rate_adaptive(const data_io::BlockDataset& ds, const ModelSpec& spec,
                                     const TrainConfig& cfg) {
  RateAdaptiveResult out;
  out.state = stage1_train(ds, spec, cfg, &out.fit1);
  out.phi_stage1 = out.state.mm.rows;
  std::vector<Tensor<float>> theta_w = out.state.model.params.weights;
  std::vector<Tensor<float>> theta_b = out.state.model.params.biases;

  out.fit2 = stage2_train(out.state, ds, cfg);
  out.phi_stage2 = out.state.mm.rows;
  out.fit3 = stage3_train(out.state, ds, cfg, &out.prefix_intact);

  out.theta_intact = true;
  for (std::size_t i = 0; i < theta_w.size(); ++i) {
    if (!bitwise_equal(theta_w[i], out.state.model.params.weights[i])) out.theta_intact = false;
    if (!bitwise_equal(theta_b[i], out.state.model.params.biases[i])) out.theta_intact = false;
  }
  out.total_steps = out.fit1.steps + out.fit2.steps + out.fit3.steps;
  out.diverged = out.fit1.diverged || out.fit2.diverged || out.fit3.diverged;
  return out;
}

}  // namespace racs::training
