#pragma once
// Three-stage rate-adaptive training, the single-rate baseline, freeze
// management, and binary checkpointing.
//
// Stage RNG streams are derived from cfg.seed per stage (and per appended
// row), so a run resumed from a stage-boundary checkpoint reproduces an
// uninterrupted run bit for bit.

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "racs/data_io.hpp"
#include "racs/nn.hpp"
#include "racs/rng.hpp"
#include "racs/sensing.hpp"
#include "racs/tensor.hpp"

namespace racs::training {

struct TrainConfig {
  int k_min = 1;
  int m_max = 1;
  long max_iters_1 = 0;
  long max_iters_2 = 0;
  long iters_per_row = 0;
  double lr = 1e-4;
  int batch_size = 32;
  uint64_t seed = 0;
};

void validate_config(const TrainConfig& cfg);

inline long total_planned_steps(const TrainConfig& cfg) {
  return cfg.max_iters_1 + cfg.max_iters_2 +
         cfg.iters_per_row * static_cast<long>(cfg.m_max - cfg.k_min);
}

enum class HeadKind : uint8_t { Reconnet = 0, Autoencoder = 1, Classifier = 2 };

const char* head_name(HeadKind head);
HeadKind head_from_name(const std::string& name);

struct ModelSpec {
  HeadKind head = HeadKind::Autoencoder;
  int b = 16;
  int num_classes = 0;  // classifier only
};

nn::Model<float> build_head(const ModelSpec& spec, const sensing::MeasurementMatrix<float>& mm,
                            Rng& rng);

// Outcome of one optimization loop.
struct FitReport {
  std::vector<double> loss_curve;  // training loss per attempted step
  long steps = 0;                  // optimizer steps actually applied
  bool diverged = false;
  long ridge_events = 0;           // dependent-row fallbacks seen in the tied decoder
  double best_val = std::numeric_limits<double>::infinity();
  std::string rng_state;           // loop RNG at exit
};

// Carrier for a training run's parameters between stages and checkpoints.
struct StagedState {
  int stage = 0;  // 0 single-rate, 1..3 staged
  ModelSpec spec;
  sensing::MeasurementMatrix<float> mm;  // stage 2 holds the k_min-row prefix
  Tensor<float> phi_full;                // stage-1 matrix kept for row inits; empty when unused
  nn::Model<float> model;
  std::string rng_state;
};

// Joint optimization of the operator (m rows) and the head at one rate.
// train_phi=false freezes the operator at its Gaussian draw.
StagedState train_vanilla(const data_io::BlockDataset& ds, const ModelSpec& spec, int m,
                          const TrainConfig& cfg, bool train_phi = true,
                          FitReport* report = nullptr);

// Stage 1 == train_vanilla at m_max (same seed, bit for bit).
StagedState stage1_train(const data_io::BlockDataset& ds, const ModelSpec& spec,
                         const TrainConfig& cfg, FitReport* report = nullptr);

// Freezes the head, truncates to the first k_min rows, trains only those.
FitReport stage2_train(StagedState& state, const data_io::BlockDataset& ds,
                       const TrainConfig& cfg);

// Appends one row at a time, training only the newcomer against the tied
// decoder of the current prefix. prefix_intact (when given) reports whether
// rows 1..r-1 stayed bitwise constant during every row's window.
FitReport stage3_train(StagedState& state, const data_io::BlockDataset& ds,
                       const TrainConfig& cfg, bool* prefix_intact = nullptr);

struct RateAdaptiveResult {
  StagedState state;  // final: stage 3, full operator, stage-1 head
  Tensor<float> phi_stage1;
  Tensor<float> phi_stage2;
  FitReport fit1, fit2, fit3;
  long total_steps = 0;
  bool theta_intact = true;
  bool prefix_intact = true;
  bool diverged = false;
};

RateAdaptiveResult run_rate_adaptive(const data_io::BlockDataset& ds, const ModelSpec& spec,
                                     const TrainConfig& cfg);

// --- checkpointing ---

uint32_t crc32(const void* data, std::size_t len);

struct Checkpoint {
  uint8_t version = 1;
  uint8_t stage = 0;
  uint8_t phi_frozen = 0;
  ModelSpec spec;
  int n = 0, m_max = 0, k_min = 0;
  TrainConfig cfg;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const StagedState& state, const TrainConfig& cfg);
StagedState restore_state(const Checkpoint& ckpt);

void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace racs::training
