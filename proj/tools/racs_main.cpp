#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "racs/adaptation.hpp"
#include "racs/config.hpp"
#include "racs/data_io.hpp"
#include "racs/errors.hpp"
#include "racs/evaluation.hpp"
#include "racs/rng.hpp"
#include "racs/training.hpp"

namespace fs = std::filesystem;

using racs::config::Mode;
using racs::config::RunConfig;
using racs::training::HeadKind;

namespace {

constexpr uint64_t kTagTrainData = 0x7D0;
constexpr uint64_t kTagTestData = 0x7E5;

// Every flag in one bag; unset optionals defer to the config file.
struct Overrides {
  std::optional<std::string> config, head, mode, out, checkpoint, data_kind, data_dir, policy,
      frames, confidence;
  std::optional<int> k_min, m_max, batch_size, train_count, test_count, block, classes, r_min,
      r_max, r_eval, delta, r_start, r_end;
  std::optional<long> max_iters_1, max_iters_2, iters_per_row;
  std::optional<double> lr, alpha, beta, gamma;
  std::optional<uint64_t> seed;
  bool ground_truth_diff = false;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI config file");
  cmd->add_option("--head", o.head, "model head: reconnet | autoencoder | classifier");
  cmd->add_option("--mode", o.mode, "training mode: vanilla | rate-adaptive | gaussian-fixed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file to read");
  cmd->add_option("--k-min", o.k_min, "smallest usable operator prefix");
  cmd->add_option("--m-max", o.m_max, "operator row budget");
  cmd->add_option("--max-iters-1", o.max_iters_1, "joint-training steps");
  cmd->add_option("--max-iters-2", o.max_iters_2, "prefix-retraining steps");
  cmd->add_option("--iters-per-row", o.iters_per_row, "steps per appended row");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--batch-size", o.batch_size, "minibatch size");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--data-kind", o.data_kind, "dataset: dct-lowpass | shapes | dir");
  cmd->add_option("--data-dir", o.data_dir, "PGM directory for dataset kind 'dir'");
  cmd->add_option("--train-count", o.train_count, "synthetic training blocks");
  cmd->add_option("--test-count", o.test_count, "synthetic test blocks");
  cmd->add_option("--block", o.block, "block side");
  cmd->add_option("--classes", o.classes, "class count (classifier)");
  cmd->add_option("--r-min", o.r_min, "sweep start rate");
  cmd->add_option("--r-max", o.r_max, "sweep end rate");
  cmd->add_option("--r", o.r_eval, "evaluation rate");
  cmd->add_option("--policy", o.policy, "adaptation rule: linear | framediff | confidence");
  cmd->add_option("--alpha", o.alpha, "frame-difference lower threshold");
  cmd->add_option("--beta", o.beta, "frame-difference upper threshold");
  cmd->add_option("--gamma", o.gamma, "confidence threshold");
  cmd->add_option("--delta", o.delta, "rate step in rows");
  cmd->add_option("--r-start", o.r_start, "linear schedule start rate");
  cmd->add_option("--r-end", o.r_end, "linear schedule end rate");
  cmd->add_option("--frames", o.frames, "directory of PGM frames");
  cmd->add_option("--confidence", o.confidence, "CSV of per-frame confidence scores");
  cmd->add_flag("--ground-truth-diff", o.ground_truth_diff,
                "drive the frame-difference rule from source frames");
}

RunConfig assemble(const Overrides& o) {
  RunConfig cfg;
  if (o.config) cfg = racs::config::load_run_config(racs::config::parse_ini(*o.config));
  if (o.head) cfg.head = racs::training::head_from_name(*o.head);
  if (o.mode) cfg.mode = racs::config::mode_from_name(*o.mode);
  if (o.out) cfg.out_dir = *o.out;
  if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
  if (o.k_min) cfg.train.k_min = *o.k_min;
  if (o.m_max) cfg.train.m_max = *o.m_max;
  if (o.max_iters_1) cfg.train.max_iters_1 = *o.max_iters_1;
  if (o.max_iters_2) cfg.train.max_iters_2 = *o.max_iters_2;
  if (o.iters_per_row) cfg.train.iters_per_row = *o.iters_per_row;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.data_kind) cfg.data_kind = *o.data_kind;
  if (o.data_dir) cfg.data_dir = *o.data_dir;
  if (o.train_count) cfg.train_count = *o.train_count;
  if (o.test_count) cfg.test_count = *o.test_count;
  if (o.block) cfg.block = *o.block;
  if (o.classes) cfg.classes = *o.classes;
  if (o.r_min) cfg.r_min = *o.r_min;
  if (o.r_max) cfg.r_max = *o.r_max;
  if (o.r_eval) cfg.r_eval = *o.r_eval;
  if (o.policy) cfg.adapt.policy = *o.policy;
  if (o.alpha) cfg.adapt.alpha = *o.alpha;
  if (o.beta) cfg.adapt.beta = *o.beta;
  if (o.gamma) cfg.adapt.gamma = *o.gamma;
  if (o.delta) cfg.adapt.delta = *o.delta;
  if (o.r_start) cfg.adapt.r_start = *o.r_start;
  if (o.r_end) cfg.adapt.r_end = *o.r_end;
  if (o.frames) cfg.adapt.frames = *o.frames;
  if (o.confidence) cfg.adapt.confidence = *o.confidence;
  if (o.ground_truth_diff) cfg.adapt.ground_truth_diff = true;
  racs::config::validate_run_config(cfg);
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw racs::ConfigError(std::string(what) + " not set");
  if (!fs::is_regular_file(path))
    throw racs::ConfigError(std::string(what) + " '" + path + "' does not exist");
}

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw racs::ConfigError(std::string(what) + " not set");
  if (!fs::is_directory(path))
    throw racs::ConfigError(std::string(what) + " '" + path + "' does not exist");
}

racs::data_io::BlockDataset blocks_from_dir(const RunConfig& cfg) {
  require_dir(cfg.data_dir, "data directory");
  auto frames = racs::adaptation::load_frame_dir(cfg.data_dir);
  racs::data_io::BlockDataset all;
  all.b = cfg.block;
  for (const auto& image : frames) {
    auto [ds, pad] = racs::data_io::extract_blocks(image, cfg.block);
    for (auto& blk : ds.blocks) all.blocks.push_back(std::move(blk));
  }
  return all;
}

racs::data_io::BlockDataset train_dataset(const RunConfig& cfg) {
  if (cfg.data_kind == "dir") return blocks_from_dir(cfg);
  return racs::data_io::synth_dataset(cfg.data_kind, cfg.train_count, cfg.block,
                                      racs::mix_seed(cfg.train.seed, kTagTrainData));
}

racs::data_io::BlockDataset test_dataset(const RunConfig& cfg) {
  if (cfg.data_kind == "dir")
    throw racs::ConfigError("directory datasets carry no held-out test set; use synthetic data");
  return racs::data_io::synth_dataset(cfg.data_kind, cfg.test_count, cfg.block,
                                      racs::mix_seed(cfg.train.seed, kTagTestData));
}

void append_curve(std::vector<std::pair<int, double>>& log, int stage,
                  const racs::training::FitReport& rep) {
  for (double loss : rep.loss_curve) log.emplace_back(stage, loss);
}

void write_train_log(const std::string& path, const std::vector<std::pair<int, double>>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw racs::DataError("cannot open '" + path + "' for writing");
  out << "iter,stage,loss\n";
  for (std::size_t i = 0; i < log.size(); ++i)
    out << i << ',' << log[i].first << ',' << racs::evaluation::format_g6(log[i].second)
        << '\n';
  if (!out.good()) throw racs::DataError("cannot write '" + path + "'");
}

racs::training::StagedState load_state(const RunConfig& cfg) {
  require_file(cfg.checkpoint, "checkpoint");
  return racs::training::restore_state(racs::training::checkpoint_load(cfg.checkpoint));
}

void cmd_train(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto spec = racs::config::model_spec(cfg);
  const auto ds = train_dataset(cfg);
  const auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };
  std::vector<std::pair<int, double>> log;

  if (cfg.mode == Mode::RateAdaptive) {
    racs::training::FitReport rep1;
    auto state = racs::training::stage1_train(ds, spec, cfg.train, &rep1);
    append_curve(log, 1, rep1);
    racs::training::checkpoint_save(path("stage1.racs"),
                                    racs::training::make_checkpoint(state, cfg.train));
    std::cerr << "[racs] stage 1 done: " << rep1.steps << " steps\n";

    auto rep2 = racs::training::stage2_train(state, ds, cfg.train);
    append_curve(log, 2, rep2);
    racs::training::checkpoint_save(path("stage2.racs"),
                                    racs::training::make_checkpoint(state, cfg.train));
    std::cerr << "[racs] stage 2 done: " << rep2.steps << " steps\n";

    auto rep3 = racs::training::stage3_train(state, ds, cfg.train);
    append_curve(log, 3, rep3);
    racs::training::checkpoint_save(path("final.racs"),
                                    racs::training::make_checkpoint(state, cfg.train));
    std::cerr << "[racs] stage 3 done: " << rep3.steps << " steps\n";
  } else {
    racs::training::FitReport rep;
    auto state = racs::training::train_vanilla(ds, spec, cfg.train.m_max, cfg.train,
                                               cfg.mode == Mode::Vanilla, &rep);
    append_curve(log, 1, rep);
    racs::training::checkpoint_save(path("final.racs"),
                                    racs::training::make_checkpoint(state, cfg.train));
    std::cerr << "[racs] training done: " << rep.steps << " steps\n";
  }
  write_train_log(path("train_log.csv"), log);
  std::cerr << "[racs] artifacts under " << cfg.out_dir << "\n";
}

std::vector<int> sweep_range(const RunConfig& cfg, const racs::training::StagedState& state) {
  const int lo = cfg.r_min > 0 ? cfg.r_min : state.mm.k_min;
  const int hi = cfg.r_max > 0 ? cfg.r_max : state.mm.m_max;
  if (lo < state.mm.k_min || hi > state.mm.m_max || lo > hi)
    throw racs::ConfigError("sweep range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                            "] outside the operator's [" + std::to_string(state.mm.k_min) +
                            ", " + std::to_string(state.mm.m_max) + "]");
  std::vector<int> r_list(static_cast<std::size_t>(hi - lo + 1));
  std::iota(r_list.begin(), r_list.end(), lo);
  return r_list;
}

void cmd_sweep(const RunConfig& cfg) {
  auto state = load_state(cfg);
  const auto r_list = sweep_range(cfg, state);
  fs::create_directories(cfg.out_dir);
  const std::string out = (fs::path(cfg.out_dir) / "sweep.csv").string();

  racs::evaluation::SweepReport report;
  if (state.spec.head == HeadKind::Classifier) {
    report = racs::evaluation::sweep_rates_classify(state.model, state.mm, test_dataset(cfg),
                                                    r_list);
  } else if (cfg.data_kind == "dir") {
    require_dir(cfg.data_dir, "data directory");
    report = racs::evaluation::sweep_rates(state.model, state.mm,
                                           racs::adaptation::load_frame_dir(cfg.data_dir),
                                           r_list);
  } else {
    const auto ds = test_dataset(cfg);
    std::vector<racs::data_io::GrayImage> images;
    images.reserve(ds.blocks.size());
    for (const auto& blk : ds.blocks) images.push_back(racs::data_io::block_to_image(blk));
    report = racs::evaluation::sweep_rates(state.model, state.mm, images, r_list);
  }
  racs::evaluation::write_csv(report, out);
  std::cerr << "[racs] wrote " << out << " (" << report.records.size() << " rates)\n";
}

void cmd_classify(const RunConfig& cfg) {
  auto state = load_state(cfg);
  if (state.spec.head != HeadKind::Classifier)
    throw racs::ConfigError("checkpoint does not hold a classifier");
  const int r = cfg.r_eval > 0 ? cfg.r_eval : state.mm.k_min;
  if (r < state.mm.k_min || r > state.mm.m_max)
    throw racs::ConfigError("rate " + std::to_string(r) + " outside the operator's range");
  fs::create_directories(cfg.out_dir);

  const auto report =
      racs::evaluation::sweep_rates_classify(state.model, state.mm, test_dataset(cfg), {r});
  racs::evaluation::write_csv(report, (fs::path(cfg.out_dir) / "classify.csv").string());
  std::cout << "r=" << r << " accuracy="
            << racs::evaluation::format_g6(report.records.front().mean_metric) << "\n";
}

void cmd_adapt_sim(const RunConfig& cfg) {
  auto state = load_state(cfg);
  require_dir(cfg.adapt.frames, "frame directory");
  const auto frames = racs::adaptation::load_frame_dir(cfg.adapt.frames);

  racs::adaptation::AdaptationPolicy policy;
  policy.bounds = {state.mm.k_min, state.mm.m_max};
  racs::adaptation::StreamOptions opt;
  opt.ground_truth_diff = cfg.adapt.ground_truth_diff;
  if (cfg.adapt.policy == "linear") {
    racs::adaptation::LinearPolicy lin;
    lin.r_start = cfg.adapt.r_start > 0 ? cfg.adapt.r_start : state.mm.m_max;
    lin.r_end = cfg.adapt.r_end > 0 ? cfg.adapt.r_end : state.mm.k_min;
    lin.total_frames = static_cast<long>(frames.size());
    policy.rule = lin;
  } else if (cfg.adapt.policy == "framediff") {
    policy.rule = racs::adaptation::FrameDiffPolicy{cfg.adapt.alpha, cfg.adapt.beta,
                                                    cfg.adapt.delta};
  } else {
    policy.rule = racs::adaptation::ConfidencePolicy{cfg.adapt.gamma, cfg.adapt.delta};
    require_file(cfg.adapt.confidence, "confidence file");
    opt.confidence = racs::adaptation::load_confidence_csv(cfg.adapt.confidence);
  }

  const auto result = racs::adaptation::simulate_stream(frames, policy, state.model, state.mm,
                                                        opt);
  fs::create_directories(cfg.out_dir);
  const std::string out = (fs::path(cfg.out_dir) / "trace.csv").string();
  racs::adaptation::write_trace_csv(result, out);
  std::cout << "avg_mr=" << racs::evaluation::format_g6(result.avg_mr) << "\n";
  std::cerr << "[racs] wrote " << out << " (" << result.trace.size() << " frames)\n";
}

void cmd_export_phi(const RunConfig& cfg) {
  auto state = load_state(cfg);
  fs::create_directories(cfg.out_dir);
  racs::evaluation::export_phi_images(state.mm, cfg.out_dir);
  std::cerr << "[racs] wrote " << state.mm.m_max << " row images under " << cfg.out_dir << "\n";
}

template <typename F>
int guarded(F&& body) {
  try {
    body();
    return 0;
  } catch (const racs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const racs::DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const racs::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rate-adaptive compressive sensing toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "train a model and write checkpoints");
  auto* sweep = app.add_subcommand("sweep", "evaluate a checkpoint across rates");
  auto* classify = app.add_subcommand("classify", "score a classifier checkpoint at one rate");
  auto* adapt = app.add_subcommand("adapt-sim", "simulate a rate controller over frames");
  auto* export_phi = app.add_subcommand("export-phi", "write operator rows as PGM images");
  for (auto* cmd : {train, sweep, classify, adapt, export_phi}) add_flags(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  return guarded([&] {
    const RunConfig cfg = assemble(o);
    if (train->parsed()) cmd_train(cfg);
    else if (sweep->parsed()) cmd_sweep(cfg);
    else if (classify->parsed()) cmd_classify(cfg);
    else if (adapt->parsed()) cmd_adapt_sim(cfg);
    else cmd_export_phi(cfg);
  });
}
