#pragma once
// INI-style configuration for the command-line tool: flat `key = value`
// sections mirroring the library's knobs, with every value overridable by a
// command-line flag.

#include <cstdint>
#include <map>
#include <string>

#include "racs/training.hpp"

namespace racs::config {

// section -> key -> raw value
using IniDoc = std::map<std::string, std::map<std::string, std::string>>;

IniDoc parse_ini_text(const std::string& text);
IniDoc parse_ini(const std::string& path);

enum class Mode : uint8_t { Vanilla = 0, RateAdaptive = 1, GaussianFixed = 2 };

const char* mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

// Stream-simulation settings ([adapt] section). Zero r_start/r_end mean "use
// the operator's own range".
struct AdaptPlan {
  std::string policy = "framediff";  // linear | framediff | confidence
  double alpha = 0.15;
  double beta = 0.3;
  double gamma = 0.3;
  int delta = 3;
  int r_start = 0;
  int r_end = 0;
  std::string frames;      // directory of PGM frames
  std::string confidence;  // single-column CSV of scores
  bool ground_truth_diff = false;
};

struct RunConfig {
  training::TrainConfig train;
  training::HeadKind head = training::HeadKind::Autoencoder;
  Mode mode = Mode::RateAdaptive;
  std::string out_dir = ".";

  std::string checkpoint;  // input model for sweep/classify/adapt-sim/export-phi
  int r_min = 0;           // sweep range; 0 = operator default
  int r_max = 0;
  int r_eval = 0;          // classify rate; 0 = operator floor

  std::string data_kind = "dct-lowpass";  // dct-lowpass | shapes | dir
  std::string data_dir;                   // PGM directory when kind = dir
  int train_count = 200;
  int test_count = 50;
  int block = 16;
  int classes = 4;

  AdaptPlan adapt;
};

// Fills a RunConfig from a parsed document. Unknown sections or keys and
// malformed values are rejected.
RunConfig load_run_config(const IniDoc& doc);

// Consistency checks that need no filesystem access.
void validate_run_config(const RunConfig& cfg);

training::ModelSpec model_spec(const RunConfig& cfg);

}  // namespace racs::config
