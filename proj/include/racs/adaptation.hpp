#pragma once
// Dynamic measurement-rate controllers and a frame-by-frame stream simulator.
//
// A controller decides how many operator rows the next frame is sensed with.
// The linear schedule is signal-independent; the frame-difference rule reacts
// to scene motion; the confidence rule follows an externally supplied score.

#include <string>
#include <variant>
#include <vector>

#include "racs/data_io.hpp"
#include "racs/nn.hpp"
#include "racs/sensing.hpp"

namespace racs::adaptation {

struct Bounds {
  int k_min = 1;
  int m_max = 1;
};

struct LinearPolicy {
  int r_start = 1;
  int r_end = 1;
  long total_frames = 1;
};

struct FrameDiffPolicy {
  double alpha = 0.15;   // motion below this -> fewer rows
  double beta = 0.3;     // motion above this -> more rows
  int delta_rows = 3;
};

struct ConfidencePolicy {
  double gamma = 0.3;    // score below this -> more rows
  int delta_rows = 3;
};

struct AdaptationPolicy {
  std::variant<LinearPolicy, FrameDiffPolicy, ConfidencePolicy> rule;
  Bounds bounds;
};

void validate_policy(const AdaptationPolicy& policy);

struct AdaptationState {
  int current_r = 1;
  long frame_index = 0;
  data_io::GrayImage last_frame;  // previous basis frame (frame-difference rule)
};

// Rate for frame 0, before any signal exists: the schedule's own start for
// the linear rule, the top of the range for the reactive rules.
AdaptationState initial_state(const AdaptationPolicy& policy);

// Advances the controller by one frame. `signal` is ignored by the linear
// rule, carries the normalized frame difference in [0, inf] for the
// frame-difference rule, and a confidence score in [0, 1] for the confidence
// rule. Pure: identical inputs give identical outputs.
AdaptationState next_rate(const AdaptationPolicy& policy, AdaptationState state,
                          double signal = 0.0);

// ||current - previous||_2 / ||previous||_2 over pixels; 0/0 counts as no
// motion, x/0 as unbounded motion.
double normalized_frame_diff(const data_io::GrayImage& current,
                             const data_io::GrayImage& previous);

struct TraceRow {
  long frame = 0;
  int r = 0;
  double mr = 0;
  double psnr = 0;
};

struct StreamOptions {
  bool ground_truth_diff = false;    // drive the frame-difference rule from
                                     // source frames instead of reconstructions
  std::vector<double> confidence;    // per-frame scores, confidence rule only
};

struct StreamResult {
  std::vector<TraceRow> trace;
  double avg_mr = 0;
};

// Senses each frame at the controller's pre-update rate, reconstructs it,
// records PSNR against the source frame, then lets the controller pick the
// rate for the next frame.
StreamResult simulate_stream(const std::vector<data_io::GrayImage>& frames,
                             const AdaptationPolicy& policy, const nn::Model<float>& model,
                             const sensing::MeasurementMatrix<float>& mm,
                             const StreamOptions& opt = {});

void write_trace_csv(const StreamResult& result, const std::string& path);

// PGM frames under `dir`, ordered by file name.
std::vector<data_io::GrayImage> load_frame_dir(const std::string& dir);

// Single-column CSV of scores; a leading non-numeric line is taken as a header.
std::vector<double> load_confidence_csv(const std::string& path);

}  // namespace racs::adaptation
