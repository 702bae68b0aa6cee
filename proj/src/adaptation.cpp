#include "racs/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "racs/errors.hpp"
#include "racs/evaluation.hpp"

namespace racs::adaptation {

namespace {

int clamp_rate(int r, const Bounds& b) { return std::clamp(r, b.k_min, b.m_max); }

int linear_rate(const LinearPolicy& lin, long t) {
  if (lin.total_frames <= 1) return lin.r_start;
  const long last = lin.total_frames - 1;
  t = std::clamp(t, 0L, last);
  const double value =
      lin.r_start + (lin.r_end - lin.r_start) * (static_cast<double>(t) / last);
  return static_cast<int>(std::lround(value));
}

}  // namespace

void validate_policy(const AdaptationPolicy& policy) {
  const Bounds& b = policy.bounds;
  if (b.k_min < 1 || b.k_min > b.m_max)
    throw ConfigError("need 1 <= k_min <= m_max, got k_min=" + std::to_string(b.k_min) +
                      " m_max=" + std::to_string(b.m_max));
  if (const auto* lin = std::get_if<LinearPolicy>(&policy.rule)) {
    if (lin->total_frames < 1) throw ConfigError("linear schedule needs at least one frame");
  } else if (const auto* fd = std::get_if<FrameDiffPolicy>(&policy.rule)) {
    if (!std::isfinite(fd->alpha) || !std::isfinite(fd->beta) || !(fd->alpha < fd->beta))
      throw ConfigError("frame-difference thresholds need alpha < beta");
    if (fd->alpha < 0) throw ConfigError("frame-difference thresholds must be non-negative");
    if (fd->delta_rows < 1) throw ConfigError("rate step must be at least one row");
  } else {
    const auto& conf = std::get<ConfidencePolicy>(policy.rule);
    if (!std::isfinite(conf.gamma)) throw ConfigError("confidence threshold must be finite");
    if (conf.delta_rows < 1) throw ConfigError("rate step must be at least one row");
  }
}

AdaptationState initial_state(const AdaptationPolicy& policy) {
  validate_policy(policy);
  AdaptationState state;
  if (const auto* lin = std::get_if<LinearPolicy>(&policy.rule))
    state.current_r = clamp_rate(linear_rate(*lin, 0), policy.bounds);
  else
    state.current_r = policy.bounds.m_max;
  return state;
}

AdaptationState next_rate(const AdaptationPolicy& policy, AdaptationState state, double signal) {
  state.frame_index += 1;
  if (const auto* lin = std::get_if<LinearPolicy>(&policy.rule)) {
    state.current_r = clamp_rate(linear_rate(*lin, state.frame_index), policy.bounds);
    return state;
  }
  if (const auto* fd = std::get_if<FrameDiffPolicy>(&policy.rule)) {
    if (std::isnan(signal) || signal < 0)
      throw DataError("frame difference must be non-negative");
    if (signal < fd->alpha)
      state.current_r -= fd->delta_rows;
    else if (signal > fd->beta)
      state.current_r += fd->delta_rows;
  } else {
    const auto& conf = std::get<ConfidencePolicy>(policy.rule);
    if (std::isnan(signal) || signal < 0 || signal > 1)
      throw DataError("confidence must lie in [0, 1]");
    if (signal < conf.gamma)
      state.current_r += conf.delta_rows;
    else
      state.current_r -= conf.delta_rows;
  }
  state.current_r = clamp_rate(state.current_r, policy.bounds);
  return state;
}

double normalized_frame_diff(const data_io::GrayImage& current,
                             const data_io::GrayImage& previous) {
  if (current.height != previous.height || current.width != previous.width)
    throw DimensionError("frame size changed mid-stream");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < current.pixels.size(); ++i) {
    const double d = static_cast<double>(current.pixels[i]) - previous.pixels[i];
    num += d * d;
    den += static_cast<double>(previous.pixels[i]) * previous.pixels[i];
  }
  if (den == 0) return num == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num) / std::sqrt(den);
}

StreamResult simulate_stream(const std::vector<data_io::GrayImage>& frames,
                             const AdaptationPolicy& policy, const nn::Model<float>& model,
                             const sensing::MeasurementMatrix<float>& mm,
                             const StreamOptions& opt) {
  validate_policy(policy);
  if (frames.empty()) throw DataError("need at least one frame");
  if (policy.bounds.k_min < mm.k_min || policy.bounds.m_max > mm.m_max)
    throw ConfigError("policy rates [" + std::to_string(policy.bounds.k_min) + ", " +
                      std::to_string(policy.bounds.m_max) + "] exceed the operator's range [" +
                      std::to_string(mm.k_min) + ", " + std::to_string(mm.m_max) + "]");
  const bool confidence_driven = std::holds_alternative<ConfidencePolicy>(policy.rule);
  if (confidence_driven && opt.confidence.size() != frames.size())
    throw DataError("confidence sequence has " + std::to_string(opt.confidence.size()) +
                    " entries for " + std::to_string(frames.size()) + " frames");
  const bool diff_driven = std::holds_alternative<FrameDiffPolicy>(policy.rule);

  StreamResult out;
  out.trace.reserve(frames.size());
  AdaptationState state = initial_state(policy);
  double mr_sum = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const int r = state.current_r;
    data_io::GrayImage recon = evaluation::reconstruct_image(model, mm, frames[t], r);
    TraceRow row;
    row.frame = static_cast<long>(t);
    row.r = r;
    row.mr = static_cast<double>(r) / mm.n;
    row.psnr = evaluation::psnr(frames[t], recon);
    out.trace.push_back(row);
    mr_sum += row.mr;

    if (diff_driven) {
      const data_io::GrayImage& basis = opt.ground_truth_diff ? frames[t] : recon;
      if (state.last_frame.pixels.empty())
        state.frame_index += 1;  // no previous frame yet, keep the rate
      else
        state = next_rate(policy, state, normalized_frame_diff(basis, state.last_frame));
      state.last_frame = basis;
    } else if (confidence_driven) {
      state = next_rate(policy, state, opt.confidence[t]);
    } else {
      state = next_rate(policy, state);
    }
  }
  out.avg_mr = mr_sum / static_cast<double>(frames.size());
  return out;
}

void write_trace_csv(const StreamResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "frame,r,mr,psnr\n";
  for (const TraceRow& row : result.trace)
    out << row.frame << ',' << row.r << ',' << evaluation::format_g6(row.mr) << ','
        << evaluation::format_g6(row.psnr) << '\n';
  out.flush();
  if (!out.good()) throw DataError("cannot write '" + path + "'");
}

std::vector<data_io::GrayImage> load_frame_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("'" + dir + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (paths.empty()) throw DataError("no PGM frames under '" + dir + "'");
  std::vector<data_io::GrayImage> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) frames.push_back(data_io::load_pgm(p.string()));
  return frames;
}

std::vector<double> load_confidence_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<double> values;
  std::string line;
  long line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const std::string token = line.substr(start);
    std::size_t used = 0;
    double v = 0;
    bool ok = true;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      ok = false;
    }
    if (ok && used != token.size()) ok = false;
    if (!ok) {
      if (first_content) {  // header row
        first_content = false;
        continue;
      }
      throw DataError("bad confidence value at line " + std::to_string(line_no) + " of '" +
                      path + "'");
    }
    first_content = false;
    values.push_back(v);
  }
  return values;
}

}  // namespace racs::adaptation
