#include "racs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <locale>
#include <mutex>
#include <sstream>
#include <thread>

#include "racs/errors.hpp"

namespace racs::evaluation {

namespace {

constexpr int kEvalChunk = 64;  // blocks per forward pass, bounds activation memory

int block_side(const sensing::MeasurementMatrix<float>& mm) {
  int b = static_cast<int>(std::lround(std::sqrt(static_cast<double>(mm.n))));
  if (b * b != mm.n)
    throw DimensionError("operator signal size " + std::to_string(mm.n) +
                         " is not a square block");
  return b;
}

// Runs the model over blocks in bounded chunks with a freshly bound view.
template <class Consume>
void forward_blocks(const nn::Model<float>& model, const sensing::MeasurementMatrix<float>& mm,
                    const std::vector<Tensor<float>>& blocks, int r, Consume&& consume) {
  const int b = block_side(mm);
  auto dec = sensing::prefix_decoder(mm, r);
  auto view = nn::SensingView<float>::bind(mm, dec);
  std::size_t done = 0;
  while (done < blocks.size()) {
    const int chunk = static_cast<int>(std::min<std::size_t>(kEvalChunk, blocks.size() - done));
    Tensor<float> batch = Tensor<float>::zeros({chunk, b, b});
    for (int i = 0; i < chunk; ++i) {
      const Tensor<float>& blk = blocks[done + i];
      if (blk.ndim() != 2 || blk.dim(0) != b || blk.dim(1) != b)
        throw DimensionError("block shape " + shape_str(blk.shape) + " does not match operator");
      std::copy(blk.data.begin(), blk.data.end(), batch.data.begin() + std::size_t(i) * b * b);
    }
    nn::Tape<float> tape;
    Tensor<float> out = nn::forward_pass(model, &view, batch, tape);
    consume(done, chunk, out);
    done += chunk;
  }
}

}  // namespace

double psnr(const data_io::GrayImage& reference, const data_io::GrayImage& estimate) {
  if (reference.height != estimate.height || reference.width != estimate.width)
    throw DimensionError("psnr shape mismatch: " + std::to_string(reference.height) + "x" +
                         std::to_string(reference.width) + " vs " +
                         std::to_string(estimate.height) + "x" + std::to_string(estimate.width));
  double mse = 0;
  for (std::size_t i = 0; i < reference.pixels.size(); ++i) {
    double ref = 255.0 * reference.pixels[i];
    double est = 255.0 * std::clamp(estimate.pixels[i], 0.0f, 1.0f);
    mse += (ref - est) * (ref - est);
  }
  mse /= static_cast<double>(reference.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<Tensor<float>> reconstruct_blocks(const nn::Model<float>& model,
                                              const sensing::MeasurementMatrix<float>& mm,
                                              const std::vector<Tensor<float>>& blocks, int r) {
  const int b = block_side(mm);
  std::vector<Tensor<float>> out(blocks.size());
  forward_blocks(model, mm, blocks, r,
                 [&](std::size_t base, int chunk, const Tensor<float>& res) {
                   if (res.ndim() != 3 || res.dim(1) != b || res.dim(2) != b)
                     throw DimensionError("head output shape " + shape_str(res.shape) +
                                          " is not a block batch");
                   for (int i = 0; i < chunk; ++i) {
                     Tensor<float> blk = Tensor<float>::zeros({b, b});
                     std::copy(res.data.begin() + std::size_t(i) * b * b,
                               res.data.begin() + std::size_t(i + 1) * b * b, blk.data.begin());
                     out[base + i] = std::move(blk);
                   }
                 });
  return out;
}

std::vector<int> classify_blocks(const nn::Model<float>& model,
                                 const sensing::MeasurementMatrix<float>& mm,
                                 const std::vector<Tensor<float>>& blocks, int r) {
  std::vector<int> out(blocks.size(), -1);
  forward_blocks(model, mm, blocks, r,
                 [&](std::size_t base, int chunk, const Tensor<float>& res) {
                   if (res.ndim() != 2)
                     throw DimensionError("logit output shape " + shape_str(res.shape));
                   const int classes = res.dim(1);
                   for (int i = 0; i < chunk; ++i) {
                     int best = 0;
                     for (int c = 1; c < classes; ++c)
                       if (res.at(i, c) > res.at(i, best)) best = c;
                     out[base + i] = best;
                   }
                 });
  return out;
}

data_io::GrayImage reconstruct_image(const nn::Model<float>& model,
                                     const sensing::MeasurementMatrix<float>& mm,
                                     const data_io::GrayImage& image, int r) {
  const int b = block_side(mm);
  auto [ds, info] = data_io::extract_blocks(image, b);
  auto rec = reconstruct_blocks(model, mm, ds.blocks, r);
  return data_io::assemble_image(rec, info);
}

double classify_accuracy(const nn::Model<float>& model,
                         const sensing::MeasurementMatrix<float>& mm,
                         const data_io::BlockDataset& labeled, int r) {
  if (labeled.blocks.empty()) throw DataError("empty evaluation set");
  if (!labeled.labeled() || labeled.labels.size() != labeled.blocks.size())
    throw DataError("evaluation set has no aligned labels");
  auto pred = classify_blocks(model, mm, labeled.blocks, r);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labeled.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

namespace {

void check_r_list(const std::vector<int>& r_list) {
  if (r_list.empty()) throw ConfigError("empty sweep rate list");
  for (std::size_t i = 1; i < r_list.size(); ++i)
    if (r_list[i] <= r_list[i - 1])
      throw ConfigError("sweep rates must be strictly increasing");
}

// Fills records[i] for every i in [0, n) using up to thread_budget() workers;
// worker k takes indices k, k+budget, ... so the output layout is fixed.
template <class Fn>
void parallel_for_index(std::size_t n, Fn&& fn) {
  const int budget = std::max(1, std::min<int>(thread_budget(), static_cast<int>(n)));
  if (budget == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int k = 0; k < budget; ++k) {
    pool.emplace_back([&, k]() {
      try {
        for (std::size_t i = static_cast<std::size_t>(k); i < n; i += budget) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

SweepReport sweep_rates(const nn::Model<float>& model,
                        const sensing::MeasurementMatrix<float>& mm,
                        const std::vector<data_io::GrayImage>& images,
                        const std::vector<int>& r_list) {
  check_r_list(r_list);
  if (images.empty()) throw DataError("empty evaluation set");
  SweepReport report;
  report.records.resize(r_list.size());
  parallel_for_index(r_list.size(), [&](std::size_t idx) {
    const int r = r_list[idx];
    SweepRecord rec;
    rec.r = r;
    rec.mr = static_cast<double>(r) / mm.n;
    rec.per_item.resize(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      auto est = reconstruct_image(model, mm, images[i], r);
      rec.per_item[i] = psnr(images[i], est);
    }
    double sum = 0;
    for (double v : rec.per_item) sum += v;
    rec.mean_metric = sum / static_cast<double>(rec.per_item.size());
    report.records[idx] = std::move(rec);
  });
  return report;
}

SweepReport sweep_rates_classify(const nn::Model<float>& model,
                                 const sensing::MeasurementMatrix<float>& mm,
                                 const data_io::BlockDataset& labeled,
                                 const std::vector<int>& r_list) {
  check_r_list(r_list);
  if (labeled.blocks.empty()) throw DataError("empty evaluation set");
  if (!labeled.labeled()) throw DataError("evaluation set has no labels");
  SweepReport report;
  report.records.resize(r_list.size());
  parallel_for_index(r_list.size(), [&](std::size_t idx) {
    const int r = r_list[idx];
    SweepRecord rec;
    rec.r = r;
    rec.mr = static_cast<double>(r) / mm.n;
    auto pred = classify_blocks(model, mm, labeled.blocks, r);
    rec.per_item.resize(pred.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bool ok = pred[i] == labeled.labels[i];
      rec.per_item[i] = ok ? 1.0 : 0.0;
      if (ok) ++hits;
    }
    rec.mean_metric = static_cast<double>(hits) / static_cast<double>(pred.size());
    report.records[idx] = std::move(rec);
  });
  return report;
}

std::string format_g6(double v) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss.precision(6);
  ss << v;
  return ss.str();
}

void write_csv(const SweepReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "r,mr,mean_metric,n_items\n";
  for (const auto& rec : report.records)
    out << rec.r << "," << format_g6(rec.mr) << "," << format_g6(rec.mean_metric) << ","
        << rec.per_item.size() << "\n";
  if (!out) throw DataError("write failed for '" + path + "'");
}

void export_phi_images(const sensing::MeasurementMatrix<float>& mm, const std::string& dir) {
  const int b = block_side(mm);
  std::filesystem::create_directories(dir);
  for (int i = 0; i < mm.m_max; ++i) {
    data_io::GrayImage img = data_io::make_image(b, b);
    float lo = mm.rows.at(i, 0), hi = lo;
    for (int j = 0; j < mm.n; ++j) {
      lo = std::min(lo, mm.rows.at(i, j));
      hi = std::max(hi, mm.rows.at(i, j));
    }
    const float span = hi - lo;
    for (int j = 0; j < mm.n; ++j)
      img.pixels[j] = span > 0 ? (mm.rows.at(i, j) - lo) / span : 0.5f;
    char name[32];
    std::snprintf(name, sizeof(name), "phi_row_%04d.pgm", i);
    data_io::save_pgm(img, (std::filesystem::path(dir) / name).string());
  }
}

int thread_budget() {
  if (const char* env = std::getenv("RACS_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace racs::evaluation
