#pragma once
// PSNR/accuracy metrics, block-wise full-image reconstruction, measurement
// rate sweeps with optional worker threads, and CSV/PGM report emission.

#include <string>
#include <vector>

#include "racs/data_io.hpp"
#include "racs/nn.hpp"
#include "racs/sensing.hpp"

namespace racs::evaluation {

// 10*log10(255^2 / MSE) after mapping [0,1] pixels to [0,255]; the estimate
// is clamped into range first. Identical images give +infinity.
double psnr(const data_io::GrayImage& reference, const data_io::GrayImage& estimate);

// Runs the head over every padded block of the image at prefix r and
// reassembles to the original size.
data_io::GrayImage reconstruct_image(const nn::Model<float>& model,
                                     const sensing::MeasurementMatrix<float>& mm,
                                     const data_io::GrayImage& image, int r);

// Batched block helpers; the decoder/view pair is rebuilt per call.
std::vector<Tensor<float>> reconstruct_blocks(const nn::Model<float>& model,
                                              const sensing::MeasurementMatrix<float>& mm,
                                              const std::vector<Tensor<float>>& blocks, int r);
std::vector<int> classify_blocks(const nn::Model<float>& model,
                                 const sensing::MeasurementMatrix<float>& mm,
                                 const std::vector<Tensor<float>>& blocks, int r);

double classify_accuracy(const nn::Model<float>& model,
                         const sensing::MeasurementMatrix<float>& mm,
                         const data_io::BlockDataset& labeled, int r);

struct SweepRecord {
  int r = 0;
  double mr = 0;
  double mean_metric = 0;
  std::vector<double> per_item;
};

struct SweepReport {
  std::string model_id;
  std::string dataset_id;
  std::vector<SweepRecord> records;
};

// Mean per-image PSNR at each prefix in r_list (strictly increasing).
SweepReport sweep_rates(const nn::Model<float>& model,
                        const sensing::MeasurementMatrix<float>& mm,
                        const std::vector<data_io::GrayImage>& images,
                        const std::vector<int>& r_list);

// Classification accuracy variant over a labeled block set.
SweepReport sweep_rates_classify(const nn::Model<float>& model,
                                 const sensing::MeasurementMatrix<float>& mm,
                                 const data_io::BlockDataset& labeled,
                                 const std::vector<int>& r_list);

// Header `r,mr,mean_metric,n_items`, '.' decimal separator, LF endings.
void write_csv(const SweepReport& report, const std::string& path);

// One min-max normalized PGM per row of the operator, named by row index.
void export_phi_images(const sensing::MeasurementMatrix<float>& mm, const std::string& dir);

// Six significant digits, locale-independent.
std::string format_g6(double v);

// RACS_THREADS when set (>= 1), else hardware concurrency.
int thread_budget();

}  // namespace racs::evaluation
