#pragma once
// Grayscale image ingestion (binary PGM), block extraction/assembly with
// reflect padding, dataset splitting, and synthetic block generators for
// small self-contained experiments.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "racs/tensor.hpp"

namespace racs::data_io {

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, [0,1]

  float& at(int i, int j) { return pixels[static_cast<std::size_t>(i) * width + j]; }
  float at(int i, int j) const { return pixels[static_cast<std::size_t>(i) * width + j]; }
};

GrayImage make_image(int height, int width, float fill = 0.0f);

struct PadInfo {
  int orig_h = 0, orig_w = 0;
  int padded_h = 0, padded_w = 0;
  int b = 0;
  int blocks_y = 0, blocks_x = 0;
};

struct BlockDataset {
  int b = 0;
  std::vector<Tensor<float>> blocks;
  std::vector<int> labels;  // empty, or one per block
  std::string split;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return blocks.size(); }
};

// Binary (P5) PGM with maxval up to 255; pixels come back scaled by 1/maxval.
GrayImage load_pgm(const std::string& path);
// Writes maxval-255 P5 output; values are clamped to [0,1] and rounded.
void save_pgm(const GrayImage& image, const std::string& path);

// Symmetric boundary index: reflects out-of-range coordinates back into
// [0, n), folding as many times as needed.
int fold_index(int i, int n);

// Reflect-pads up to the next multiple of b and cuts non-overlapping b x b
// blocks in row-major order. assemble_image undoes it exactly.
std::pair<BlockDataset, PadInfo> extract_blocks(const GrayImage& image, int b);
GrayImage assemble_image(const std::vector<Tensor<float>>& blocks, const PadInfo& info);

// Strided crops for corpus building: no padding, remainders dropped.
BlockDataset extract_training_blocks(const GrayImage& image, int b, int stride);

// Orthonormal 2-d DCT-II of a b x b block and its inverse.
void dct2(const float* in, float* out, int b);
void idct2(const float* in, float* out, int b);

// kind "dct-lowpass": random blocks whose spectrum lives in the lowest
// b/4 x b/4 frequencies. kind "shapes": labeled 4-class geometric figures.
BlockDataset synth_dataset(const std::string& kind, int count, int b, uint64_t seed);

inline constexpr int kShapeClasses = 4;

struct SplitResult {
  BlockDataset train, val, test;
};

// Seeded shuffle, then floor/floor/remainder sizing.
SplitResult split(const BlockDataset& ds, double f_train, double f_val, double f_test,
                  uint64_t seed);

GrayImage block_to_image(const Tensor<float>& block);
Tensor<float> image_to_block(const GrayImage& image);

}  // namespace racs::data_io
