#include "racs/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "racs/errors.hpp"
#include "racs/rng.hpp"

namespace racs::data_io {

GrayImage make_image(int height, int width, float fill) {
  if (height < 1 || width < 1)
    throw DimensionError("image dimensions must be positive, got " + std::to_string(height) +
                         "x" + std::to_string(width));
  GrayImage img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width, fill);
  return img;
}

namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_header_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (start == pos) throw DataError("truncated PGM header");
  return buf.substr(start, pos - start);
}

int header_int(const std::string& buf, std::size_t& pos, const char* what) {
  std::string tok = next_header_token(buf, pos);
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("bad PGM ") + what + ": '" + tok + "'");
  }
}

}  // namespace

GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = 0;
  std::string magic = next_header_token(buf, pos);
  if (magic != "P5") throw DataError("unsupported PGM magic '" + magic + "' (binary P5 only)");
  int w = header_int(buf, pos, "width");
  int h = header_int(buf, pos, "height");
  int maxval = header_int(buf, pos, "maxval");
  if (w < 1 || h < 1) throw DataError("bad PGM dimensions " + std::to_string(w) + "x" + std::to_string(h));
  if (maxval < 1 || maxval > 255)
    throw DataError("unsupported PGM maxval " + std::to_string(maxval));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw DataError("malformed PGM header");
  ++pos;  // single whitespace before the raster

  const std::size_t need = static_cast<std::size_t>(w) * h;
  if (buf.size() - pos < need)
    throw DataError("truncated PGM payload in '" + path + "': need " + std::to_string(need) +
                    " bytes, have " + std::to_string(buf.size() - pos));
  GrayImage img = make_image(h, w);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(buf[pos + i])) * inv;
  return img;
}

void save_pgm(const GrayImage& image, const std::string& path) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * image.width)
    throw DimensionError("malformed image for PGM write");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

int fold_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

std::pair<BlockDataset, PadInfo> extract_blocks(const GrayImage& image, int b) {
  if (b < 1) throw DimensionError("block side must be positive, got " + std::to_string(b));
  if (image.height < 1 || image.width < 1) throw DimensionError("empty image");
  PadInfo info;
  info.orig_h = image.height;
  info.orig_w = image.width;
  info.b = b;
  info.blocks_y = (image.height + b - 1) / b;
  info.blocks_x = (image.width + b - 1) / b;
  info.padded_h = info.blocks_y * b;
  info.padded_w = info.blocks_x * b;

  BlockDataset ds;
  ds.b = b;
  ds.blocks.reserve(static_cast<std::size_t>(info.blocks_y) * info.blocks_x);
  for (int by = 0; by < info.blocks_y; ++by) {
    for (int bx = 0; bx < info.blocks_x; ++bx) {
      Tensor<float> blk = Tensor<float>::zeros({b, b});
      for (int i = 0; i < b; ++i) {
        int src_i = fold_index(by * b + i, image.height);
        for (int j = 0; j < b; ++j) {
          int src_j = fold_index(bx * b + j, image.width);
          blk.at(i, j) = image.at(src_i, src_j);
        }
      }
      ds.blocks.push_back(std::move(blk));
    }
  }
  return {std::move(ds), info};
}

GrayImage assemble_image(const std::vector<Tensor<float>>& blocks, const PadInfo& info) {
  const std::size_t expect = static_cast<std::size_t>(info.blocks_y) * info.blocks_x;
  if (blocks.size() != expect)
    throw DimensionError("assemble expects " + std::to_string(expect) + " blocks, got " +
                         std::to_string(blocks.size()));
  GrayImage out = make_image(info.orig_h, info.orig_w);
  for (int by = 0; by < info.blocks_y; ++by) {
    for (int bx = 0; bx < info.blocks_x; ++bx) {
      const Tensor<float>& blk = blocks[static_cast<std::size_t>(by) * info.blocks_x + bx];
      if (blk.ndim() != 2 || blk.dim(0) != info.b || blk.dim(1) != info.b)
        throw DimensionError("assemble block has shape " + shape_str(blk.shape) + ", want " +
                             std::to_string(info.b) + "x" + std::to_string(info.b));
      for (int i = 0; i < info.b; ++i) {
        int dst_i = by * info.b + i;
        if (dst_i >= info.orig_h) break;
        for (int j = 0; j < info.b; ++j) {
          int dst_j = bx * info.b + j;
          if (dst_j >= info.orig_w) break;
          out.at(dst_i, dst_j) = blk.at(i, j);
        }
      }
    }
  }
  return out;
}

BlockDataset extract_training_blocks(const GrayImage& image, int b, int stride) {
  if (b < 1 || stride < 1)
    throw DimensionError("block side and stride must be positive");
  BlockDataset ds;
  ds.b = b;
  for (int y = 0; y + b <= image.height; y += stride) {
    for (int x = 0; x + b <= image.width; x += stride) {
      Tensor<float> blk = Tensor<float>::zeros({b, b});
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) blk.at(i, j) = image.at(y + i, x + j);
      ds.blocks.push_back(std::move(blk));
    }
  }
  return ds;
}

namespace {

// Separable orthonormal DCT-II along both axes; direction +1 forward, -1
// inverse (DCT-III).
void dct2_impl(const float* in, float* out, int b, int direction) {
  std::vector<double> cosv(static_cast<std::size_t>(b) * b);
  for (int k = 0; k < b; ++k)
    for (int i = 0; i < b; ++i)
      cosv[static_cast<std::size_t>(k) * b + i] =
          std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * b));
  const double s0 = std::sqrt(1.0 / b), sk = std::sqrt(2.0 / b);

  std::vector<double> tmp(static_cast<std::size_t>(b) * b);
  auto pass = [&](const double* src, double* dst, bool rows) {
    for (int outer = 0; outer < b; ++outer) {
      for (int k = 0; k < b; ++k) {
        double acc = 0;
        if (direction > 0) {
          for (int i = 0; i < b; ++i) {
            double v = rows ? src[outer * b + i] : src[i * b + outer];
            acc += v * cosv[static_cast<std::size_t>(k) * b + i];
          }
          acc *= (k == 0 ? s0 : sk);
        } else {
          for (int i = 0; i < b; ++i) {
            double v = rows ? src[outer * b + i] : src[i * b + outer];
            acc += v * (i == 0 ? s0 : sk) * cosv[static_cast<std::size_t>(i) * b + k];
          }
        }
        if (rows)
          dst[outer * b + k] = acc;
        else
          dst[k * b + outer] = acc;
      }
    }
  };

  std::vector<double> work(static_cast<std::size_t>(b) * b);
  for (std::size_t i = 0; i < work.size(); ++i) work[i] = in[i];
  pass(work.data(), tmp.data(), true);
  pass(tmp.data(), work.data(), false);
  for (std::size_t i = 0; i < work.size(); ++i) out[i] = static_cast<float>(work[i]);
}

void draw_shape(Tensor<float>& blk, int label, Rng& rng) {
  const int b = blk.dim(0);
  const float bg = 0.05f + 0.15f * static_cast<float>(rng.uniform());
  const float fg = 0.70f + 0.25f * static_cast<float>(rng.uniform());
  blk.fill(bg);
  auto ri = [&](int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(rng.index(static_cast<uint64_t>(hi - lo + 1)));
  };
  switch (label) {
    case 0: {  // filled rectangle
      int hgt = ri(b / 4, b / 2), wid = ri(b / 4, b / 2);
      int y0 = ri(1, b - hgt - 1), x0 = ri(1, b - wid - 1);
      for (int i = y0; i < y0 + hgt; ++i)
        for (int j = x0; j < x0 + wid; ++j) blk.at(i, j) = fg;
      break;
    }
    case 1: {  // filled disc
      int rad = ri(b / 6, b / 3);
      int cy = ri(rad + 1, b - rad - 2), cx = ri(rad + 1, b - rad - 2);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j)
          if ((i - cy) * (i - cy) + (j - cx) * (j - cx) <= rad * rad) blk.at(i, j) = fg;
      break;
    }
    case 2: {  // ring
      int rad = ri(b / 4, b / 3);
      int inner = std::max(1, (rad * 11) / 20);
      int cy = ri(rad + 1, b - rad - 2), cx = ri(rad + 1, b - rad - 2);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
          int d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
          if (d2 <= rad * rad && d2 >= inner * inner) blk.at(i, j) = fg;
        }
      break;
    }
    default: {  // cross
      int wid = std::max(2, ri(b / 8, b / 6));
      int cy = ri(b / 3, (2 * b) / 3), cx = ri(b / 3, (2 * b) / 3);
      int half = wid / 2;
      int arm = ri(b / 3, (b - 2) / 2);
      for (int i = std::max(0, cy - arm); i <= std::min(b - 1, cy + arm); ++i)
        for (int j = std::max(0, cx - half); j <= std::min(b - 1, cx - half + wid - 1); ++j)
          blk.at(i, j) = fg;
      for (int j = std::max(0, cx - arm); j <= std::min(b - 1, cx + arm); ++j)
        for (int i = std::max(0, cy - half); i <= std::min(b - 1, cy - half + wid - 1); ++i)
          blk.at(i, j) = fg;
      break;
    }
  }
  for (auto& v : blk.data) {
    v += 0.02f * static_cast<float>(rng.uniform() - 0.5);
    v = std::clamp(v, 0.0f, 1.0f);
  }
}

}  // namespace

void dct2(const float* in, float* out, int b) { dct2_impl(in, out, b, +1); }
void idct2(const float* in, float* out, int b) { dct2_impl(in, out, b, -1); }

BlockDataset synth_dataset(const std::string& kind, int count, int b, uint64_t seed) {
  if (count < 0) throw DimensionError("negative sample count");
  if (b < 1) throw DimensionError("block side must be positive");
  BlockDataset ds;
  ds.b = b;
  if (kind == "dct-lowpass") {
    Rng rng(mix_seed(seed, 0xD1));
    const int band = std::max(1, b / 4);
    std::vector<float> coeff(static_cast<std::size_t>(b) * b);
    std::vector<float> raw(coeff.size());
    for (int s = 0; s < count; ++s) {
      std::fill(coeff.begin(), coeff.end(), 0.0f);
      for (int u = 0; u < band; ++u)
        for (int v = 0; v < band; ++v)
          coeff[static_cast<std::size_t>(u) * b + v] =
              static_cast<float>(rng.gaussian() / (1.0 + u + v));
      idct2(coeff.data(), raw.data(), b);
      float lo = raw[0], hi = raw[0];
      for (float v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      Tensor<float> blk = Tensor<float>::zeros({b, b});
      if (hi - lo < 1e-9f) {
        blk.fill(0.5f);
      } else {
        const float inv = 1.0f / (hi - lo);
        for (std::size_t i = 0; i < raw.size(); ++i) blk.data[i] = (raw[i] - lo) * inv;
      }
      ds.blocks.push_back(std::move(blk));
    }
  } else if (kind == "shapes") {
    if (b < 8) throw DimensionError("shapes generator needs block side >= 8");
    Rng rng(mix_seed(seed, 0x51));
    for (int s = 0; s < count; ++s) {
      int label = static_cast<int>(rng.index(kShapeClasses));
      Tensor<float> blk = Tensor<float>::zeros({b, b});
      draw_shape(blk, label, rng);
      ds.blocks.push_back(std::move(blk));
      ds.labels.push_back(label);
    }
  } else {
    throw ConfigError("unknown synthetic dataset kind '" + kind + "'");
  }
  return ds;
}

SplitResult split(const BlockDataset& ds, double f_train, double f_val, double f_test,
                  uint64_t seed) {
  if (f_train < 0 || f_val < 0 || f_test < 0 || std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const std::size_t n = ds.blocks.size();
  if (ds.labeled() && ds.labels.size() != n)
    throw DimensionError("labels do not align with blocks");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5B));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.index(i)]);

  const std::size_t n_train = static_cast<std::size_t>(f_train * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(f_val * static_cast<double>(n));
  SplitResult out;
  auto emit = [&](BlockDataset& dst, std::size_t lo, std::size_t hi, const char* tag) {
    dst.b = ds.b;
    dst.split = tag;
    for (std::size_t i = lo; i < hi; ++i) {
      dst.blocks.push_back(ds.blocks[order[i]]);
      if (ds.labeled()) dst.labels.push_back(ds.labels[order[i]]);
    }
  };
  emit(out.train, 0, n_train, "train");
  emit(out.val, n_train, n_train + n_val, "val");
  emit(out.test, n_train + n_val, n, "test");
  return out;
}

GrayImage block_to_image(const Tensor<float>& block) {
  if (block.ndim() != 2) throw DimensionError("expected a 2-d block");
  GrayImage img = make_image(block.dim(0), block.dim(1));
  img.pixels = block.data;
  return img;
}

Tensor<float> image_to_block(const GrayImage& image) {
  Tensor<float> t = Tensor<float>::zeros({image.height, image.width});
  t.data = image.pixels;
  return t;
}

}  // namespace racs::data_io
