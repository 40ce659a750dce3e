#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqw/rng.hpp"
#include "sqw/train.hpp"

namespace sqw {

// Synthetic segmentation set: grayscale images of textured elliptical blobs
// on a noisy background, per-pixel 0/1 masks. A hard sample has smaller
// blobs and lower contrast.
struct SegParams {
  int image_size = 32;
  int count = 200;
  double hard_fraction = 0.3;
  double noise = 0.05;
  double easy_contrast = 0.30;
  double hard_contrast = 0.12;
};

Dataset generate_seg(const SegParams& p, uint64_t seed);

// Synthetic shape classification set: one of 8 glyphs (filled square, disk,
// triangle, plus, ring, horizontal bar, vertical bar, X) with position and
// size jitter under additive Gaussian noise.
struct ClsParams {
  int image_size = 16;
  int num_classes = 8;
  int count = 8000;
  double noise = 0.25;
  int max_shift = 2;
};

Dataset generate_cls(const ClsParams& p, uint64_t seed);

// Synthetic frame-labeled sequences: each frame is drawn from one of C
// class-conditional Gaussian emitters; labels change in runs.
struct AsrParams {
  int num_classes = 8;
  int seq_len = 20;
  int feat_dim = 12;
  int count = 600;
  double class_sep = 1.2;
  double noise = 1.0;
  int min_run = 3;
  int max_run = 8;
};

Dataset generate_asr(const AsrParams& p, uint64_t seed);

// IDX files (big-endian header): magic 0x00000803 for u8 image stacks,
// 0x00000801 for u8 label vectors. Pixels map to [0,1] floats.
Tensor read_idx_images(const std::string& path);
std::vector<int32_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const Tensor& images01);
void write_idx_labels(const std::string& path, const std::vector<int32_t>& labels);
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// Row-wise dataset surgery used by splits and the suggestion loop.
Dataset subset(const Dataset& ds, const std::vector<int64_t>& idx);
void append_samples(Dataset& dst, const Dataset& src, const std::vector<int64_t>& idx);

}  // namespace sqw
