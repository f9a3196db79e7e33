#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdl/localization.hpp"
#include "kdl/tensor.hpp"

namespace kdl {

// Synthetic shortcut-learning benchmark: grayscale images with "lesion"
// blobs (ground-truth boxes recorded) and an optional corner token whose
// label correlation is controlled per split.
struct SyntheticSpec {
  int height = 32, width = 32;
  // lesion blob
  double blob_intensity_min = 0.6, blob_intensity_max = 1.0;
  int blob_radius_min = 3, blob_radius_max = 6;
  int blob_count_min = 1, blob_count_max = 2;
  // shortcut token (corner rectangle)
  int token_h = 4, token_w = 6;
  double token_intensity = 1.0;
  // probability a positive image carries the token, per split
  double p_train = 0.95, p_test = 0.5;
  double positive_fraction = 0.5;
  int n_train = 400, n_test = 200;
  double noise = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

struct Sample {
  Tensor image;  // (1, H, W), values in [0,1]
  bool positive = false;
  bool has_token = false;
  std::vector<BBox> gt_boxes;  // tight extents of painted blob pixels
  std::string id;
};

struct Dataset {
  std::vector<Sample> train, test;
};

Dataset generate_dataset(const SyntheticSpec& spec);

// Bilinear resize to out_side, center crop to crop_side, then (x-mean)/std.
Tensor preprocess(const Tensor& image, int out_side, int crop_side,
                  double mean, double stddev);

// Reduced augmentation policy: seeded pick of {identity, horizontal flip,
// +/-10% brightness, +/-2px translation}.
Tensor augment(const Tensor& image, std::uint64_t seed);

// individual transforms behind augment()
Tensor flip_horizontal(const Tensor& image);
Tensor adjust_brightness(const Tensor& image, double factor);  // clamped to [0,1]
Tensor translate(const Tensor& image, int dy, int dx);         // zero fill

// binary PGM (P5, 8-bit), values scaled from [0,1]
void save_pgm(const Tensor& image, const std::string& path);
Tensor load_pgm(const std::string& path);

}  // namespace kdl
