#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdl/network.hpp"
#include "kdl/tensor.hpp"

namespace kdl {

// Min-max-normalized saliency grid: values in [0,1]; a constant raw map
// normalizes to all zeros.
struct Heatmap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
};

// Pixel rectangle, x_max/y_max exclusive.
struct BBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  long long area() const {
    return static_cast<long long>(x_max - x_min) *
           static_cast<long long>(y_max - y_min);
  }
  void validate(int width = 0, int height = 0) const;
};

struct Component {
  BBox box;
  std::size_t pixel_count = 0;
  std::vector<std::size_t> pixels;  // flat indices, scan order
};

// Bilinear resize with corner-aligned sampling. Shared by Grad-CAM upsampling
// and image preprocessing.
std::vector<double> bilinear_resize(const std::vector<double>& src,
                                    std::size_t sh, std::size_t sw,
                                    std::size_t dh, std::size_t dw);

// Min-max normalize in place; constant input becomes all zeros.
void minmax_normalize(std::vector<double>& values);

// Grad-CAM for one image (C,H,W or 1,C,H,W): channel weights are the spatial
// mean of d logit / d feature map; raw map is ReLU of the weighted channel
// sum, upsampled to image resolution and normalized.
Heatmap gradcam(NetworkState& net, const Tensor& image, int target_class,
                std::size_t conv_layer);

// Default target layer: the last Conv2D in the spec.
std::size_t last_conv_layer(const NetworkSpec& spec);

BinaryMask threshold_mask(const Heatmap& h, double tau);

// 8-connectivity labeling, components in scan order of their first pixel.
std::vector<Component> connected_components(const BinaryMask& mask);

// Algorithm: threshold, label, keep components whose bounding-box area
// exceeds min_area.
std::vector<BBox> boxes_from_heatmap(const Heatmap& h, double tau,
                                     double min_area);

// Nearest-rank percentile of ground-truth box areas.
double min_area_from_annotations(const std::vector<BBox>& gt_boxes,
                                 double percentile = 0.0);

// HMAP file: magic "HMAP", u16 version, u32 height, u32 width, row-major
// little-endian f32 values.
void save_heatmap(const Heatmap& h, const std::string& path);
Heatmap load_heatmap(const std::string& path);

}  // namespace kdl
