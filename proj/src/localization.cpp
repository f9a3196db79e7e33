#include "kdl/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>

namespace kdl {

void BBox::validate(int width, int height) const {
  if (x_min < 0 || y_min < 0 || x_min >= x_max || y_min >= y_max)
    throw ValidationError("degenerate bounding box");
  if (width > 0 && x_max > width)
    throw ValidationError("bounding box exceeds image width");
  if (height > 0 && y_max > height)
    throw ValidationError("bounding box exceeds image height");
}

std::vector<double> bilinear_resize(const std::vector<double>& src,
                                    std::size_t sh, std::size_t sw,
                                    std::size_t dh, std::size_t dw) {
  if (src.size() != sh * sw) throw ValidationError("resize: bad source size");
  if (dh == 0 || dw == 0) throw ValidationError("resize: bad target size");
  std::vector<double> dst(dh * dw);
  double sy = dh > 1 ? static_cast<double>(sh - 1) / (dh - 1) : 0.0;
  double sx = dw > 1 ? static_cast<double>(sw - 1) / (dw - 1) : 0.0;
  for (std::size_t y = 0; y < dh; ++y) {
    double fy = y * sy;
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, sh - 1);
    double wy = fy - y0;
    for (std::size_t x = 0; x < dw; ++x) {
      double fx = x * sx;
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, sw - 1);
      double wx = fx - x0;
      double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

void minmax_normalize(std::vector<double>& values) {
  if (values.empty()) return;
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo <= 0.0) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  double inv = 1.0 / (hi - lo);
  for (double& v : values) v = (v - lo) * inv;
}

std::size_t last_conv_layer(const NetworkSpec& spec) {
  auto convs = spec.conv_layers();
  if (convs.empty()) throw ValidationError("network has no conv layer");
  return convs.back();
}

Heatmap gradcam(NetworkState& net, const Tensor& image, int target_class,
                std::size_t conv_layer) {
  if (conv_layer >= net.spec.layers.size() ||
      net.spec.layers[conv_layer].kind != LayerKind::Conv2D)
    throw ValidationError("gradcam target is not a Conv2D layer");
  if (target_class < 0 || target_class >= net.spec.num_classes)
    throw ValidationError("gradcam target class out of range");

  Tensor batch = image;
  if (batch.shape.size() == 3)
    batch.shape = {1, image.shape[0], image.shape[1], image.shape[2]};
  if (batch.shape.size() != 4 || batch.shape[0] != 1)
    throw ValidationError("gradcam expects a single image");

  forward(net, batch);
  Tensor dlogits({1, static_cast<std::size_t>(net.spec.num_classes)}, 0.0);
  dlogits.at2(0, target_class) = 1.0;
  BackpropResult bp = backprop_from_logit_grad(net, dlogits);

  auto convs = net.spec.conv_layers();
  std::size_t conv_idx =
      std::find(convs.begin(), convs.end(), conv_layer) - convs.begin();
  const Tensor& acts = net.cache.outputs[conv_layer];   // (1, K, h, w)
  const Tensor& grads = bp.feature_grads[conv_idx];     // same shape

  std::size_t K = acts.shape[1], h = acts.shape[2], w = acts.shape[3];
  std::vector<double> raw(h * w, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double weight = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) weight += grads.at4(0, k, y, x);
    weight /= static_cast<double>(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        raw[y * w + x] += weight * acts.at4(0, k, y, x);
  }
  for (double& v : raw) v = v > 0.0 ? v : 0.0;

  Heatmap out;
  out.height = batch.shape[2];
  out.width = batch.shape[3];
  out.values = bilinear_resize(raw, h, w, out.height, out.width);
  minmax_normalize(out.values);
  return out;
}

BinaryMask threshold_mask(const Heatmap& h, double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw ValidationError("threshold must lie in [0,1]");
  BinaryMask m;
  m.height = h.height;
  m.width = h.width;
  m.bits.resize(h.values.size());
  for (std::size_t i = 0; i < h.values.size(); ++i)
    m.bits[i] = h.values[i] > tau ? 1 : 0;  // strict
  return m;
}

std::vector<Component> connected_components(const BinaryMask& mask) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  const int H = static_cast<int>(mask.height), W = static_cast<int>(mask.width);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::size_t start = static_cast<std::size_t>(y) * W + x;
      if (!mask.bits[start] || seen[start]) continue;
      Component comp;
      comp.box = {x, y, x + 1, y + 1};
      std::deque<std::size_t> queue{start};
      seen[start] = 1;
      while (!queue.empty()) {
        std::size_t p = queue.front();
        queue.pop_front();
        comp.pixels.push_back(p);
        int py = static_cast<int>(p) / W, px = static_cast<int>(p) % W;
        comp.box.x_min = std::min(comp.box.x_min, px);
        comp.box.x_max = std::max(comp.box.x_max, px + 1);
        comp.box.y_min = std::min(comp.box.y_min, py);
        comp.box.y_max = std::max(comp.box.y_max, py + 1);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            int ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            std::size_t q = static_cast<std::size_t>(ny) * W + nx;
            if (mask.bits[q] && !seen[q]) {
              seen[q] = 1;
              queue.push_back(q);
            }
          }
      }
      comp.pixel_count = comp.pixels.size();
      std::sort(comp.pixels.begin(), comp.pixels.end());
      out.push_back(std::move(comp));
    }
  return out;
}

std::vector<BBox> boxes_from_heatmap(const Heatmap& h, double tau,
                                     double min_area) {
  if (min_area < 0.0) throw ValidationError("min_area must be >= 0");
  auto comps = connected_components(threshold_mask(h, tau));
  std::vector<BBox> boxes;
  for (const auto& c : comps)
    if (static_cast<double>(c.box.area()) > min_area) boxes.push_back(c.box);
  return boxes;
}

double min_area_from_annotations(const std::vector<BBox>& gt_boxes,
                                 double percentile) {
  if (gt_boxes.empty())
    throw ValidationError("no ground-truth boxes to calibrate min_area");
  if (percentile < 0.0 || percentile > 100.0)
    throw ValidationError("percentile must lie in [0,100]");
  std::vector<double> areas;
  areas.reserve(gt_boxes.size());
  for (const auto& b : gt_boxes) areas.push_back(static_cast<double>(b.area()));
  std::sort(areas.begin(), areas.end());
  // nearest-rank: ceil(p/100 * n), 1-based; percentile 0 -> minimum
  std::size_t n = areas.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  if (rank == 0) rank = 1;
  return areas[rank - 1];
}

// ---------------------------------------------------------------------------
// HMAP files

void save_heatmap(const Heatmap& h, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open heatmap for writing: " + path);
  const char magic[4] = {'H', 'M', 'A', 'P'};
  f.write(magic, 4);
  std::uint16_t version = 1;
  std::uint8_t hdr[10];
  hdr[0] = version & 0xff;
  hdr[1] = (version >> 8) & 0xff;
  std::uint32_t hh = static_cast<std::uint32_t>(h.height);
  std::uint32_t ww = static_cast<std::uint32_t>(h.width);
  for (int i = 0; i < 4; ++i) hdr[2 + i] = (hh >> (8 * i)) & 0xff;
  for (int i = 0; i < 4; ++i) hdr[6 + i] = (ww >> (8 * i)) & 0xff;
  f.write(reinterpret_cast<const char*>(hdr), 10);
  for (double v : h.values) {
    float fv = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &fv, 4);
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = (u >> (8 * i)) & 0xff;
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!f) throw IoError("heatmap write failed: " + path);
}

Heatmap load_heatmap(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open heatmap: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 14 || std::memcmp(bytes.data(), "HMAP", 4) != 0)
    throw IoError("bad heatmap magic");
  std::uint16_t version = bytes[4] | (bytes[5] << 8);
  if (version != 1) throw IoError("unsupported heatmap version");
  auto u32_at = [&](std::size_t p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[p + i]) << (8 * i);
    return v;
  };
  Heatmap h;
  h.height = u32_at(6);
  h.width = u32_at(10);
  std::size_t n = h.height * h.width;
  if (bytes.size() != 14 + 4 * n) throw IoError("heatmap size mismatch");
  h.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = u32_at(14 + 4 * i);
    float fv;
    std::memcpy(&fv, &u, 4);
    h.values[i] = fv;
  }
  return h;
}

}  // namespace kdl
