#include "kdl/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "kdl/rng.hpp"

namespace kdl {

void SyntheticSpec::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("bad image size");
  if (p_train < 0 || p_train > 1 || p_test < 0 || p_test > 1)
    throw ValidationError("token probabilities must lie in [0,1]");
  if (positive_fraction < 0 || positive_fraction > 1)
    throw ValidationError("positive_fraction must lie in [0,1]");
  if (n_train < 1 || n_test < 1) throw ValidationError("empty split");
  if (blob_radius_min < 1 || blob_radius_max < blob_radius_min)
    throw ValidationError("bad blob radius range");
  if (blob_count_min < 1 || blob_count_max < blob_count_min)
    throw ValidationError("bad blob count range");
  if (blob_intensity_min <= noise || blob_intensity_max < blob_intensity_min ||
      blob_intensity_max > 1.0)
    throw ValidationError("blob intensity range must sit above the noise floor");
  if (token_h < 1 || token_w < 1 || token_h >= height || token_w >= width)
    throw ValidationError("token does not fit in image");
  // blobs spawn strictly below the token rows; both constraints must leave room
  if (token_h + 2 * blob_radius_max + 1 > height ||
      2 * blob_radius_max + 1 > width)
    throw ValidationError("blob cannot fit outside the token region");
}

namespace {

int draw_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

Sample make_sample(const SyntheticSpec& spec, bool positive, double p_token,
                   Rng& rng, std::string id) {
  const int H = spec.height, W = spec.width;
  Sample s;
  s.id = std::move(id);
  s.positive = positive;
  s.image = Tensor({1, static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  auto& img = s.image.data;
  for (double& v : img) v = rng.uniform(0.0, spec.noise);

  if (positive) {
    int count = draw_int(rng, spec.blob_count_min, spec.blob_count_max);
    for (int b = 0; b < count; ++b) {
      int r = draw_int(rng, spec.blob_radius_min, spec.blob_radius_max);
      int cy = draw_int(rng, spec.token_h + r, H - 1 - r);
      int cx = draw_int(rng, r, W - 1 - r);
      double intensity =
          rng.uniform(spec.blob_intensity_min, spec.blob_intensity_max);
      int ymin = H, ymax = -1, xmin = W, xmax = -1;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy * dy + dx * dx > r * r) continue;
          int y = cy + dy, x = cx + dx;
          img[static_cast<std::size_t>(y) * W + x] =
              std::max(img[static_cast<std::size_t>(y) * W + x], intensity);
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
        }
      s.gt_boxes.push_back({xmin, ymin, xmax + 1, ymax + 1});
    }
    s.has_token = rng.uniform() < p_token;
  }
  if (s.has_token) {
    for (int y = 0; y < spec.token_h; ++y)
      for (int x = 0; x < spec.token_w; ++x)
        img[static_cast<std::size_t>(y) * W + x] = spec.token_intensity;
  }
  return s;
}

std::vector<Sample> make_split(const SyntheticSpec& spec, const char* split,
                               int count, double p_token) {
  std::vector<Sample> out;
  out.reserve(count);
  int positives = static_cast<int>(
      std::lround(spec.positive_fraction * static_cast<double>(count)));
  for (int i = 0; i < count; ++i) {
    Rng rng = substream(spec.seed, std::string("sample-") + split,
                        static_cast<std::uint64_t>(i));
    bool positive = i < positives;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", split, i);
    out.push_back(make_sample(spec, positive, p_token, rng, id));
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.train = make_split(spec, "train", spec.n_train, spec.p_train);
  d.test = make_split(spec, "test", spec.n_test, spec.p_test);
  return d;
}

Tensor preprocess(const Tensor& image, int out_side, int crop_side,
                  double mean, double stddev) {
  if (image.shape.size() != 3) throw ValidationError("preprocess expects (C,H,W)");
  if (out_side < 1 || crop_side < 1 || crop_side > out_side)
    throw ValidationError("preprocess: need 1 <= crop_side <= out_side");
  if (!(stddev > 0.0)) throw ValidationError("preprocess: std must be > 0");
  std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  std::size_t os = static_cast<std::size_t>(out_side);
  std::size_t cs = static_cast<std::size_t>(crop_side);
  std::size_t off = (os - cs) / 2;

  Tensor out({C, cs, cs});
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> chan(image.data.begin() + c * H * W,
                             image.data.begin() + (c + 1) * H * W);
    std::vector<double> resized = bilinear_resize(chan, H, W, os, os);
    for (std::size_t y = 0; y < cs; ++y)
      for (std::size_t x = 0; x < cs; ++x)
        out.data[(c * cs + y) * cs + x] =
            (resized[(y + off) * os + (x + off)] - mean) / stddev;
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  Tensor out(image.shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        out.data[(c * H + y) * W + x] = image.data[(c * H + y) * W + (W - 1 - x)];
  return out;
}

Tensor adjust_brightness(const Tensor& image, double factor) {
  Tensor out = image;
  for (double& v : out.data) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

Tensor translate(const Tensor& image, int dy, int dx) {
  std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  Tensor out(image.shape, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        long long sy = static_cast<long long>(y) - dy;
        long long sx = static_cast<long long>(x) - dx;
        if (sy < 0 || sy >= static_cast<long long>(H) || sx < 0 ||
            sx >= static_cast<long long>(W))
          continue;
        out.data[(c * H + y) * W + x] = image.data[(c * H + sy) * W + sx];
      }
  return out;
}

Tensor augment(const Tensor& image, std::uint64_t seed) {
  Rng rng = substream(seed, "augment");
  switch (rng.below(4)) {
    case 0:
      return image;
    case 1:
      return flip_horizontal(image);
    case 2:
      return adjust_brightness(image, rng.rademacher() > 0 ? 1.1 : 0.9);
    default: {
      int dy = draw_int(rng, -2, 2);
      int dx = draw_int(rng, -2, 2);
      return translate(image, dy, dx);
    }
  }
}

void save_pgm(const Tensor& image, const std::string& path) {
  if (image.shape.size() != 3 || image.shape[0] != 1)
    throw ValidationError("PGM export expects a (1,H,W) grayscale image");
  std::size_t H = image.shape[1], W = image.shape[2];
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open PGM for writing: " + path);
  f << "P5\n" << W << " " << H << "\n255\n";
  for (double v : image.data) {
    int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    f.put(static_cast<char>(q));
  }
  if (!f) throw IoError("PGM write failed: " + path);
}

Tensor load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open PGM: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw IoError("not a binary PGM: " + path);
  std::size_t w = 0, h = 0;
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || maxval != 255) throw IoError("unsupported PGM header: " + path);
  f.get();  // single whitespace after maxval
  Tensor img({1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    int c = f.get();
    if (c == EOF) throw IoError("truncated PGM: " + path);
    img.data[i] = static_cast<double>(c) / 255.0;
  }
  return img;
}

}  // namespace kdl
