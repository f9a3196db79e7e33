#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "kdl/synth_data.hpp"

using namespace kdl;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.n_train = 60;
  s.n_test = 40;
  s.seed = seed;
  return s;
}

bool token_present(const Sample& s, const SyntheticSpec& spec) {
  // the token paints the top-left corner at full intensity; noise alone
  // cannot reach it because blobs spawn below the token rows
  int w = spec.width;
  for (int y = 0; y < spec.token_h; ++y)
    for (int x = 0; x < spec.token_w; ++x)
      if (s.image.data[y * w + x] < 0.99) return false;
  return true;
}

}  // namespace

TEST_CASE("generation is deterministic and seed-sensitive") {
  Dataset a = generate_dataset(small_spec(7));
  Dataset b = generate_dataset(small_spec(7));
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].image.data == b.train[i].image.data);
    CHECK(a.train[i].positive == b.train[i].positive);
    CHECK(a.train[i].id == b.train[i].id);
  }
  Dataset c = generate_dataset(small_spec(8));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.train.size() && !any_diff; ++i)
    any_diff = a.train[i].image.data != c.train[i].image.data;
  CHECK(any_diff);
}

TEST_CASE("split sizes, ids, labels and pixel range") {
  SyntheticSpec spec = small_spec(42);
  Dataset d = generate_dataset(spec);
  CHECK(d.train.size() == 60);
  CHECK(d.test.size() == 40);

  std::set<std::string> ids;
  std::size_t positives = 0;
  for (const auto& s : d.train) {
    ids.insert(s.id);
    positives += s.positive;
    CHECK(s.image.shape == std::vector<std::size_t>{1, 32, 32});
    for (double v : s.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (s.positive)
      CHECK(!s.gt_boxes.empty());
    else
      CHECK(s.gt_boxes.empty());
  }
  CHECK(ids.size() == d.train.size());  // unique ids
  CHECK(positives == 30);               // exact 0.5 positive fraction
  CHECK(d.train[0].id == "train_0000");
  CHECK(d.test[0].id == "test_0000");
}

TEST_CASE("ground-truth boxes are tight around painted blob pixels") {
  SyntheticSpec spec = small_spec(13);
  spec.noise = 0.0;  // zero noise so blob pixels are the only bright ones
  Dataset d = generate_dataset(spec);
  int checked = 0;
  for (const auto& s : d.train) {
    if (!s.positive) continue;
    ++checked;
    for (const auto& box : s.gt_boxes) {
      box.validate(spec.width, spec.height);
      // each boundary row/column of the box holds at least one blob pixel
      auto bright = [&](int y, int x) {
        return s.image.data[y * spec.width + x] >= spec.blob_intensity_min - 1e-9;
      };
      bool left = false, right = false, top = false, bottom = false;
      for (int y = box.y_min; y < box.y_max; ++y) {
        left |= bright(y, box.x_min);
        right |= bright(y, box.x_max - 1);
      }
      for (int x = box.x_min; x < box.x_max; ++x) {
        top |= bright(box.y_min, x);
        bottom |= bright(box.y_max - 1, x);
      }
      CHECK(left);
      CHECK(right);
      CHECK(top);
      CHECK(bottom);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("token frequencies track the per-split probabilities") {
  SyntheticSpec spec;
  spec.n_train = 400;
  spec.n_test = 400;
  spec.seed = 4242;
  Dataset d = generate_dataset(spec);

  auto rate = [&](const std::vector<Sample>& split) {
    std::size_t pos = 0, with = 0;
    for (const auto& s : split) {
      if (!s.positive) continue;
      ++pos;
      with += s.has_token;
      CHECK(token_present(s, spec) == s.has_token);
    }
    return static_cast<double>(with) / static_cast<double>(pos);
  };
  CHECK(rate(d.train) == doctest::Approx(0.95).epsilon(0.05));
  CHECK(rate(d.test) == doctest::Approx(0.5).epsilon(0.15));

  // negatives never carry the token
  for (const auto& s : d.train)
    if (!s.positive) CHECK(!s.has_token);
}

TEST_CASE("spec validation rejects bad parameter combinations") {
  SyntheticSpec s;
  s.blob_radius_max = 20;  // blob cannot fit below the token rows
  CHECK_THROWS_AS(s.validate(), ValidationError);

  SyntheticSpec p;
  p.p_train = 1.5;
  CHECK_THROWS_AS(p.validate(), ValidationError);

  SyntheticSpec n;
  n.n_train = 0;
  CHECK_THROWS_AS(n.validate(), ValidationError);
}

TEST_CASE("preprocess resizes, center-crops and normalizes") {
  // 8x8 ramp image; resize to 6, crop to 4: offset (6-4)/2 = 1 on both axes
  Tensor img({1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i)
    img.data[i] = static_cast<double>(i) / 63.0;
  Tensor out = preprocess(img, 6, 4, 0.0, 1.0);
  CHECK(out.shape == std::vector<std::size_t>{1, 4, 4});

  std::vector<double> resized = bilinear_resize(img.data, 8, 8, 6, 6);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(out.data[y * 4 + x] ==
            doctest::Approx(resized[(y + 1) * 6 + (x + 1)]).epsilon(1e-12));

  // normalization: (x - mean) / std applied after the crop
  Tensor norm = preprocess(img, 6, 4, 0.5, 2.0);
  for (std::size_t i = 0; i < norm.data.size(); ++i)
    CHECK(norm.data[i] == doctest::Approx((out.data[i] - 0.5) / 2.0));
}

TEST_CASE("flip is an involution and translate zero-fills") {
  Tensor img({1, 3, 4});
  for (std::size_t i = 0; i < 12; ++i)
    img.data[i] = static_cast<double>(i) / 20.0;

  Tensor flipped = flip_horizontal(img);
  CHECK(flipped.data[0] == img.data[3]);
  CHECK(flip_horizontal(flipped).data == img.data);

  Tensor shifted = translate(img, 1, 2);
  CHECK(shifted.data[0 * 4 + 0] == 0.0);  // vacated top row
  CHECK(shifted.data[1 * 4 + 0] == 0.0);  // vacated left columns
  CHECK(shifted.data[1 * 4 + 2] == img.data[0]);
  CHECK(translate(img, 0, 0).data == img.data);

  Tensor bright = adjust_brightness(img, 1.1);
  CHECK(bright.data[1] == doctest::Approx(1.1 / 20.0));
  Tensor clamp_src({1, 1, 1}, 0.95);
  CHECK(adjust_brightness(clamp_src, 1.1).data[0] == 1.0);  // clamped
  Tensor dim = adjust_brightness(img, 0.9);
  CHECK(dim.data[1] == doctest::Approx(0.9 / 20.0));
}

TEST_CASE("augment is seeded and draws from the declared policy") {
  Tensor img({1, 6, 6});
  for (std::size_t i = 0; i < 36; ++i)
    img.data[i] = static_cast<double>(i % 7) / 7.0;

  std::set<std::vector<double>> variants;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Tensor a = augment(img, seed);
    CHECK(a.data == augment(img, seed).data);  // deterministic per seed
    CHECK(a.shape == img.shape);
    variants.insert(a.data);
  }
  CHECK(variants.size() >= 3);  // several distinct transforms observed
}

TEST_CASE("pgm round-trip quantizes to 8 bits") {
  Tensor img({1, 5, 6});
  for (std::size_t i = 0; i < 30; ++i)
    img.data[i] = static_cast<double>(i) / 29.0;
  auto path = std::filesystem::temp_directory_path() / "kdl_test.pgm";
  save_pgm(img, path.string());
  Tensor back = load_pgm(path.string());
  CHECK(back.shape == img.shape);
  for (std::size_t i = 0; i < 30; ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1.0 / 255.0));
  // a second round-trip is exact: values already sit on the 8-bit lattice
  save_pgm(back, path.string());
  Tensor again = load_pgm(path.string());
  CHECK(again.data == back.data);
  std::filesystem::remove(path);
}
