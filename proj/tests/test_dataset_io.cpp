#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "kdl/dataset_io.hpp"

using namespace kdl;
namespace fs = std::filesystem;

namespace {

Sample make_sample(const std::string& id, bool positive,
                   std::vector<BBox> boxes) {
  Sample s;
  s.id = id;
  s.positive = positive;
  s.gt_boxes = std::move(boxes);
  s.image = Tensor({1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i)
    s.image.data[i] = static_cast<double>((i * 37 + id.size()) % 256) / 255.0;
  return s;
}

}  // namespace

TEST_CASE("annotations serialize to the shared schema and parse back") {
  std::vector<Sample> samples = {
      make_sample("img_a", true, {{2, 3, 6, 7}, {0, 0, 4, 4}}),
      make_sample("img_b", false, {}),
  };
  std::string text = annotations_to_json(samples);
  auto j = nlohmann::json::parse(text);
  REQUIRE(j["images"].size() == 2);
  CHECK(j["images"][0]["id"] == "img_a");
  CHECK(j["images"][0]["label"] == "tb");
  CHECK(j["images"][0]["boxes"][0]["x_min"] == 2);
  CHECK(j["images"][0]["boxes"][0]["y_max"] == 7);
  CHECK(j["images"][1]["label"] == "non_tb");
  CHECK(j["images"][1]["boxes"].empty());

  LoadedAnnotations back = annotations_from_json(text);
  CHECK(back.labels.at("img_a"));
  CHECK(!back.labels.at("img_b"));
  REQUIRE(back.boxes.count("img_a") == 1);
  CHECK(back.boxes.count("img_b") == 0);  // boxless images carry no entry
  CHECK(back.boxes.at("img_a").size() == 2);
  CHECK(back.boxes.at("img_a")[0].x_min == 2);
  CHECK(back.boxes.at("img_a")[0].y_min == 3);
  CHECK(back.boxes.at("img_a")[0].x_max == 6);
  CHECK(back.boxes.at("img_a")[0].y_max == 7);
}

TEST_CASE("annotation parsing rejects malformed documents") {
  CHECK_THROWS_AS(annotations_from_json("nope"), ValidationError);
  CHECK_THROWS_AS(annotations_from_json(R"({"no_images": []})"),
                  ValidationError);
  CHECK_THROWS_AS(
      annotations_from_json(
          R"({"images": [{"id": "x", "label": "maybe", "boxes": []}]})"),
      ValidationError);
}

TEST_CASE("prediction box lists round-trip") {
  PredictionSet pred;
  pred["p"] = {{1, 2, 5, 9}};
  pred["q"] = {};
  std::string text = boxes_to_json(pred);
  PredictionSet back = boxes_from_json(text);
  CHECK(back.size() == pred.size());
  CHECK(back.at("p")[0].y_max == 9);
  CHECK(back.at("q").empty());
  CHECK(boxes_to_json(back) == text);  // serialization fixpoint
}

TEST_CASE("dataset export/import preserves splits, labels, boxes, pixels") {
  Dataset d;
  d.train = {make_sample("train_0000", true, {{1, 1, 5, 6}}),
             make_sample("train_0001", false, {})};
  d.test = {make_sample("test_0000", true, {{2, 2, 7, 7}})};

  fs::path dir = fs::temp_directory_path() / "kdl_dataset_io";
  fs::remove_all(dir);
  export_dataset(d, dir.string());
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "annotations.json"));
  CHECK(fs::exists(dir / "images" / "train_0000.pgm"));

  Dataset back = import_dataset(dir.string());
  REQUIRE(back.train.size() == 2);
  REQUIRE(back.test.size() == 1);
  CHECK(back.train[0].id == "train_0000");
  CHECK(back.train[0].positive);
  CHECK(!back.train[1].positive);
  REQUIRE(back.train[0].gt_boxes.size() == 1);
  CHECK(back.train[0].gt_boxes[0].x_max == 5);
  CHECK(back.test[0].gt_boxes[0].y_min == 2);
  CHECK(back.train[0].image.shape == d.train[0].image.shape);
  // pixels were synthesized on the 8-bit lattice, so PGM is lossless here
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(back.train[0].image.data[i] ==
          doctest::Approx(d.train[0].image.data[i]).epsilon(1e-12));

  CHECK_THROWS_AS(import_dataset((dir / "missing").string()), IoError);
  fs::remove_all(dir);
}
