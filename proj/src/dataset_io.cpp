#include "kdl/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kdl {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open file for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

ordered_json box_to_json(const BBox& b) {
  return ordered_json{{"x_min", b.x_min},
                      {"y_min", b.y_min},
                      {"x_max", b.x_max},
                      {"y_max", b.y_max}};
}

BBox box_from_json(const json& j) {
  BBox b{j.at("x_min").get<int>(), j.at("y_min").get<int>(),
         j.at("x_max").get<int>(), j.at("y_max").get<int>()};
  b.validate();
  return b;
}

}  // namespace

std::string annotations_to_json(const std::vector<Sample>& samples) {
  ordered_json images = ordered_json::array();
  for (const auto& s : samples) {
    ordered_json boxes = ordered_json::array();
    for (const auto& b : s.gt_boxes) boxes.push_back(box_to_json(b));
    images.push_back(ordered_json{{"id", s.id},
                                  {"label", s.positive ? "tb" : "non_tb"},
                                  {"boxes", std::move(boxes)}});
  }
  return ordered_json{{"images", std::move(images)}}.dump(2) + "\n";
}

LoadedAnnotations annotations_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("annotations are not valid JSON: ") +
                          e.what());
  }
  if (!j.contains("images") || !j["images"].is_array())
    throw ValidationError("annotations need an 'images' array");
  LoadedAnnotations out;
  for (const auto& img : j.at("images")) {
    std::string id = img.at("id").get<std::string>();
    std::string label = img.at("label").get<std::string>();
    if (label != "tb" && label != "non_tb")
      throw ValidationError("unknown label '" + label + "' for image " + id);
    if (out.labels.count(id)) throw ValidationError("duplicate image id " + id);
    out.labels[id] = label == "tb";
    BoxList boxes;
    for (const auto& b : img.at("boxes")) boxes.push_back(box_from_json(b));
    if (!boxes.empty()) out.boxes[id] = std::move(boxes);
  }
  return out;
}

std::string boxes_to_json(const PredictionSet& pred) {
  ordered_json images = ordered_json::array();
  for (const auto& [id, list] : pred) {
    ordered_json boxes = ordered_json::array();
    for (const auto& b : list) boxes.push_back(box_to_json(b));
    images.push_back(
        ordered_json{{"id", id}, {"label", "tb"}, {"boxes", std::move(boxes)}});
  }
  return ordered_json{{"images", std::move(images)}}.dump(2) + "\n";
}

PredictionSet boxes_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("box list is not valid JSON: ") + e.what());
  }
  if (!j.contains("images") || !j["images"].is_array())
    throw ValidationError("box list needs an 'images' array");
  PredictionSet out;
  for (const auto& img : j.at("images")) {
    std::string id = img.at("id").get<std::string>();
    BoxList boxes;
    for (const auto& b : img.at("boxes")) boxes.push_back(box_from_json(b));
    out[id] = std::move(boxes);
  }
  return out;
}

void export_dataset(const Dataset& d, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  ordered_json manifest_images = ordered_json::array();
  std::vector<Sample> all;
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& s : *split) {
      manifest_images.push_back(
          ordered_json{{"id", s.id},
                       {"label", s.positive ? "tb" : "non_tb"},
                       {"split", split == &d.train ? "train" : "test"}});
      save_pgm(s.image, (fs::path(dir) / "images" / (s.id + ".pgm")).string());
      all.push_back(s);
    }
  }
  write_file((fs::path(dir) / "manifest.json").string(),
             ordered_json{{"images", std::move(manifest_images)}}.dump(2) + "\n");
  write_file((fs::path(dir) / "annotations.json").string(),
             annotations_to_json(all));
}

Dataset import_dataset(const std::string& dir) {
  json manifest = json::parse(read_file((fs::path(dir) / "manifest.json").string()));
  LoadedAnnotations ann = annotations_from_json(
      read_file((fs::path(dir) / "annotations.json").string()));
  Dataset d;
  for (const auto& entry : manifest.at("images")) {
    Sample s;
    s.id = entry.at("id").get<std::string>();
    std::string label = entry.at("label").get<std::string>();
    s.positive = label == "tb";
    s.image = load_pgm((fs::path(dir) / "images" / (s.id + ".pgm")).string());
    auto it = ann.boxes.find(s.id);
    if (it != ann.boxes.end()) s.gt_boxes = it->second;
    std::string split = entry.at("split").get<std::string>();
    if (split == "train")
      d.train.push_back(std::move(s));
    else if (split == "test")
      d.test.push_back(std::move(s));
    else
      throw ValidationError("unknown split '" + split + "' for image " + s.id);
  }
  if (d.train.empty() && d.test.empty())
    throw ValidationError("dataset at " + dir + " is empty");
  return d;
}

}  // namespace kdl
