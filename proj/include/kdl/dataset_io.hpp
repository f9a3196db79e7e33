#pragma once

#include <string>

#include "kdl/metrics.hpp"
#include "kdl/synth_data.hpp"

namespace kdl {

// Shared annotations schema:
// {"images":[{"id":"...","label":"tb|non_tb",
//             "boxes":[{"x_min":..,"y_min":..,"x_max":..,"y_max":..}]}]}
// Exclusive-max convention, pixel units.
std::string annotations_to_json(const std::vector<Sample>& samples);
// id -> boxes, plus labels via the second map
struct LoadedAnnotations {
  AnnotationSet boxes;                 // only images that have boxes
  std::map<std::string, bool> labels;  // id -> positive
};
LoadedAnnotations annotations_from_json(const std::string& json_text);

// Box lists in the same schema, used for predicted boxes.
std::string boxes_to_json(const PredictionSet& pred);
PredictionSet boxes_from_json(const std::string& json_text);

// Dataset directory layout:
//   manifest.json    {"images":[{"id","label","split"}]}
//   annotations.json shared schema over all images
//   images/<id>.pgm
void export_dataset(const Dataset& d, const std::string& dir);
Dataset import_dataset(const std::string& dir);

}  // namespace kdl
