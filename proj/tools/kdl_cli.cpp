// Command-line front end; talks to the core only through the C API.
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "kdl.h"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    std::fprintf(stderr, "error: cannot open config file %s\n", path.c_str());
    std::exit(2);
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int finish(kdl_status status, const char* what) {
  if (status == KDL_OK) {
    std::printf("%s: ok\n", what);
    return 0;
  }
  std::fprintf(stderr, "%s: %s\n", what, kdl_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-distillation localization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;  // -1: use the config's seed
  app.add_option("--config", config_path, "run config JSON file")
      ->envname("KDL_CONFIG");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "override the config seed");

  auto* gen = app.add_subcommand("gen-data", "generate + export the synthetic dataset");

  auto* teacher = app.add_subcommand("train-teacher", "train the teacher (cross-entropy)");

  std::string teacher_ckpt;
  auto* student = app.add_subcommand("train-student", "train the student (KD total loss)");
  student->add_option("--teacher", teacher_ckpt, "teacher checkpoint")->required();

  std::string checkpoint, dataset_dir;
  double tau = 0.5, min_area = -1.0, threshold = 0.5;
  auto* localize = app.add_subcommand("localize", "Grad-CAM heatmaps, boxes and mIOU");
  localize->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  localize->add_option("--dataset", dataset_dir, "exported dataset directory")->required();
  localize->add_option("--tau", tau, "heatmap threshold in [0,1]");
  localize->add_option("--min-area", min_area,
                       "minimum box area; negative = calibrate from train GT");

  auto* evaluate = app.add_subcommand("evaluate", "classification metrics on the test split");
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evaluate->add_option("--dataset", dataset_dir, "exported dataset directory")->required();
  evaluate->add_option("--threshold", threshold, "decision threshold on the TB probability");

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep (temperature|alpha|seed)");
  sweep->add_option("--axis", axis, "sweep axis")->required();
  sweep->add_option("--values", values, "comma-separated axis values")->required();
  sweep->add_option("--tau", tau, "heatmap threshold for localization");
  sweep->add_option("--min-area", min_area, "minimum box area; negative = calibrate");

  std::string loss = "ce", hessian_params;
  auto* hessian = app.add_subcommand("hessian-report", "loss-landscape spectrum report");
  hessian->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  hessian->add_option("--dataset", dataset_dir, "exported dataset directory")->required();
  hessian->add_option("--loss", loss, "analyzed loss: ce or kd");
  hessian->add_option("--teacher", teacher_ckpt, "teacher checkpoint (kd loss)");
  hessian->add_option("--params", hessian_params, "estimator parameters JSON");

  CLI11_PARSE(app, argc, argv);

  std::string config_text;
  if (!config_path.empty()) config_text = read_file(config_path);

  if (gen->parsed())
    return finish(kdl_gen_data(config_text.c_str(), seed, out_dir.c_str()),
                  "gen-data");
  if (teacher->parsed())
    return finish(kdl_train_teacher(config_text.c_str(), seed, out_dir.c_str()),
                  "train-teacher");
  if (student->parsed())
    return finish(kdl_train_student(config_text.c_str(), seed,
                                    teacher_ckpt.c_str(), out_dir.c_str()),
                  "train-student");
  if (localize->parsed())
    return finish(kdl_localize(checkpoint.c_str(), dataset_dir.c_str(), tau,
                               min_area, out_dir.c_str()),
                  "localize");
  if (evaluate->parsed())
    return finish(kdl_evaluate(checkpoint.c_str(), dataset_dir.c_str(),
                               threshold, out_dir.c_str()),
                  "evaluate");
  if (sweep->parsed())
    return finish(kdl_sweep(config_text.c_str(), seed, axis.c_str(),
                            values.c_str(), tau, min_area, out_dir.c_str()),
                  "sweep");
  if (hessian->parsed())
    return finish(kdl_hessian_report(checkpoint.c_str(), dataset_dir.c_str(),
                                     loss.c_str(), teacher_ckpt.c_str(),
                                     hessian_params.c_str(), seed,
                                     out_dir.c_str()),
                  "hessian-report");
  return 2;
}
