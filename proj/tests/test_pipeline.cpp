#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "kdl/pipeline.hpp"

using namespace kdl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kdl_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// small, fast configuration shared by the integration cases
RunConfig tiny_config(std::uint64_t seed) {
  SyntheticSpec s;
  s.height = 16;
  s.width = 16;
  s.blob_radius_min = 2;
  s.blob_radius_max = 3;
  s.token_h = 3;
  s.token_w = 4;
  s.n_train = 24;
  s.n_test = 16;
  s.seed = seed;

  NetworkSpec net;
  net.in_channels = 1;
  net.in_height = 16;
  net.in_width = 16;
  net.layers = {LayerDesc::conv(1, 2, 3, 2, 1), LayerDesc::relu(),
                LayerDesc::gap(), LayerDesc::dense(2, 2)};

  RunConfig c;
  c.synthetic = s;
  c.network = net;
  c.batch = 8;
  c.max_epochs = 3;
  c.patience = 10;  // above max_epochs so short runs never stop early
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("early stopping rule on injected loss sequences") {
  // strictly improving: runs to max_epochs
  CHECK(early_stop_scan({5, 4, 3, 2, 1}, 2, 5) ==
        std::make_pair(5, std::string("max_epochs")));

  // constant loss: the first epoch sets best, then `patience` bad epochs
  std::vector<double> flat(20, 1.0);
  CHECK(early_stop_scan(flat, 10, 100) ==
        std::make_pair(11, std::string("early_stop")));

  // improvement resets the counter; ties count as non-improving
  CHECK(early_stop_scan({3, 2, 2, 1, 1, 1}, 2, 100) ==
        std::make_pair(6, std::string("early_stop")));
  CHECK(early_stop_scan({3, 2, 2, 1, 1}, 2, 100) ==
        std::make_pair(5, std::string("exhausted")));

  // max_epochs wins when both trigger on the same epoch count boundary
  CHECK(early_stop_scan({1, 2, 3}, 5, 3) ==
        std::make_pair(3, std::string("max_epochs")));

  CHECK_THROWS_AS(early_stop_scan({1.0}, 0, 5), ValidationError);
  CHECK_THROWS_AS(early_stop_scan({1.0}, 1, 0), ValidationError);
}

TEST_CASE("config parsing rejects unknown keys at every level") {
  std::string base = R"({"dataset":{"synthetic":{"n_train":8,"n_test":4}}})";
  CHECK_NOTHROW(parse_run_config(base));

  CHECK_THROWS_AS(parse_run_config(R"({"dataset":{"synthetic":{}},"typo":1})"),
                  ValidationError);
  CHECK_THROWS_AS(
      parse_run_config(R"({"dataset":{"synthetic":{},"pathh":"x"}})"),
      ValidationError);
  CHECK_THROWS_AS(
      parse_run_config(R"({"dataset":{"synthetic":{"blobs":3}}})"),
      ValidationError);
  CHECK_THROWS_AS(
      parse_run_config(
          R"({"dataset":{"synthetic":{}},"optimizer":{"momentum":0.9}})"),
      ValidationError);
  CHECK_THROWS_AS(parse_run_config("not json"), ValidationError);

  // exactly one dataset source
  CHECK_THROWS_AS(parse_run_config(R"({"max_epochs":5})"), ValidationError);
  CHECK_THROWS_AS(
      parse_run_config(R"({"dataset":{"path":"d","synthetic":{}}})"),
      ValidationError);
}

TEST_CASE("config values land in the right fields and round-trip") {
  std::string text = R"({
    "dataset": {"synthetic": {"n_train": 10, "n_test": 6, "p_train": 0.9}},
    "optimizer": {"lr": 0.01, "weight_decay": 0.0005, "batch": 16},
    "max_epochs": 7, "patience": 3,
    "kd": {"temperature": 4.0, "alpha": 0.5},
    "seed": 123, "augment": true, "fixed_shuffle": true
  })";
  RunConfig c = parse_run_config(text);
  CHECK(c.synthetic->n_train == 10);
  CHECK(c.synthetic->p_train == 0.9);
  CHECK(c.synthetic->seed == 123);  // dataset seed follows the run seed
  CHECK(c.lr == 0.01);
  CHECK(c.weight_decay == 0.0005);
  CHECK(c.batch == 16);
  CHECK(c.max_epochs == 7);
  CHECK(c.patience == 3);
  CHECK(c.kd.temperature == 4.0);
  CHECK(c.kd.mix_alpha == 0.5);
  CHECK(c.seed == 123);
  CHECK(c.use_augment);
  CHECK(c.fixed_shuffle);

  // serialization fixpoint: parse(dump(c)) dumps to the same bytes
  std::string dumped = run_config_json(c);
  CHECK(run_config_json(parse_run_config(dumped)) == dumped);

  RunConfig with_net = tiny_config(5);
  std::string d2 = run_config_json(with_net);
  CHECK(run_config_json(parse_run_config(d2)) == d2);
}

TEST_CASE("norm_stats computes population mean and std of the train split") {
  std::vector<Sample> train(2);
  train[0].image = Tensor({1, 1, 2}, {0.0, 2.0});
  train[1].image = Tensor({1, 1, 2}, {0.0, 2.0});
  NormStats st = norm_stats(train);
  CHECK(st.mean == doctest::Approx(1.0));
  CHECK(st.stddev == doctest::Approx(1.0));

  // constant pixels fall back to unit std
  std::vector<Sample> flat(1);
  flat[0].image = Tensor({1, 2, 2}, 0.25);
  CHECK(norm_stats(flat).stddev == 1.0);
  CHECK_THROWS_AS(norm_stats({}), ValidationError);
}

TEST_CASE("teacher training writes its artifacts and is byte-deterministic") {
  RunConfig cfg = tiny_config(11);
  fs::path a = scratch("train_a"), b = scratch("train_b");

  RunRecord ra = train_run(cfg, TrainMode::Teacher, "", a.string());
  CHECK(ra.epoch_losses.size() == 3);
  CHECK(ra.stopping_epoch == 3);
  CHECK(ra.stopping_reason == "max_epochs");
  CHECK(ra.final_train_loss == ra.epoch_losses.back());
  CHECK(fs::exists(a / "checkpoint.kdl1"));
  CHECK(fs::exists(a / "run_record.json"));
  CHECK(fs::exists(a / "timing.json"));

  RunRecord rb = train_run(cfg, TrainMode::Teacher, "", b.string());
  CHECK(slurp(a / "checkpoint.kdl1") == slurp(b / "checkpoint.kdl1"));
  CHECK(slurp(a / "run_record.json") == slurp(b / "run_record.json"));
  CHECK(ra.epoch_losses == rb.epoch_losses);

  auto rec = nlohmann::json::parse(slurp(a / "run_record.json"));
  CHECK(rec["mode"] == "teacher");
  CHECK(rec["stopping_reason"] == "max_epochs");
  CHECK(!rec.contains("wall_clock_sec"));  // timing lives in the sidecar only

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("student training needs a teacher and trains against it") {
  RunConfig cfg = tiny_config(13);
  fs::path dir = scratch("student");

  CHECK_THROWS_AS(train_run(cfg, TrainMode::Student, "", dir.string()),
                  ValidationError);

  RunRecord t =
      train_run(cfg, TrainMode::Teacher, "", (dir / "teacher").string());
  RunRecord s = train_run(cfg, TrainMode::Student, t.checkpoint_path,
                          (dir / "student").string());
  CHECK(s.epoch_losses.size() == 3);
  for (double l : s.epoch_losses) CHECK(std::isfinite(l));
  auto rec = nlohmann::json::parse(slurp(dir / "student" / "run_record.json"));
  CHECK(rec["mode"] == "student");

  fs::remove_all(dir);
}

TEST_CASE("localization produces heatmaps, boxes and an miou in range") {
  RunConfig cfg = tiny_config(17);
  fs::path dir = scratch("localize");
  RunRecord t = train_run(cfg, TrainMode::Teacher, "", (dir / "m").string());

  NetworkState net = load_checkpoint(t.checkpoint_path);
  Dataset data = resolve_dataset(cfg);
  LocalizeResult res =
      localize_run(net, data, 0.5, -1.0, (dir / "loc").string());
  CHECK(res.miou >= 0.0);
  CHECK(res.miou <= 1.0);

  std::size_t positives = 0;
  for (const auto& s : data.test)
    if (!s.gt_boxes.empty()) {
      ++positives;
      CHECK(fs::exists(dir / "loc" / (s.id + ".hmap")));
    }
  CHECK(res.boxes.size() == positives);
  CHECK(fs::exists(dir / "loc" / "boxes.json"));

  auto metrics = nlohmann::json::parse(slurp(dir / "loc" / "metrics.json"));
  CHECK(metrics["miou"].get<double>() == res.miou);

  // boxes.json round-trips through the shared schema
  PredictionSet back = boxes_from_json(slurp(dir / "loc" / "boxes.json"));
  CHECK(back.size() == res.boxes.size());

  fs::remove_all(dir);
}

TEST_CASE("evaluation writes the metric document") {
  RunConfig cfg = tiny_config(19);
  fs::path dir = scratch("evaluate");
  RunRecord t = train_run(cfg, TrainMode::Teacher, "", (dir / "m").string());

  NetworkState net = load_checkpoint(t.checkpoint_path);
  Dataset data = resolve_dataset(cfg);
  ClassificationReport r = evaluate_run(net, data, 0.5, (dir / "ev").string());

  auto m = nlohmann::json::parse(slurp(dir / "ev" / "metrics.json"));
  CHECK(m["accuracy"].get<double>() == r.accuracy);
  CHECK(m["sensitivity"].get<double>() == r.sensitivity);
  CHECK(m["specificity"].get<double>() == r.specificity);
  CHECK(m["avg_precision"].get<double>() == r.avg_precision);
  CHECK(m["avg_recall"].get<double>() == r.avg_recall);
  REQUIRE(r.auc.has_value());
  CHECK(m["auc"].get<double>() == *r.auc);

  fs::remove_all(dir);
}

TEST_CASE("file-level entry points work over an exported dataset") {
  RunConfig cfg = tiny_config(23);
  fs::path dir = scratch("files");
  Dataset data = resolve_dataset(cfg);
  export_dataset(data, (dir / "data").string());

  RunConfig disk_cfg = cfg;
  disk_cfg.synthetic.reset();
  disk_cfg.dataset_path = (dir / "data").string();
  RunRecord t =
      train_run(disk_cfg, TrainMode::Teacher, "", (dir / "m").string());

  LocalizeResult loc = localize_files(t.checkpoint_path,
                                      (dir / "data").string(), 0.5, -1.0, "");
  CHECK(loc.miou >= 0.0);
  ClassificationReport r =
      evaluate_files(t.checkpoint_path, (dir / "data").string(), 0.5, "");
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);

  fs::remove_all(dir);
}

TEST_CASE("sweep over one alpha value emits csv and summary") {
  RunConfig cfg = tiny_config(29);
  cfg.max_epochs = 2;
  fs::path dir = scratch("sweep");

  SweepResult res =
      sweep_run(cfg, SweepAxis::Alpha, {0.75}, dir.string(), 0.5, -1.0);
  REQUIRE(res.rows.size() == 1);
  CHECK(!res.rows[0].failed);
  CHECK(res.rows[0].axis_value == 0.75);
  CHECK(res.teacher_mean == res.rows[0].teacher_miou);
  CHECK(res.teacher_std == 0.0);

  std::string csv = slurp(dir / "sweep.csv");
  CHECK(csv.rfind("axis_value,teacher_miou,student_miou\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header+row+mean+std
  CHECK(csv.find("\nmean,") != std::string::npos);
  CHECK(csv.find("\nstd,") != std::string::npos);

  auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary.contains("student_beats_teacher"));
  CHECK(summary["failed_runs"].empty());
  CHECK(fs::exists(dir / "run_000" / "student" / "checkpoint.kdl1"));
  CHECK(fs::exists(dir / "teacher" / "checkpoint.kdl1"));  // shared teacher

  CHECK_THROWS_AS(sweep_run(cfg, SweepAxis::Alpha, {}, dir.string()),
                  ValidationError);
  CHECK_THROWS_AS(sweep_run(cfg, SweepAxis::Temperature, {0.0}, dir.string()),
                  ValidationError);
  CHECK_THROWS_AS(sweep_run(cfg, SweepAxis::Seed, {1.5}, dir.string()),
                  ValidationError);

  fs::remove_all(dir);
}

TEST_CASE("hessian report over a tiny checkpoint, with the dense cross-check") {
  RunConfig cfg = tiny_config(31);
  cfg.max_epochs = 2;
  fs::path dir = scratch("hessian");
  Dataset data = resolve_dataset(cfg);
  export_dataset(data, (dir / "data").string());

  RunConfig disk_cfg = cfg;
  disk_cfg.synthetic.reset();
  disk_cfg.dataset_path = (dir / "data").string();
  RunRecord t =
      train_run(disk_cfg, TrainMode::Teacher, "", (dir / "m").string());

  HessianReportParams p;
  p.top_k = 3;
  p.lanczos_steps = 15;
  p.trace_probes = 300;
  p.esd.n_probes = 4;
  p.esd.lanczos_steps = 10;
  p.esd.grid_points = 64;
  SpectrumReport r =
      hessian_report_run(t.checkpoint_path, (dir / "data").string(), "ce", "",
                         p, 42, (dir / "rep").string());
  CHECK(r.top_eigenvalues.size() == 3);
  CHECK(std::isfinite(r.trace));
  CHECK(fs::exists(dir / "rep" / "report.json"));
  CHECK(fs::exists(dir / "rep" / "esd.csv"));
  REQUIRE(fs::exists(dir / "rep" / "dense_check.json"));  // 26-param network

  auto check = nlohmann::json::parse(slurp(dir / "rep" / "dense_check.json"));
  CHECK(check["asymmetry"].get<double>() < 1e-4);
  CHECK(check["trace_rel_delta"].get<double>() < 0.5);
  CHECK(check["top_eigenvalue_rel_deltas"][0].get<double>() < 1e-3);

  CHECK_THROWS_AS(
      hessian_report_run(t.checkpoint_path, (dir / "data").string(), "mse", "",
                         p, 42, ""),
      ValidationError);
  CHECK_THROWS_AS(
      hessian_report_run(t.checkpoint_path, (dir / "data").string(), "kd", "",
                         p, 42, ""),
      ValidationError);

  // kd loss path runs with the same checkpoint standing in as teacher
  SpectrumReport kd =
      hessian_report_run(t.checkpoint_path, (dir / "data").string(), "kd",
                         t.checkpoint_path, p, 42, "");
  CHECK(std::isfinite(kd.trace));

  fs::remove_all(dir);
}
