#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <kdl.h>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kdl_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTinyConfig = R"({
  "dataset": {"synthetic": {
    "height": 16, "width": 16,
    "blob_radius": [2, 3],
    "token": {"height": 3, "width": 4},
    "n_train": 24, "n_test": 16
  }},
  "network": {
    "input": [1, 16, 16],
    "layers": [
      {"type": "conv", "in": 1, "out": 2, "kernel": 3, "stride": 2, "pad": 1},
      {"type": "relu"},
      {"type": "gap"},
      {"type": "dense", "in": 2, "out": 2}
    ]
  },
  "optimizer": {"batch": 8},
  "max_epochs": 2,
  "seed": 7
})";

}  // namespace

TEST_CASE("validation failures surface as status 2 with a message") {
  CHECK(kdl_train_teacher("not json", -1, "/tmp/kdl_capi_nowhere") ==
        KDL_ERR_VALIDATION);
  CHECK(std::strlen(kdl_last_error()) > 0);

  CHECK(kdl_train_teacher(R"({"bogus_key": 1})", -1,
                          "/tmp/kdl_capi_nowhere") == KDL_ERR_VALIDATION);
  std::string msg = kdl_last_error();
  CHECK(msg.find("bogus_key") != std::string::npos);

  CHECK(kdl_localize("/no/such/checkpoint", "/no/such/dir", 0.5, -1.0, "") ==
        KDL_ERR_VALIDATION);
  CHECK(kdl_sweep(kTinyConfig, -1, "gamma", "1,2", 0.5, -1.0,
                  "/tmp/kdl_capi_nowhere") == KDL_ERR_VALIDATION);
  CHECK(kdl_sweep(kTinyConfig, -1, "alpha", "0.5,x", 0.5, -1.0,
                  "/tmp/kdl_capi_nowhere") == KDL_ERR_VALIDATION);
  CHECK(kdl_sweep(kTinyConfig, -1, "alpha", "", 0.5, -1.0,
                  "/tmp/kdl_capi_nowhere") == KDL_ERR_VALIDATION);
}

TEST_CASE("full cycle through the C surface") {
  fs::path dir = scratch("cycle");
  std::string data = (dir / "data").string();
  std::string teacher = (dir / "teacher").string();
  std::string student = (dir / "student").string();

  REQUIRE(kdl_gen_data(kTinyConfig, -1, data.c_str()) == KDL_OK);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(fs::exists(dir / "data" / "annotations.json"));

  REQUIRE(kdl_train_teacher(kTinyConfig, -1, teacher.c_str()) == KDL_OK);
  std::string teacher_ckpt = teacher + "/checkpoint.kdl1";
  CHECK(fs::exists(teacher_ckpt));

  CHECK(kdl_train_student(kTinyConfig, -1, "", student.c_str()) ==
        KDL_ERR_VALIDATION);
  REQUIRE(kdl_train_student(kTinyConfig, -1, teacher_ckpt.c_str(),
                            student.c_str()) == KDL_OK);

  std::string loc = (dir / "loc").string();
  REQUIRE(kdl_localize(teacher_ckpt.c_str(), data.c_str(), 0.5, -1.0,
                       loc.c_str()) == KDL_OK);
  CHECK(fs::exists(dir / "loc" / "metrics.json"));
  CHECK(fs::exists(dir / "loc" / "boxes.json"));

  std::string ev = (dir / "ev").string();
  REQUIRE(kdl_evaluate(teacher_ckpt.c_str(), data.c_str(), 0.5, ev.c_str()) ==
          KDL_OK);
  CHECK(fs::exists(dir / "ev" / "metrics.json"));

  std::string rep = (dir / "rep").string();
  REQUIRE(kdl_hessian_report(
              teacher_ckpt.c_str(), data.c_str(), "ce", nullptr,
              R"({"top_k": 2, "lanczos_steps": 12, "trace_probes": 100,
                  "esd_probes": 3, "esd_grid": 32})",
              42, rep.c_str()) == KDL_OK);
  CHECK(fs::exists(dir / "rep" / "report.json"));
  CHECK(fs::exists(dir / "rep" / "esd.csv"));

  CHECK(kdl_hessian_report(teacher_ckpt.c_str(), data.c_str(), "ce", nullptr,
                           R"({"unknown": 1})", 42,
                           rep.c_str()) == KDL_ERR_VALIDATION);

  fs::remove_all(dir);
}

TEST_CASE("seed override changes the trained checkpoint") {
  fs::path dir = scratch("seed");
  std::string a = (dir / "a").string(), b = (dir / "b").string();
  std::string c = (dir / "c").string();
  REQUIRE(kdl_train_teacher(kTinyConfig, 100, a.c_str()) == KDL_OK);
  REQUIRE(kdl_train_teacher(kTinyConfig, 100, b.c_str()) == KDL_OK);
  REQUIRE(kdl_train_teacher(kTinyConfig, 101, c.c_str()) == KDL_OK);

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "a" / "checkpoint.kdl1") ==
        slurp(dir / "b" / "checkpoint.kdl1"));
  CHECK(slurp(dir / "a" / "checkpoint.kdl1") !=
        slurp(dir / "c" / "checkpoint.kdl1"));
  fs::remove_all(dir);
}

TEST_CASE("model handle scores images and reports its size") {
  fs::path dir = scratch("model");
  std::string teacher = (dir / "m").string();
  REQUIRE(kdl_train_teacher(kTinyConfig, -1, teacher.c_str()) == KDL_OK);
  std::string ckpt = teacher + "/checkpoint.kdl1";

  kdl_model* model = nullptr;
  REQUIRE(kdl_model_open(ckpt.c_str(), &model) == KDL_OK);
  REQUIRE(model != nullptr);
  // conv(1->2,3x3)+bias 20, dense(2->2)+bias 6
  CHECK(kdl_model_param_count(model) == 26);

  std::vector<double> pixels(16 * 16, 0.5);
  double score = -1.0;
  CHECK(kdl_model_score(model, pixels.data(), 16, 16, &score) == KDL_OK);
  CHECK(score >= 0.0);
  CHECK(score <= 1.0);

  // wrong geometry is a validation error and leaves score untouched
  double sentinel = -7.0;
  CHECK(kdl_model_score(model, pixels.data(), 8, 8, &sentinel) ==
        KDL_ERR_VALIDATION);
  CHECK(sentinel == -7.0);

  kdl_model_close(model);
  kdl_model_close(nullptr);  // tolerated

  kdl_model* missing = nullptr;
  CHECK(kdl_model_open("/no/such/file", &missing) == KDL_ERR_VALIDATION);
  CHECK(missing == nullptr);
  fs::remove_all(dir);
}
