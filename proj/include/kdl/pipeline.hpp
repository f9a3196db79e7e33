#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdl/dataset_io.hpp"
#include "kdl/hessian.hpp"
#include "kdl/kd_loss.hpp"
#include "kdl/metrics.hpp"
#include "kdl/network.hpp"
#include "kdl/synth_data.hpp"

namespace kdl {

struct RunConfig {
  std::optional<std::string> dataset_path;  // exported dataset directory
  std::optional<SyntheticSpec> synthetic;   // or generate in-process
  std::optional<NetworkSpec> network;       // default small CNN when absent
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch = 32;
  int max_epochs = 100;
  int patience = 10;
  KDParams kd;
  std::uint64_t seed = 42;
  bool use_augment = false;
  bool fixed_shuffle = false;

  void validate() const;
};

// Single JSON document mirroring RunConfig; unknown keys rejected.
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& config);

enum class TrainMode { Teacher, Student };

struct RunRecord {
  std::vector<double> epoch_losses;
  int stopping_epoch = 0;           // 1-based
  std::string stopping_reason;      // "early_stop" | "max_epochs"
  std::string checkpoint_path;
  double final_train_loss = 0.0;
  double wall_clock_sec = 0.0;      // written to a sidecar, not the record
};

// Scans an injected loss sequence with the training stopping rule: strict
// improvement over best-so-far, stop after `patience` consecutive
// non-improving epochs or at max_epochs. Returns (stopping epoch, reason).
std::pair<int, std::string> early_stop_scan(const std::vector<double>& losses,
                                            int patience, int max_epochs);

// Loads (or generates) the configured dataset.
Dataset resolve_dataset(const RunConfig& config);

// Normalization constants computed from the train split.
struct NormStats {
  double mean = 0.0, stddev = 1.0;
};
NormStats norm_stats(const std::vector<Sample>& train);

// Trains teacher (plain CE) or student (KD total loss against the teacher
// checkpoint); writes checkpoint + run_record.json + timing.json to out_dir.
RunRecord train_run(const RunConfig& config, TrainMode mode,
                    const std::string& teacher_checkpoint,
                    const std::string& out_dir);

struct LocalizeResult {
  double miou = 0.0;
  PredictionSet boxes;
};

// Grad-CAM + box extraction over annotated positives of the test split.
// min_area < 0 requests calibration from the train-split GT areas
// (nearest-rank percentile 0). Writes one HMAP per image, boxes.json and
// metrics.json when out_dir is non-empty.
LocalizeResult localize_run(NetworkState& net, const Dataset& data, double tau,
                            double min_area, const std::string& out_dir);
LocalizeResult localize_files(const std::string& checkpoint,
                              const std::string& dataset_dir, double tau,
                              double min_area, const std::string& out_dir);

// Classification metrics over the test split; writes metrics.json when
// out_dir is non-empty.
ClassificationReport evaluate_run(NetworkState& net, const Dataset& data,
                                  double threshold, const std::string& out_dir);
ClassificationReport evaluate_files(const std::string& checkpoint,
                                    const std::string& dataset_dir,
                                    double threshold,
                                    const std::string& out_dir);

enum class SweepAxis { Temperature, Alpha, Seed };
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepRow {
  double axis_value = 0.0;
  double teacher_miou = 0.0, student_miou = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double teacher_mean = 0.0, teacher_std = 0.0;
  double student_mean = 0.0, student_std = 0.0;
  bool student_beats_teacher = false;
};

// One teacher/student train+localize cycle per axis value; T and alpha axes
// reuse a single teacher, the seed axis retrains both. Writes sweep.csv
// (header axis_value,teacher_miou,student_miou, then mean/std rows) plus
// summary.json and per-run records under out_dir.
SweepResult sweep_run(const RunConfig& config, SweepAxis axis,
                      const std::vector<double>& values,
                      const std::string& out_dir, double tau = 0.5,
                      double min_area = -1.0);

struct HessianReportParams {
  int top_k = 10;
  int lanczos_steps = 50;
  int trace_probes = 500;
  double trace_rel_tol = 1e-3;
  EsdParams esd;
  std::size_t hessian_batch = 0;  // 0 = full training split
};

// Spectrum of the chosen loss at the checkpointed parameters over the
// training split. loss is "ce" or "kd" (the latter needs the teacher).
// Emits report.json + esd.csv (+ dense_check.json when the parameter count
// allows the dense oracle).
SpectrumReport hessian_report_run(const std::string& checkpoint,
                                  const std::string& dataset_dir,
                                  const std::string& loss,
                                  const std::string& teacher_checkpoint,
                                  const HessianReportParams& params,
                                  std::uint64_t seed,
                                  const std::string& out_dir);

// Grad function of the analyzed loss; exposed for the Hessian machinery.
GradFn dataset_loss_grad(NetworkState& net, const Tensor& batch,
                         const std::vector<int>& labels);
GradFn dataset_kd_loss_grad(NetworkState& net, NetworkState& teacher,
                            const Tensor& batch, const std::vector<int>& labels,
                            const KDParams& kd);

}  // namespace kdl
