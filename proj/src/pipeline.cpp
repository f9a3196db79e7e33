#include "kdl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "kdl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kdl {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known)
      throw ValidationError("unknown config key '" + it.key() + "' in " + where);
  }
}

std::pair<int, int> int_range(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    throw ValidationError(where + " must be a [lo, hi] pair");
  return {j[0].get<int>(), j[1].get<int>()};
}

SyntheticSpec parse_synthetic(const json& j, std::uint64_t seed) {
  reject_unknown(j,
                 {"height", "width", "blob_intensity", "blob_radius",
                  "blob_count", "token", "p_train", "p_test",
                  "positive_fraction", "n_train", "n_test", "noise"},
                 "dataset.synthetic");
  SyntheticSpec s;
  s.seed = seed;
  if (j.contains("height")) s.height = j["height"].get<int>();
  if (j.contains("width")) s.width = j["width"].get<int>();
  if (j.contains("blob_intensity")) {
    if (!j["blob_intensity"].is_array() || j["blob_intensity"].size() != 2)
      throw ValidationError("blob_intensity must be a [lo, hi] pair");
    s.blob_intensity_min = j["blob_intensity"][0].get<double>();
    s.blob_intensity_max = j["blob_intensity"][1].get<double>();
  }
  if (j.contains("blob_radius"))
    std::tie(s.blob_radius_min, s.blob_radius_max) =
        int_range(j["blob_radius"], "blob_radius");
  if (j.contains("blob_count"))
    std::tie(s.blob_count_min, s.blob_count_max) =
        int_range(j["blob_count"], "blob_count");
  if (j.contains("token")) {
    const json& t = j["token"];
    reject_unknown(t, {"height", "width", "intensity"}, "dataset.synthetic.token");
    if (t.contains("height")) s.token_h = t["height"].get<int>();
    if (t.contains("width")) s.token_w = t["width"].get<int>();
    if (t.contains("intensity")) s.token_intensity = t["intensity"].get<double>();
  }
  if (j.contains("p_train")) s.p_train = j["p_train"].get<double>();
  if (j.contains("p_test")) s.p_test = j["p_test"].get<double>();
  if (j.contains("positive_fraction"))
    s.positive_fraction = j["positive_fraction"].get<double>();
  if (j.contains("n_train")) s.n_train = j["n_train"].get<int>();
  if (j.contains("n_test")) s.n_test = j["n_test"].get<int>();
  if (j.contains("noise")) s.noise = j["noise"].get<double>();
  return s;
}

LayerDesc parse_layer(const json& j) {
  std::string type = j.at("type").get<std::string>();
  if (type == "conv") {
    reject_unknown(j, {"type", "in", "out", "kernel", "stride", "pad", "bias"},
                   "network layer");
    return LayerDesc::conv(j.at("in").get<int>(), j.at("out").get<int>(),
                           j.at("kernel").get<int>(), j.value("stride", 1),
                           j.value("pad", 0), j.value("bias", true));
  }
  if (type == "relu") {
    reject_unknown(j, {"type"}, "network layer");
    return LayerDesc::relu();
  }
  if (type == "maxpool") {
    reject_unknown(j, {"type", "kernel", "stride"}, "network layer");
    return LayerDesc::maxpool(j.at("kernel").get<int>(),
                              j.at("stride").get<int>());
  }
  if (type == "gap") {
    reject_unknown(j, {"type"}, "network layer");
    return LayerDesc::gap();
  }
  if (type == "dense") {
    reject_unknown(j, {"type", "in", "out", "bias"}, "network layer");
    return LayerDesc::dense(j.at("in").get<int>(), j.at("out").get<int>(),
                            j.value("bias", true));
  }
  throw ValidationError("unknown layer type '" + type + "'");
}

NetworkSpec parse_network(const json& j) {
  reject_unknown(j, {"input", "classes", "layers"}, "network");
  NetworkSpec spec;
  const json& in = j.at("input");
  if (!in.is_array() || in.size() != 3)
    throw ValidationError("network.input must be [C, H, W]");
  spec.in_channels = in[0].get<int>();
  spec.in_height = in[1].get<int>();
  spec.in_width = in[2].get<int>();
  spec.num_classes = j.value("classes", 2);
  for (const auto& L : j.at("layers")) spec.layers.push_back(parse_layer(L));
  return spec;
}

NetworkSpec default_network(int height, int width) {
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_height = height;
  spec.in_width = width;
  spec.num_classes = 2;
  spec.layers = {
      LayerDesc::conv(1, 8, 3, 2, 1),  LayerDesc::relu(),
      LayerDesc::conv(8, 16, 3, 2, 1), LayerDesc::relu(),
      LayerDesc::gap(),                LayerDesc::dense(16, 2),
  };
  return spec;
}

constexpr int kPositiveClass = 1;  // TB

}  // namespace

void RunConfig::validate() const {
  if (!dataset_path && !synthetic)
    throw ValidationError("config needs a dataset path or a synthetic spec");
  if (dataset_path && synthetic)
    throw ValidationError("config must pick one dataset source");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (!(lr > 0)) throw ValidationError("learning rate must be > 0");
  if (weight_decay < 0) throw ValidationError("weight decay must be >= 0");
  kd.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"dataset", "network", "optimizer", "max_epochs", "patience",
                  "kd", "seed", "augment", "fixed_shuffle"},
                 "config");
  RunConfig c;
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    reject_unknown(d, {"path", "synthetic"}, "dataset");
    if (d.contains("path")) c.dataset_path = d["path"].get<std::string>();
    if (d.contains("synthetic"))
      c.synthetic = parse_synthetic(d["synthetic"], c.seed);
  }
  if (j.contains("network")) c.network = parse_network(j["network"]);
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown(o, {"lr", "weight_decay", "batch"}, "optimizer");
    if (o.contains("lr")) c.lr = o["lr"].get<double>();
    if (o.contains("weight_decay"))
      c.weight_decay = o["weight_decay"].get<double>();
    if (o.contains("batch")) c.batch = o["batch"].get<int>();
  }
  if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<int>();
  if (j.contains("patience")) c.patience = j["patience"].get<int>();
  if (j.contains("kd")) {
    const json& k = j["kd"];
    reject_unknown(k, {"temperature", "alpha"}, "kd");
    if (k.contains("temperature"))
      c.kd.temperature = k["temperature"].get<double>();
    if (k.contains("alpha")) c.kd.mix_alpha = k["alpha"].get<double>();
  }
  if (j.contains("augment")) c.use_augment = j["augment"].get<bool>();
  if (j.contains("fixed_shuffle"))
    c.fixed_shuffle = j["fixed_shuffle"].get<bool>();
  c.validate();
  return c;
}

std::string run_config_json(const RunConfig& c) {
  ordered_json j;
  if (c.dataset_path) j["dataset"]["path"] = *c.dataset_path;
  if (c.synthetic) {
    const SyntheticSpec& s = *c.synthetic;
    j["dataset"]["synthetic"] = ordered_json{
        {"height", s.height},
        {"width", s.width},
        {"blob_intensity", {s.blob_intensity_min, s.blob_intensity_max}},
        {"blob_radius", {s.blob_radius_min, s.blob_radius_max}},
        {"blob_count", {s.blob_count_min, s.blob_count_max}},
        {"token",
         {{"height", s.token_h}, {"width", s.token_w}, {"intensity", s.token_intensity}}},
        {"p_train", s.p_train},
        {"p_test", s.p_test},
        {"positive_fraction", s.positive_fraction},
        {"n_train", s.n_train},
        {"n_test", s.n_test},
        {"noise", s.noise}};
  }
  if (c.network) {
    ordered_json layers = ordered_json::array();
    for (const auto& L : c.network->layers) {
      switch (L.kind) {
        case LayerKind::Conv2D:
          layers.push_back({{"type", "conv"},
                            {"in", L.in_ch},
                            {"out", L.out_ch},
                            {"kernel", L.kernel},
                            {"stride", L.stride},
                            {"pad", L.pad},
                            {"bias", L.has_bias}});
          break;
        case LayerKind::ReLU:
          layers.push_back({{"type", "relu"}});
          break;
        case LayerKind::MaxPool:
          layers.push_back({{"type", "maxpool"},
                            {"kernel", L.pool_kernel},
                            {"stride", L.pool_stride}});
          break;
        case LayerKind::GlobalAvgPool:
          layers.push_back({{"type", "gap"}});
          break;
        case LayerKind::Dense:
          layers.push_back({{"type", "dense"},
                            {"in", L.in_dim},
                            {"out", L.out_dim},
                            {"bias", L.has_bias}});
          break;
      }
    }
    j["network"] = ordered_json{
        {"input",
         {c.network->in_channels, c.network->in_height, c.network->in_width}},
        {"classes", c.network->num_classes},
        {"layers", std::move(layers)}};
  }
  j["optimizer"] = ordered_json{
      {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"batch", c.batch}};
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["kd"] = ordered_json{{"temperature", c.kd.temperature},
                         {"alpha", c.kd.mix_alpha}};
  j["seed"] = c.seed;
  j["augment"] = c.use_augment;
  j["fixed_shuffle"] = c.fixed_shuffle;
  return j.dump(2) + "\n";
}

std::pair<int, std::string> early_stop_scan(const std::vector<double>& losses,
                                            int patience, int max_epochs) {
  if (patience < 1 || max_epochs < 1)
    throw ValidationError("patience and max_epochs must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  int epoch = 0;
  for (double loss : losses) {
    ++epoch;
    if (loss < best) {
      best = loss;
      bad = 0;
    } else {
      ++bad;
    }
    if (bad >= patience) return {epoch, "early_stop"};
    if (epoch >= max_epochs) return {epoch, "max_epochs"};
  }
  return {epoch, "exhausted"};  // sequence ran out before any stop condition
}

Dataset resolve_dataset(const RunConfig& config) {
  config.validate();
  if (config.dataset_path) return import_dataset(*config.dataset_path);
  return generate_dataset(*config.synthetic);
}

NormStats norm_stats(const std::vector<Sample>& train) {
  if (train.empty()) throw ValidationError("empty train split");
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (const auto& s : train) {
    for (double v : s.image.data) {
      sum += v;
      sumsq += v * v;
    }
    n += s.image.data.size();
  }
  NormStats st;
  st.mean = sum / static_cast<double>(n);
  double var = sumsq / static_cast<double>(n) - st.mean * st.mean;
  st.stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
  return st;
}

namespace {

Tensor normalized_image(const Sample& s, const NormStats& st) {
  Tensor t = s.image;
  for (double& v : t.data) v = (v - st.mean) / st.stddev;
  return t;
}

Tensor batch_tensor(const std::vector<Tensor>& images,
                    const std::vector<std::size_t>& idx, std::size_t from,
                    std::size_t to) {
  const Tensor& first = images[idx[from]];
  Tensor b({to - from, first.shape[0], first.shape[1], first.shape[2]});
  std::size_t per = first.numel();
  for (std::size_t i = from; i < to; ++i)
    std::copy(images[idx[i]].data.begin(), images[idx[i]].data.end(),
              b.data.begin() + (i - from) * per);
  return b;
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

RunRecord train_run(const RunConfig& config, TrainMode mode,
                    const std::string& teacher_checkpoint,
                    const std::string& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  config.validate();
  Dataset data = resolve_dataset(config);
  if (data.train.empty()) throw ValidationError("dataset has no train split");

  NetworkState teacher;
  if (mode == TrainMode::Student) {
    if (teacher_checkpoint.empty())
      throw ValidationError("student training needs a teacher checkpoint");
    teacher = load_checkpoint(teacher_checkpoint);
  }

  NetworkSpec spec = config.network
                         ? *config.network
                         : default_network(static_cast<int>(data.train[0].image.shape[1]),
                                           static_cast<int>(data.train[0].image.shape[2]));
  NetworkState net = build_network(spec, config.seed);
  OptimizerState opt =
      OptimizerState::for_net(net, config.lr, config.weight_decay);

  NormStats st = norm_stats(data.train);
  std::size_t n = data.train.size();
  std::vector<int> labels(n);
  std::vector<Tensor> base_images(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = data.train[i].positive ? kPositiveClass : 0;
    base_images[i] = normalized_image(data.train[i], st);
  }

  RunRecord rec;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;

  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng = substream(config.seed, "shuffle",
                                config.fixed_shuffle ? 0 : epoch);
    shuffle_indices(idx, shuffle_rng);

    const std::vector<Tensor>* images = &base_images;
    std::vector<Tensor> aug_images;
    if (config.use_augment) {
      aug_images.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor raw = augment(data.train[i].image,
                             substream_seed(config.seed, "augment",
                                            static_cast<std::uint64_t>(epoch) * n + i));
        for (double& v : raw.data) v = (v - st.mean) / st.stddev;
        aug_images[i] = std::move(raw);
      }
      images = &aug_images;
    }

    double loss_sum = 0.0;
    for (std::size_t from = 0; from < n; from += config.batch) {
      std::size_t to = std::min(n, from + config.batch);
      Tensor batch = batch_tensor(*images, idx, from, to);
      std::size_t bs = to - from;
      std::vector<int> blabels(bs);
      for (std::size_t i = 0; i < bs; ++i) blabels[i] = labels[idx[from + i]];

      double batch_loss;
      BackpropResult bp;
      if (mode == TrainMode::Teacher) {
        forward(net, batch);
        bp = backward(net, batch, blabels);
        batch_loss = bp.loss;
      } else {
        Tensor zt = forward(teacher, batch);
        Tensor zs = forward(net, batch);
        Tensor dlogits({bs, static_cast<std::size_t>(spec.num_classes)});
        batch_loss = 0.0;
        for (std::size_t i = 0; i < bs; ++i) {
          LogitPair pair;
          pair.teacher.assign(zt.data.begin() + i * spec.num_classes,
                              zt.data.begin() + (i + 1) * spec.num_classes);
          pair.student.assign(zs.data.begin() + i * spec.num_classes,
                              zs.data.begin() + (i + 1) * spec.num_classes);
          batch_loss += total_loss(pair, blabels[i], config.kd);
          auto g = total_loss_grad(pair, blabels[i], config.kd);
          for (int c = 0; c < spec.num_classes; ++c)
            dlogits.at2(i, c) = g[c] / static_cast<double>(bs);
        }
        batch_loss /= static_cast<double>(bs);
        bp = backprop_from_logit_grad(net, dlogits);
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("training loss diverged at epoch " +
                           std::to_string(epoch));
      adam_step(opt, net, bp.grad);
      loss_sum += batch_loss * static_cast<double>(bs);
    }

    double epoch_loss = loss_sum / static_cast<double>(n);
    rec.epoch_losses.push_back(epoch_loss);

    if (epoch_loss < best) {
      best = epoch_loss;
      bad = 0;
    } else {
      ++bad;
    }
    if (bad >= config.patience) {
      rec.stopping_epoch = epoch;
      rec.stopping_reason = "early_stop";
      break;
    }
    if (epoch == config.max_epochs) {
      rec.stopping_epoch = epoch;
      rec.stopping_reason = "max_epochs";
    }
  }
  rec.final_train_loss = rec.epoch_losses.back();

  fs::create_directories(out_dir);
  rec.checkpoint_path = (fs::path(out_dir) / "checkpoint.kdl1").string();
  save_checkpoint(net, rec.checkpoint_path);

  ordered_json j;
  j["config"] = json::parse(run_config_json(config));
  j["mode"] = mode == TrainMode::Teacher ? "teacher" : "student";
  j["epoch_losses"] = rec.epoch_losses;
  j["stopping_epoch"] = rec.stopping_epoch;
  j["stopping_reason"] = rec.stopping_reason;
  j["checkpoint"] = "checkpoint.kdl1";
  j["final_train_loss"] = rec.final_train_loss;
  write_text((fs::path(out_dir) / "run_record.json").string(), j.dump(2) + "\n");

  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // timing goes to a sidecar so the primary outputs stay byte-identical
  char tbuf[64];
  std::snprintf(tbuf, sizeof(tbuf), "{\"wall_clock_sec\":%.3f}\n",
                rec.wall_clock_sec);
  write_text((fs::path(out_dir) / "timing.json").string(), tbuf);
  return rec;
}

LocalizeResult localize_run(NetworkState& net, const Dataset& data, double tau,
                            double min_area, const std::string& out_dir) {
  if (data.train.empty() && min_area < 0)
    throw ValidationError("min_area calibration needs a train split");

  AnnotationSet ann;
  for (const auto& s : data.test)
    if (!s.gt_boxes.empty()) ann[s.id] = s.gt_boxes;
  if (ann.empty())
    throw ValidationError("dataset has no annotated positives in the test split");

  if (min_area < 0) {
    std::vector<BBox> train_boxes;
    for (const auto& s : data.train)
      for (const auto& b : s.gt_boxes) train_boxes.push_back(b);
    min_area = min_area_from_annotations(train_boxes, 0.0);
  }

  NormStats st = norm_stats(data.train.empty() ? data.test : data.train);
  std::size_t conv = last_conv_layer(net.spec);

  if (!out_dir.empty()) fs::create_directories(out_dir);
  LocalizeResult res;
  for (const auto& s : data.test) {
    if (s.gt_boxes.empty()) continue;
    Tensor img = normalized_image(s, st);
    Heatmap h = gradcam(net, img, kPositiveClass, conv);
    res.boxes[s.id] = boxes_from_heatmap(h, tau, min_area);
    if (!out_dir.empty())
      save_heatmap(h, (fs::path(out_dir) / (s.id + ".hmap")).string());
  }
  res.miou = miou_dataset(ann, res.boxes);

  if (!out_dir.empty()) {
    write_text((fs::path(out_dir) / "boxes.json").string(),
               boxes_to_json(res.boxes));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "{\"miou\":%.17g}\n", res.miou);
    write_text((fs::path(out_dir) / "metrics.json").string(), buf);
  }
  return res;
}

LocalizeResult localize_files(const std::string& checkpoint,
                              const std::string& dataset_dir, double tau,
                              double min_area, const std::string& out_dir) {
  NetworkState net = load_checkpoint(checkpoint);
  Dataset data = import_dataset(dataset_dir);
  return localize_run(net, data, tau, min_area, out_dir);
}

namespace {

std::vector<ScoredLabel> score_test_split(NetworkState& net,
                                          const Dataset& data) {
  if (data.test.empty()) throw ValidationError("dataset has no test split");
  NormStats st = norm_stats(data.train.empty() ? data.test : data.train);
  std::vector<ScoredLabel> scored;
  scored.reserve(data.test.size());
  for (const auto& s : data.test) {
    Tensor img = normalized_image(s, st);
    Tensor batch({1, img.shape[0], img.shape[1], img.shape[2]});
    batch.data = img.data;
    Tensor logits = forward(net, batch);
    Tensor probs = softmax_rows(logits);
    scored.push_back({probs.at2(0, kPositiveClass), s.positive});
  }
  return scored;
}

std::string metrics_json(const ClassificationReport& r,
                         std::optional<double> miou) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string s = "{";
  s += "\"accuracy\":" + num(r.accuracy);
  s += ",\"auc\":" + (r.auc ? num(*r.auc) : std::string("null"));
  s += ",\"sensitivity\":" + num(r.sensitivity);
  s += ",\"specificity\":" + num(r.specificity);
  s += ",\"avg_precision\":" + num(r.avg_precision);
  s += ",\"avg_recall\":" + num(r.avg_recall);
  if (miou) s += ",\"miou\":" + num(*miou);
  s += "}\n";
  return s;
}

}  // namespace

ClassificationReport evaluate_run(NetworkState& net, const Dataset& data,
                                  double threshold,
                                  const std::string& out_dir) {
  auto scored = score_test_split(net, data);
  ClassificationReport r = classification_report(scored, threshold);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "metrics.json").string(),
               metrics_json(r, std::nullopt));
  }
  return r;
}

ClassificationReport evaluate_files(const std::string& checkpoint,
                                    const std::string& dataset_dir,
                                    double threshold,
                                    const std::string& out_dir) {
  NetworkState net = load_checkpoint(checkpoint);
  Dataset data = import_dataset(dataset_dir);
  return evaluate_run(net, data, threshold, out_dir);
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "temperature") return SweepAxis::Temperature;
  if (name == "alpha") return SweepAxis::Alpha;
  if (name == "seed") return SweepAxis::Seed;
  throw ValidationError("unknown sweep axis '" + name +
                        "' (temperature|alpha|seed)");
}

namespace {

struct CycleResult {
  double teacher_miou = 0.0, student_miou = 0.0;
};

CycleResult run_cycle(const RunConfig& teacher_cfg, const RunConfig& student_cfg,
                      const std::string& run_dir, double tau, double min_area,
                      const std::string& shared_teacher_ckpt) {
  std::string teacher_ckpt = shared_teacher_ckpt;
  if (teacher_ckpt.empty()) {
    RunRecord t =
        train_run(teacher_cfg, TrainMode::Teacher, "", run_dir + "/teacher");
    teacher_ckpt = t.checkpoint_path;
  }
  RunRecord s = train_run(student_cfg, TrainMode::Student, teacher_ckpt,
                          run_dir + "/student");
  Dataset data = resolve_dataset(student_cfg);
  NetworkState teacher = load_checkpoint(teacher_ckpt);
  NetworkState student = load_checkpoint(s.checkpoint_path);
  CycleResult r;
  r.teacher_miou =
      localize_run(teacher, data, tau, min_area, run_dir + "/teacher_localize").miou;
  r.student_miou =
      localize_run(student, data, tau, min_area, run_dir + "/student_localize").miou;
  return r;
}

void mean_std(const std::vector<double>& xs, double& mean, double& stdev) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  stdev = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace

SweepResult sweep_run(const RunConfig& config, SweepAxis axis,
                      const std::vector<double>& values,
                      const std::string& out_dir, double tau, double min_area) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  config.validate();
  fs::create_directories(out_dir);

  // T and alpha only touch the student objective, so one teacher serves all
  std::string shared_teacher;
  if (axis != SweepAxis::Seed) {
    RunRecord t =
        train_run(config, TrainMode::Teacher, "", out_dir + "/teacher");
    shared_teacher = t.checkpoint_path;
  }

  SweepResult result;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    RunConfig teacher_cfg = config;
    RunConfig student_cfg = config;
    switch (axis) {
      case SweepAxis::Temperature:
        if (!(v > 0)) throw ValidationError("temperature values must be > 0");
        student_cfg.kd.temperature = v;
        break;
      case SweepAxis::Alpha:
        if (v < 0 || v > 1)
          throw ValidationError("alpha values must lie in [0,1]");
        student_cfg.kd.mix_alpha = v;
        break;
      case SweepAxis::Seed: {
        if (v < 0 || v != std::floor(v))
          throw ValidationError("seed values must be non-negative integers");
        auto s = static_cast<std::uint64_t>(v);
        teacher_cfg.seed = s;
        student_cfg.seed = s;
        if (teacher_cfg.synthetic) teacher_cfg.synthetic->seed = s;
        if (student_cfg.synthetic) student_cfg.synthetic->seed = s;
        break;
      }
    }
    SweepRow row;
    row.axis_value = v;
    char dirname[48];
    std::snprintf(dirname, sizeof(dirname), "run_%03zu", i);
    try {
      CycleResult c = run_cycle(teacher_cfg, student_cfg,
                                (fs::path(out_dir) / dirname).string(), tau,
                                min_area, shared_teacher);
      row.teacher_miou = c.teacher_miou;
      row.student_miou = c.student_miou;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  std::vector<double> tm, sm;
  for (const auto& r : result.rows)
    if (!r.failed) {
      tm.push_back(r.teacher_miou);
      sm.push_back(r.student_miou);
    }
  if (tm.empty()) throw NumericError("every sweep run failed");
  mean_std(tm, result.teacher_mean, result.teacher_std);
  mean_std(sm, result.student_mean, result.student_std);
  result.student_beats_teacher = result.student_mean > result.teacher_mean;

  std::string csv = "axis_value,teacher_miou,student_miou\n";
  char line[128];
  for (const auto& r : result.rows) {
    if (r.failed)
      std::snprintf(line, sizeof(line), "%g,failed,failed\n", r.axis_value);
    else
      std::snprintf(line, sizeof(line), "%g,%.6f,%.6f\n", r.axis_value,
                    r.teacher_miou, r.student_miou);
    csv += line;
  }
  std::snprintf(line, sizeof(line), "mean,%.6f,%.6f\n", result.teacher_mean,
                result.student_mean);
  csv += line;
  std::snprintf(line, sizeof(line), "std,%.6f,%.6f\n", result.teacher_std,
                result.student_std);
  csv += line;
  write_text((fs::path(out_dir) / "sweep.csv").string(), csv);

  ordered_json summary;
  summary["teacher_miou_mean"] = result.teacher_mean;
  summary["teacher_miou_std"] = result.teacher_std;
  summary["student_miou_mean"] = result.student_mean;
  summary["student_miou_std"] = result.student_std;
  summary["student_beats_teacher"] = result.student_beats_teacher;
  ordered_json failures = ordered_json::array();
  for (const auto& r : result.rows)
    if (r.failed)
      failures.push_back({{"axis_value", r.axis_value}, {"error", r.error}});
  summary["failed_runs"] = failures;
  write_text((fs::path(out_dir) / "summary.json").string(),
             summary.dump(2) + "\n");
  return result;
}

GradFn dataset_loss_grad(NetworkState& net, const Tensor& batch,
                         const std::vector<int>& labels) {
  return [&net, batch, labels](const Vec& theta) -> Vec {
    net.params = theta;
    forward(net, batch);
    return backward(net, batch, labels).grad;
  };
}

GradFn dataset_kd_loss_grad(NetworkState& net, NetworkState& teacher,
                            const Tensor& batch, const std::vector<int>& labels,
                            const KDParams& kd) {
  Tensor zt = forward(teacher, batch);
  int classes = net.spec.num_classes;
  return [&net, batch, labels, zt, classes, kd](const Vec& theta) -> Vec {
    net.params = theta;
    Tensor zs = forward(net, batch);
    std::size_t n = batch.shape[0];
    Tensor dlogits({n, static_cast<std::size_t>(classes)});
    for (std::size_t i = 0; i < n; ++i) {
      LogitPair pair;
      pair.teacher.assign(zt.data.begin() + i * classes,
                          zt.data.begin() + (i + 1) * classes);
      pair.student.assign(zs.data.begin() + i * classes,
                          zs.data.begin() + (i + 1) * classes);
      auto g = total_loss_grad(pair, labels[i], kd);
      for (int c = 0; c < classes; ++c)
        dlogits.at2(i, c) = g[c] / static_cast<double>(n);
    }
    return backprop_from_logit_grad(net, dlogits).grad;
  };
}

SpectrumReport hessian_report_run(const std::string& checkpoint,
                                  const std::string& dataset_dir,
                                  const std::string& loss,
                                  const std::string& teacher_checkpoint,
                                  const HessianReportParams& params,
                                  std::uint64_t seed,
                                  const std::string& out_dir) {
  if (loss != "ce" && loss != "kd")
    throw ValidationError("loss must be 'ce' or 'kd'");
  if (loss == "kd" && teacher_checkpoint.empty())
    throw ValidationError("kd loss needs a teacher checkpoint");

  NetworkState net = load_checkpoint(checkpoint);
  Dataset data = import_dataset(dataset_dir);
  if (data.train.empty()) throw ValidationError("dataset has no train split");

  NormStats st = norm_stats(data.train);
  std::size_t n = data.train.size();
  if (params.hessian_batch > 0) n = std::min(n, params.hessian_batch);
  Tensor batch({n, data.train[0].image.shape[0], data.train[0].image.shape[1],
                data.train[0].image.shape[2]});
  std::vector<int> labels(n);
  std::size_t per = data.train[0].image.numel();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img = normalized_image(data.train[i], st);
    std::copy(img.data.begin(), img.data.end(), batch.data.begin() + i * per);
    labels[i] = data.train[i].positive ? kPositiveClass : 0;
  }

  NetworkState teacher;
  GradFn grad;
  if (loss == "kd") {
    teacher = load_checkpoint(teacher_checkpoint);
    grad = dataset_kd_loss_grad(net, teacher, batch, labels, KDParams{});
  } else {
    grad = dataset_loss_grad(net, batch, labels);
  }
  Vec theta = load_checkpoint(checkpoint).params;
  HvpOracle oracle = fd_hvp_oracle(grad, theta);

  SpectrumReport report =
      spectrum_report(oracle, params.top_k, params.lanczos_steps,
                      params.trace_probes, params.trace_rel_tol, params.esd, seed);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "report.json").string(),
               spectrum_report_json(report) + "\n");
    write_text((fs::path(out_dir) / "esd.csv").string(),
               esd_csv(report.density));
    if (oracle.dim <= 500) {
      DenseHessian dense = dense_hessian(oracle);
      Vec eig = symmetric_eigenvalues(dense.matrix);
      double dtrace = 0.0;
      for (std::size_t i = 0; i < dense.matrix.size(); ++i)
        dtrace += dense.matrix[i][i];
      std::sort(eig.begin(), eig.end(), [](double a, double b) {
        return std::abs(a) > std::abs(b);
      });
      ordered_json check;
      check["dense_trace"] = dtrace;
      check["trace_rel_delta"] =
          std::abs(report.trace - dtrace) / std::max(std::abs(dtrace), 1e-12);
      check["asymmetry"] = dense.asymmetry;
      ordered_json deltas = ordered_json::array();
      for (std::size_t i = 0;
           i < report.top_eigenvalues.size() && i < eig.size(); ++i)
        deltas.push_back(std::abs(report.top_eigenvalues[i] - eig[i]) /
                         std::max(std::abs(eig[i]), 1e-12));
      check["top_eigenvalue_rel_deltas"] = deltas;
      write_text((fs::path(out_dir) / "dense_check.json").string(),
                 check.dump(2) + "\n");
    }
  }
  return report;
}

}  // namespace kdl
