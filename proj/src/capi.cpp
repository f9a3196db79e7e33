#include "kdl.h"

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdl/pipeline.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

const char* cstr(const char* s) { return s ? s : ""; }

kdl_status guard(const std::function<void()>& body) {
  try {
    g_last_error.clear();
    body();
    return KDL_OK;
  } catch (const kdl::NumericError& e) {
    g_last_error = e.what();
    return KDL_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KDL_ERR_VALIDATION;
  }
}

kdl::RunConfig config_from(const char* config_json, int64_t seed_override) {
  if (!config_json || !*config_json)
    throw kdl::ValidationError("missing config JSON");
  kdl::RunConfig c = kdl::parse_run_config(config_json);
  if (seed_override >= 0) {
    c.seed = static_cast<std::uint64_t>(seed_override);
    if (c.synthetic) c.synthetic->seed = c.seed;
  }
  return c;
}

std::vector<double> parse_values_csv(const char* values_csv) {
  std::vector<double> out;
  std::string s = cstr(values_csv);
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos
                                                               : comma - pos);
    if (!tok.empty()) {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size())
        throw kdl::ValidationError("bad sweep value '" + tok + "'");
      out.push_back(v);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw kdl::ValidationError("empty sweep value list");
  return out;
}

}  // namespace

extern "C" {

const char* kdl_last_error(void) { return g_last_error.c_str(); }

kdl_status kdl_gen_data(const char* config_json, int64_t seed_override,
                        const char* out_dir) {
  return guard([&] {
    kdl::RunConfig c = config_from(config_json, seed_override);
    if (!c.synthetic)
      throw kdl::ValidationError("gen-data needs a dataset.synthetic block");
    kdl::Dataset d = kdl::generate_dataset(*c.synthetic);
    kdl::export_dataset(d, cstr(out_dir));
  });
}

kdl_status kdl_train_teacher(const char* config_json, int64_t seed_override,
                             const char* out_dir) {
  return guard([&] {
    kdl::train_run(config_from(config_json, seed_override),
                   kdl::TrainMode::Teacher, "", cstr(out_dir));
  });
}

kdl_status kdl_train_student(const char* config_json, int64_t seed_override,
                             const char* teacher_checkpoint,
                             const char* out_dir) {
  return guard([&] {
    kdl::train_run(config_from(config_json, seed_override),
                   kdl::TrainMode::Student, cstr(teacher_checkpoint),
                   cstr(out_dir));
  });
}

kdl_status kdl_localize(const char* checkpoint, const char* dataset_dir,
                        double tau, double min_area, const char* out_dir) {
  return guard([&] {
    kdl::localize_files(cstr(checkpoint), cstr(dataset_dir), tau, min_area,
                        cstr(out_dir));
  });
}

kdl_status kdl_evaluate(const char* checkpoint, const char* dataset_dir,
                        double threshold, const char* out_dir) {
  return guard([&] {
    kdl::evaluate_files(cstr(checkpoint), cstr(dataset_dir), threshold,
                        cstr(out_dir));
  });
}

kdl_status kdl_sweep(const char* config_json, int64_t seed_override,
                     const char* axis, const char* values_csv, double tau,
                     double min_area, const char* out_dir) {
  return guard([&] {
    kdl::sweep_run(config_from(config_json, seed_override),
                   kdl::parse_sweep_axis(cstr(axis)),
                   parse_values_csv(values_csv), cstr(out_dir), tau, min_area);
  });
}

kdl_status kdl_hessian_report(const char* checkpoint, const char* dataset_dir,
                              const char* loss, const char* teacher_checkpoint,
                              const char* params_json, int64_t seed,
                              const char* out_dir) {
  return guard([&] {
    kdl::HessianReportParams p;
    if (params_json && *params_json) {
      json j = json::parse(params_json);
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "top_k")
          p.top_k = it->get<int>();
        else if (k == "lanczos_steps")
          p.lanczos_steps = it->get<int>();
        else if (k == "trace_probes")
          p.trace_probes = it->get<int>();
        else if (k == "trace_rel_tol")
          p.trace_rel_tol = it->get<double>();
        else if (k == "esd_probes")
          p.esd.n_probes = it->get<int>();
        else if (k == "esd_grid")
          p.esd.grid_points = it->get<int>();
        else if (k == "esd_sigma_frac")
          p.esd.sigma_frac = it->get<double>();
        else if (k == "hessian_batch")
          p.hessian_batch = it->get<std::size_t>();
        else
          throw kdl::ValidationError("unknown estimator parameter '" + k + "'");
      }
    }
    p.esd.lanczos_steps = p.lanczos_steps;
    kdl::hessian_report_run(cstr(checkpoint), cstr(dataset_dir), cstr(loss),
                            cstr(teacher_checkpoint), p,
                            seed >= 0 ? static_cast<std::uint64_t>(seed) : 42,
                            cstr(out_dir));
  });
}

struct kdl_model {
  kdl::NetworkState net;
};

kdl_status kdl_model_open(const char* checkpoint, kdl_model** out) {
  return guard([&] {
    if (!out) throw kdl::ValidationError("null output handle");
    auto* m = new kdl_model{kdl::load_checkpoint(cstr(checkpoint))};
    *out = m;
  });
}

void kdl_model_close(kdl_model* model) { delete model; }

int64_t kdl_model_param_count(const kdl_model* model) {
  return model ? static_cast<int64_t>(model->net.params.size()) : -1;
}

kdl_status kdl_model_score(kdl_model* model, const double* pixels,
                           int64_t height, int64_t width, double* score_out) {
  return guard([&] {
    if (!model || !pixels || !score_out)
      throw kdl::ValidationError("null argument");
    const auto& spec = model->net.spec;
    if (spec.in_channels != 1 || height != spec.in_height ||
        width != spec.in_width)
      throw kdl::ValidationError("image dimensions do not match model input");
    kdl::Tensor batch({1, 1, static_cast<std::size_t>(height),
                       static_cast<std::size_t>(width)});
    std::memcpy(batch.data.data(), pixels,
                sizeof(double) * batch.data.size());
    kdl::Tensor logits = kdl::forward(model->net, batch);
    kdl::Tensor probs = kdl::softmax_rows(logits);
    *score_out = probs.at2(0, 1);
  });
}

}  // extern "C"
