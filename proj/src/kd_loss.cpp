#include "kdl/kd_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kdl {

namespace {
constexpr double kProbFloor = 1e-300;  // clamp before log
}

void LogitPair::validate() const {
  if (teacher.size() != student.size())
    throw ValidationError("teacher/student logit lengths differ");
  if (teacher.size() < 2) throw ValidationError("need at least 2 classes");
  for (double v : teacher)
    if (!std::isfinite(v)) throw ValidationError("non-finite teacher logit");
  for (double v : student)
    if (!std::isfinite(v)) throw ValidationError("non-finite student logit");
}

std::vector<double> tempered_softmax(const std::vector<double>& logits,
                                     double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double soft_target_loss(const LogitPair& pair, double temperature) {
  pair.validate();
  auto pt = tempered_softmax(pair.teacher, temperature);
  auto ps = tempered_softmax(pair.student, temperature);
  double kl = 0.0;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (pt[i] <= 0.0) continue;
    kl += pt[i] * (std::log(std::max(pt[i], kProbFloor)) -
                   std::log(std::max(ps[i], kProbFloor)));
  }
  return temperature * temperature * kl;
}

double cross_entropy(const std::vector<double>& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ValidationError("label out of range");
  auto p = tempered_softmax(logits, 1.0);
  return -std::log(std::max(p[label], kProbFloor));
}

std::vector<double> cross_entropy_grad(const std::vector<double>& logits,
                                       int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ValidationError("label out of range");
  auto g = tempered_softmax(logits, 1.0);
  g[label] -= 1.0;
  return g;
}

double total_loss(const LogitPair& pair, int label, const KDParams& kd) {
  kd.validate();
  pair.validate();
  double st = soft_target_loss(pair, kd.temperature);
  double ce = cross_entropy(pair.student, label);
  return (1.0 - kd.mix_alpha) * st + kd.mix_alpha * ce;
}

std::vector<double> total_loss_grad(const LogitPair& pair, int label,
                                    const KDParams& kd) {
  kd.validate();
  pair.validate();
  double T = kd.temperature;
  auto pt = tempered_softmax(pair.teacher, T);
  auto ps = tempered_softmax(pair.student, T);
  auto ce = cross_entropy_grad(pair.student, label);
  // d/dz_s of T^2 KL(p_t || p_s(z/T)) is T (p_s - p_t)
  std::vector<double> g(ps.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (1.0 - kd.mix_alpha) * T * (ps[i] - pt[i]) + kd.mix_alpha * ce[i];
  return g;
}

}  // namespace kdl
