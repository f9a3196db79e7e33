#pragma once

#include <vector>

#include "kdl/error.hpp"

namespace kdl {

struct KDParams {
  double temperature = 2.0;  // T > 0
  double mix_alpha = 0.75;   // weight of the hard-label CE term, in [0,1]

  void validate() const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    if (mix_alpha < 0.0 || mix_alpha > 1.0)
      throw ValidationError("mix_alpha must lie in [0,1]");
  }
};

struct LogitPair {
  std::vector<double> teacher;
  std::vector<double> student;

  void validate() const;
};

// softmax(z / T) with max-subtraction.
std::vector<double> tempered_softmax(const std::vector<double>& logits,
                                     double temperature);

// T^2 * KL(softmax(z_t/T) || softmax(z_s/T)); teacher is the reference
// distribution.
double soft_target_loss(const LogitPair& pair, double temperature);

// Hard-label cross-entropy of the student logits at temperature 1.
double cross_entropy(const std::vector<double>& logits, int label);
std::vector<double> cross_entropy_grad(const std::vector<double>& logits,
                                       int label);

// (1 - alpha) * L_ST + alpha * L_CE
double total_loss(const LogitPair& pair, int label, const KDParams& kd);

// Analytic d total_loss / d student logits.
std::vector<double> total_loss_grad(const LogitPair& pair, int label,
                                    const KDParams& kd);

}  // namespace kdl
