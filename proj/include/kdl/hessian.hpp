#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kdl/error.hpp"

namespace kdl {

using Vec = std::vector<double>;
// gradient of the analyzed loss at a parameter point
using GradFn = std::function<Vec(const Vec&)>;

struct HvpOracle {
  std::size_t dim = 0;
  std::function<Vec(const Vec&)> apply;
};

// H v by central differences of the gradient around theta:
// (g(theta + eps v_hat) - g(theta - eps v_hat)) * ||v|| / (2 eps),
// eps = eps_base * (1 + ||theta||). Zero v maps to zero.
// The default step is small enough that ReLU activations do not change sign
// across the stencil on desk-scale nets; larger steps make the operator
// visibly asymmetric.
HvpOracle fd_hvp_oracle(GradFn grad, Vec theta, double eps_base = 1e-5);

HvpOracle matrix_oracle(std::vector<Vec> matrix);

struct DenseHessian {
  std::vector<Vec> matrix;  // symmetrized, (H + H^T)/2
  double asymmetry = 0.0;   // max |H - H^T| before symmetrization
};

// Test/cross-check oracle: one HVP per basis vector. Guarded to small nets.
DenseHessian dense_hessian(const HvpOracle& oracle, std::size_t max_dim = 500);

// Eigenvalues (ascending) of a symmetric matrix; cyclic Jacobi.
Vec symmetric_eigenvalues(std::vector<Vec> a);
// Eigenvalues plus eigenvectors (columns of the returned matrix).
std::pair<Vec, std::vector<Vec>> symmetric_eigen(std::vector<Vec> a);

// Lanczos with full reorthogonalization from a seeded Rademacher start.
// Returns the k Ritz values of largest magnitude, signed, magnitude-descending.
Vec lanczos_topk(const HvpOracle& oracle, int k, int m, std::uint64_t seed);

struct TraceEstimate {
  double estimate = 0.0;
  int probes_used = 0;
};

// Hutchinson with Rademacher probes; stops early once the running mean moves
// by less than rel_tol over a 10-probe window.
TraceEstimate hutchinson_trace(const HvpOracle& oracle, int max_probes,
                               double rel_tol, std::uint64_t seed);

struct EsdParams {
  int n_probes = 10;
  int lanczos_steps = 50;
  double sigma_frac = 0.01;  // kernel width as fraction of the Ritz span
  int grid_points = 512;
  std::uint64_t seed = 0;
};

// Stochastic Lanczos quadrature density, Gaussian-broadened, normalized to
// integrate to 1 over the grid.
std::vector<std::pair<double, double>> esd(const HvpOracle& oracle,
                                           const EsdParams& params);

struct SpectrumReport {
  Vec top_eigenvalues;
  double trace = 0.0;
  int trace_probes = 0;
  std::vector<std::pair<double, double>> density;
  std::uint64_t seed = 0;
  int lanczos_steps = 0;
};

SpectrumReport spectrum_report(const HvpOracle& oracle, int top_k,
                               int lanczos_steps, int trace_probes,
                               double trace_rel_tol, const EsdParams& esd_params,
                               std::uint64_t seed);

std::string spectrum_report_json(const SpectrumReport& r);
std::string esd_csv(const std::vector<std::pair<double, double>>& density);

}  // namespace kdl
