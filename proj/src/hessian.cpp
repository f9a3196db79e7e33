#include "kdl/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "kdl/rng.hpp"

namespace kdl {

namespace {

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

HvpOracle fd_hvp_oracle(GradFn grad, Vec theta, double eps_base) {
  if (!(eps_base > 0.0)) throw ValidationError("eps must be > 0");
  double eps = eps_base * (1.0 + norm2(theta));
  std::size_t n = theta.size();
  HvpOracle oracle;
  oracle.dim = n;
  oracle.apply = [grad = std::move(grad), theta = std::move(theta), eps,
                  n](const Vec& v) -> Vec {
    if (v.size() != n) throw ValidationError("hvp: dimension mismatch");
    double vn = norm2(v);
    if (vn == 0.0) return Vec(n, 0.0);
    Vec plus = theta, minus = theta;
    for (std::size_t i = 0; i < n; ++i) {
      double d = eps * v[i] / vn;
      plus[i] += d;
      minus[i] -= d;
    }
    Vec gp = grad(plus);
    Vec gm = grad(minus);
    Vec out(n);
    double scale = vn / (2.0 * eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = (gp[i] - gm[i]) * scale;
    return out;
  };
  return oracle;
}

HvpOracle matrix_oracle(std::vector<Vec> matrix) {
  std::size_t n = matrix.size();
  HvpOracle o;
  o.dim = n;
  o.apply = [m = std::move(matrix), n](const Vec& v) -> Vec {
    if (v.size() != n) throw ValidationError("matrix oracle: dim mismatch");
    Vec out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i] += m[i][j] * v[j];
    return out;
  };
  return o;
}

DenseHessian dense_hessian(const HvpOracle& oracle, std::size_t max_dim) {
  std::size_t n = oracle.dim;
  if (n > max_dim)
    throw ValidationError("dense Hessian guarded to <= " +
                          std::to_string(max_dim) + " parameters");
  std::vector<Vec> h(n, Vec(n, 0.0));
  Vec e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    Vec col = oracle.apply(e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) h[i][j] = col[i];
  }
  DenseHessian out;
  out.matrix.assign(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      out.asymmetry = std::max(out.asymmetry, std::abs(h[i][j] - h[j][i]));
      out.matrix[i][j] = 0.5 * (h[i][j] + h[j][i]);
    }
  return out;
}

// cyclic Jacobi; fine for the desk-scale dimensions this project sees
std::pair<Vec, std::vector<Vec>> symmetric_eigen(std::vector<Vec> a) {
  std::size_t n = a.size();
  std::vector<Vec> v(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  if (n == 0) return {Vec{}, v};
  if (n == 1) return {Vec{a[0][0]}, v};

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-24 * n * n) break;
    for (std::size_t p = 0; p < n - 1; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  Vec vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a[i][i];
  // sort ascending, permuting eigenvector columns alongside
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return vals[x] < vals[y]; });
  Vec sv(n);
  std::vector<Vec> svec(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    sv[i] = vals[order[i]];
    for (std::size_t k = 0; k < n; ++k) svec[k][i] = v[k][order[i]];
  }
  return {sv, svec};
}

Vec symmetric_eigenvalues(std::vector<Vec> a) {
  return symmetric_eigen(std::move(a)).first;
}

namespace {

struct LanczosResult {
  Vec alpha;  // diagonal
  Vec beta;   // off-diagonal (size = steps - 1)
};

// Full reorthogonalization; stops on breakdown.
LanczosResult lanczos(const HvpOracle& oracle, int m, Rng& rng) {
  std::size_t n = oracle.dim;
  m = std::min<int>(m, static_cast<int>(n));
  Vec q(n);
  for (double& x : q) x = rng.rademacher();
  double qn = norm2(q);
  for (double& x : q) x /= qn;

  std::vector<Vec> basis{q};
  LanczosResult r;
  Vec w;
  for (int j = 0; j < m; ++j) {
    w = oracle.apply(basis[j]);
    double a = dot(w, basis[j]);
    r.alpha.push_back(a);
    for (std::size_t i = 0; i < n; ++i) w[i] -= a * basis[j][i];
    if (j > 0)
      for (std::size_t i = 0; i < n; ++i)
        w[i] -= r.beta[j - 1] * basis[j - 1][i];
    // full reorthogonalization, twice
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& b : basis) {
        double c = dot(w, b);
        for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
      }
    double bnorm = norm2(w);
    if (j + 1 == m) break;
    if (bnorm < 1e-12) break;  // invariant subspace found
    r.beta.push_back(bnorm);
    for (double& x : w) x /= bnorm;
    basis.push_back(w);
  }
  return r;
}

std::vector<Vec> tridiag_matrix(const LanczosResult& t) {
  std::size_t m = t.alpha.size();
  std::vector<Vec> a(m, Vec(m, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    a[i][i] = t.alpha[i];
    if (i + 1 < m) {
      a[i][i + 1] = t.beta[i];
      a[i + 1][i] = t.beta[i];
    }
  }
  return a;
}

}  // namespace

Vec lanczos_topk(const HvpOracle& oracle, int k, int m, std::uint64_t seed) {
  std::size_t n = oracle.dim;
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ValidationError("lanczos_topk: k out of range");
  if (m < k) throw ValidationError("lanczos_topk: m must be >= k");
  Rng rng = substream(seed, "lanczos");
  LanczosResult t = lanczos(oracle, m, rng);
  Vec ritz = symmetric_eigenvalues(tridiag_matrix(t));
  std::sort(ritz.begin(), ritz.end(), [](double a, double b) {
    return std::abs(a) > std::abs(b);
  });
  if (ritz.size() > static_cast<std::size_t>(k)) ritz.resize(k);
  return ritz;
}

TraceEstimate hutchinson_trace(const HvpOracle& oracle, int max_probes,
                               double rel_tol, std::uint64_t seed) {
  if (max_probes < 1) throw ValidationError("need at least one probe");
  Rng rng = substream(seed, "hutchinson");
  std::size_t n = oracle.dim;
  double sum = 0.0;
  std::vector<double> means;
  means.reserve(max_probes);
  Vec v(n);
  for (int p = 1; p <= max_probes; ++p) {
    for (double& x : v) x = rng.rademacher();
    Vec hv = oracle.apply(v);
    sum += dot(v, hv);
    double mean = sum / p;
    means.push_back(mean);
    if (p > 10) {
      double prev = means[p - 11];
      double scale = std::max(std::abs(mean), 1e-12);
      if (std::abs(mean - prev) < rel_tol * scale)
        return {mean, p};
    }
  }
  return {means.back(), max_probes};
}

std::vector<std::pair<double, double>> esd(const HvpOracle& oracle,
                                           const EsdParams& params) {
  if (params.lanczos_steps < 2) throw ValidationError("esd: m must be >= 2");
  if (!(params.sigma_frac > 0.0)) throw ValidationError("esd: sigma must be > 0");
  if (params.grid_points < 2) throw ValidationError("esd: grid too small");

  // gather Ritz values and quadrature weights over all probes
  std::vector<std::pair<double, double>> atoms;  // (eigenvalue, weight)
  for (int p = 0; p < params.n_probes; ++p) {
    Rng rng = substream(params.seed, "esd-probe", static_cast<std::uint64_t>(p));
    LanczosResult t = lanczos(oracle, params.lanczos_steps, rng);
    auto [vals, vecs] = symmetric_eigen(tridiag_matrix(t));
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double tau = vecs[0][i] * vecs[0][i];
      atoms.emplace_back(vals[i], tau / params.n_probes);
    }
  }

  double lo = atoms[0].first, hi = atoms[0].first;
  for (const auto& [lam, w] : atoms) {
    lo = std::min(lo, lam);
    hi = std::max(hi, lam);
  }
  double span = hi - lo;
  if (span <= 0.0) {  // single-atom spectrum: widen around it
    lo -= 1.0;
    hi += 1.0;
    span = 2.0;
  }
  double sigma = params.sigma_frac * span;

  double grid_lo = lo - 3.0 * sigma, grid_hi = hi + 3.0 * sigma;
  std::size_t g = static_cast<std::size_t>(params.grid_points);
  double step = (grid_hi - grid_lo) / static_cast<double>(g - 1);
  std::vector<std::pair<double, double>> density(g);
  double inv = 1.0 / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
  for (std::size_t i = 0; i < g; ++i) {
    double x = grid_lo + step * static_cast<double>(i);
    double d = 0.0;
    for (const auto& [lam, w] : atoms) {
      double z = (x - lam) / sigma;
      d += w * inv * std::exp(-0.5 * z * z);
    }
    density[i] = {x, d};
  }
  // trapezoid-normalize so the grid integral is exactly 1
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < g; ++i)
    integral += 0.5 * (density[i].second + density[i + 1].second) * step;
  if (integral > 0.0)
    for (auto& [x, d] : density) d /= integral;
  return density;
}

SpectrumReport spectrum_report(const HvpOracle& oracle, int top_k,
                               int lanczos_steps, int trace_probes,
                               double trace_rel_tol, const EsdParams& esd_params,
                               std::uint64_t seed) {
  SpectrumReport r;
  r.seed = seed;
  r.lanczos_steps = std::min<int>(lanczos_steps, static_cast<int>(oracle.dim));
  int k = std::min<int>(top_k, static_cast<int>(oracle.dim));
  r.top_eigenvalues = lanczos_topk(oracle, k, r.lanczos_steps, seed);
  TraceEstimate t = hutchinson_trace(oracle, trace_probes, trace_rel_tol, seed);
  r.trace = t.estimate;
  r.trace_probes = t.probes_used;
  EsdParams ep = esd_params;
  ep.seed = seed;
  ep.lanczos_steps = std::min<int>(ep.lanczos_steps, static_cast<int>(oracle.dim));
  if (ep.lanczos_steps < 2) ep.lanczos_steps = 2;
  if (oracle.dim >= 2) r.density = esd(oracle, ep);
  return r;
}

std::string spectrum_report_json(const SpectrumReport& r) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string s = "{\"top_eigenvalues\":[";
  for (std::size_t i = 0; i < r.top_eigenvalues.size(); ++i) {
    if (i) s += ",";
    s += num(r.top_eigenvalues[i]);
  }
  s += "],\"trace\":" + num(r.trace) + ",\"esd\":[";
  for (std::size_t i = 0; i < r.density.size(); ++i) {
    if (i) s += ",";
    s += "[" + num(r.density[i].first) + "," + num(r.density[i].second) + "]";
  }
  s += "],\"meta\":{\"seed\":" + std::to_string(r.seed) +
       ",\"lanczos_steps\":" + std::to_string(r.lanczos_steps) +
       ",\"trace_probes\":" + std::to_string(r.trace_probes) + "}}";
  return s;
}

std::string esd_csv(const std::vector<std::pair<double, double>>& density) {
  std::string s = "eigenvalue,density\n";
  char buf[80];
  for (const auto& [x, d] : density) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", x, d);
    s += buf;
  }
  return s;
}

}  // namespace kdl
