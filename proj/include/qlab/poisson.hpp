#pragma once

#include "qlab/common.hpp"
#include "qlab/diffusion.hpp"
#include "qlab/simulate.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace qlab {

using scalar_fn = std::function<double(double)>;

namespace detail {

/// 4th-order first-derivative stencils on a uniform grid, windows shifted so
/// they never straddle a segment boundary (kinks in the drift make the third
/// derivative of the solution jump there).
inline double fd4_first(const std::vector<double>& f, int i, double h, int seg_lo, int seg_hi) {
  static const double w[5][5] = {
      {-25.0, 48.0, -36.0, 16.0, -3.0},   // window starts at i
      {-3.0, -10.0, 18.0, -6.0, 1.0},     // i-1
      {1.0, -8.0, 0.0, 8.0, -1.0},        // i-2 (central)
      {-1.0, 6.0, -18.0, 10.0, 3.0},      // i-3
      {3.0, -16.0, 36.0, -48.0, 25.0}};   // i-4
  int start = std::min(std::max(i - 2, seg_lo), seg_hi - 4);
  if (start < seg_lo || start + 4 > seg_hi)
    throw solver_error("fd4_first: segment shorter than stencil");
  const int shift = i - start;  // 0..4
  double acc = 0.0;
  for (int k = 0; k < 5; ++k) acc += w[shift][k] * f[start + k];
  return acc / (12.0 * h);
}

}  // namespace detail

/// Solution of the DM Poisson equation A^n u = -(f - pi(f)) on a 1-d grid.
/// u is normalized by u(0) = 0; derivative grids come from the integrating
/// factor closed form and the residual is measured by re-applying the
/// generator with finite-difference derivatives of the stored grids.
struct poisson_solution {
  grid1d grid;                    // reporting grid
  std::vector<double> u;
  std::vector<double> du;
  std::vector<double> d2u;
  std::vector<double> residual;   // A u + (f - pi_f), finite-difference route
  double residual_sup = 0.0;
  double pi_f = 0.0;              // centering constant
  double error_budget = 0.0;      // tail truncation + edge contamination bound

  // internal work representation (padded, half step) for evaluators
  grid1d work;
  std::vector<double> work_u;
  std::vector<double> work_du;
  std::vector<int> segment_bounds;  // work indices of edges and kinks
  scalar_fn drift;
  scalar_fn f_centered;
  double avar0 = 0.0;

  double du_at(double x) const {
    // 4-point Lagrange interpolation within the segment containing x
    const int i = std::min(std::max(static_cast<int>((x - work.lo) / work.step), 0),
                           work.n_points - 2);
    int seg_lo = segment_bounds.front(), seg_hi = segment_bounds.back();
    for (std::size_t s = 0; s + 1 < segment_bounds.size(); ++s)
      if (segment_bounds[s] <= i && i < segment_bounds[s + 1]) {
        seg_lo = segment_bounds[s];
        seg_hi = segment_bounds[s + 1];
      }
    int start = std::min(std::max(i - 1, seg_lo), seg_hi - 3);
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
      double basis = 1.0;
      const double xa = work[start + a];
      for (int b = 0; b < 4; ++b) {
        if (a == b) continue;
        basis *= (x - work[start + b]) / (xa - work[start + b]);
      }
      acc += basis * work_du[start + a];
    }
    return acc;
  }

  /// u'' from the equation itself: u'' = -(2/a)(fcheck + Fhat u').
  double d2u_at(double x) const {
    return -(2.0 / avar0) * (f_centered(x) + drift(x) * du_at(x));
  }
};

struct poisson_options {
  double pad = 4.0;           // box padding absorbing edge contamination
  double edge_tol = 1e-6;     // max relative density allowed at the padded edge
};

inline poisson_solution solve_poisson_1d(const diffusion_model& dm, const scalar_fn& f,
                                         double lo, double hi, double step,
                                         const poisson_options& opt = {}) {
  if (dm.dimension != 1) throw model_error("solve_poisson_1d: scalar models only");
  const double a0 = dm.avar0_scalar();
  const auto drift_field = dm.drift_hat;  // owned copy, outlives the caller's model
  auto drift = [drift_field](double x) { return drift_field(scalar_vec(x))[0]; };

  // report grid anchored so kinks sit on nodes; padded work grid at half
  // step shares every second node with it
  const double anchor = dm.drift_kinks.empty() ? lo : dm.drift_kinks.front();
  const grid1d report = grid1d::with_anchor(lo, hi, step, anchor);
  const double h = report.step, s = 0.5 * h;
  const int pad_cells = static_cast<int>(std::ceil(opt.pad / h));
  grid1d work;
  work.lo = report.lo - pad_cells * h;
  work.step = s;
  work.n_points = 2 * (report.n_points - 1 + 2 * pad_cells) + 1;
  const int W = work.n_points;
  const int report_offset = 2 * pad_cells;  // work index of report node 0

  // log-density Phi and density p on the work grid (per-cell Gauss)
  std::vector<double> phi(W), p(W);
  phi[0] = 0.0;
  auto dphi = [&](double y) { return (2.0 / a0) * drift(y); };
  for (int i = 1; i < W; ++i) phi[i] = phi[i - 1] + gauss3(dphi, work[i - 1], work[i]);
  const double phi_max = *std::max_element(phi.begin(), phi.end());
  for (int i = 0; i < W; ++i) p[i] = std::exp(phi[i] - phi_max);
  auto density_at = [&](double y) {
    int i = std::min(std::max(static_cast<int>((y - work.lo) / work.step), 0), W - 1);
    return std::exp(phi[i] + gauss3(dphi, work[i], y) - phi_max);
  };
  const double p_max = *std::max_element(p.begin(), p.end());
  if (std::max(p.front(), p.back()) > opt.edge_tol * p_max)
    throw solver_error("solve_poisson_1d: stationary mass not negligible at the padded edge; "
                       "enlarge the box");

  // cumulative integrals of p and f p from both edges (same quadrature rule,
  // so the centered integrand telescopes to zero at the far edge)
  std::vector<double> cell_p(W - 1), cell_fp(W - 1);
  for (int i = 0; i + 1 < W; ++i) {
    cell_p[i] = gauss3(density_at, work[i], work[i + 1]);
    cell_fp[i] = gauss3([&](double y) { return f(y) * density_at(y); }, work[i], work[i + 1]);
  }
  std::vector<double> P_left(W, 0.0), F_left(W, 0.0), P_right(W, 0.0), F_right(W, 0.0);
  for (int i = 1; i < W; ++i) {
    P_left[i] = P_left[i - 1] + cell_p[i - 1];
    F_left[i] = F_left[i - 1] + cell_fp[i - 1];
  }
  for (int i = W - 2; i >= 0; --i) {
    P_right[i] = P_right[i + 1] + cell_p[i];
    F_right[i] = F_right[i + 1] + cell_fp[i];
  }
  const double mass = P_left[W - 1];
  const double pi_f = F_left[W - 1] / mass;
  auto fcheck = [f, pi_f](double y) { return f(y) - pi_f; };

  // u' by the integrating factor; left form below the mode, right form above
  int mode = 0;
  for (int i = 1; i < W; ++i)
    if (p[i] > p[mode]) mode = i;
  std::vector<double> du_w(W);
  for (int i = 0; i < W; ++i) {
    const double g = (i <= mode) ? (F_left[i] - pi_f * P_left[i])
                                 : -(F_right[i] - pi_f * P_right[i]);
    du_w[i] = -(2.0 / a0) * g / p[i];
  }
  auto du_cont = [&](double y) {
    // same construction at an off-grid point
    const int i = std::min(std::max(static_cast<int>((y - work.lo) / work.step), 0), W - 2);
    const double gl = F_left[i] - pi_f * P_left[i] +
                      gauss3([&](double t) { return fcheck(t) * density_at(t); }, work[i], y);
    double g;
    if (i <= mode) {
      g = gl;
    } else {
      const double gr = F_right[i + 1] - pi_f * P_right[i + 1] +
                        gauss3([&](double t) { return fcheck(t) * density_at(t); }, y,
                               work[i + 1]);
      g = -gr;
    }
    return -(2.0 / a0) * g / density_at(y);
  };

  // u by cumulative per-cell Gauss of u', normalized at the node nearest 0
  std::vector<double> u_w(W, 0.0);
  for (int i = 1; i < W; ++i) u_w[i] = u_w[i - 1] + gauss3(du_cont, work[i - 1], work[i]);
  const int zero_node = work.nearest_index(0.0);
  const double u0 = u_w[zero_node] + gauss3(du_cont, work[zero_node], 0.0);
  for (int i = 0; i < W; ++i) u_w[i] -= u0;

  // segment boundaries: work edges plus drift kinks snapped to nodes
  std::vector<int> segs = {0};
  for (double k : dm.drift_kinks) {
    const int ki = work.nearest_index(k);
    if (ki > 0 && ki < W - 1) segs.push_back(ki);
  }
  segs.push_back(W - 1);
  std::sort(segs.begin(), segs.end());
  segs.erase(std::unique(segs.begin(), segs.end()), segs.end());

  poisson_solution sol;
  sol.grid = report;
  sol.work = work;
  sol.work_u = u_w;
  sol.work_du = du_w;
  sol.segment_bounds = segs;
  sol.pi_f = pi_f;
  sol.avar0 = a0;
  sol.drift = drift;
  sol.f_centered = fcheck;

  const int R = report.n_points;
  sol.u.resize(R);
  sol.du.resize(R);
  sol.d2u.resize(R);
  sol.residual.resize(R);
  auto segment_of = [&](int wi) {
    for (std::size_t q = 0; q + 1 < segs.size(); ++q)
      if (segs[q] <= wi && wi <= segs[q + 1]) return std::pair(segs[q], segs[q + 1]);
    return std::pair(segs.front(), segs.back());
  };
  double rsup = 0.0;
  for (int i = 0; i < R; ++i) {
    const double x = report[i];
    const int wi = report_offset + 2 * i;
    const auto [slo, shi] = segment_of(wi);
    sol.u[i] = u_w[wi];
    sol.du[i] = du_w[wi];
    sol.d2u[i] = -(2.0 / a0) * (fcheck(x) + drift(x) * du_w[wi]);
    const double fd_du = detail::fd4_first(u_w, wi, s, slo, shi);
    const double fd_d2u = detail::fd4_first(du_w, wi, s, slo, shi);
    sol.residual[i] = drift(x) * fd_du + 0.5 * a0 * fd_d2u + fcheck(x);
    rsup = std::max(rsup, std::fabs(sol.residual[i]));
  }
  sol.residual_sup = rsup;

  // error budget: mass beyond the padded box times sup |fcheck|, plus the
  // homogeneous-solution contamination (truncated tail integral scaled by
  // 1/p) transported inward to the same-side report boundary
  double sup_fc = 0.0;
  for (int i = 0; i < R; ++i) sup_fc = std::max(sup_fc, std::fabs(fcheck(report[i])));
  double tail = 0.0, contamination = 0.0;
  const std::pair<double, double> edges[] = {{work.lo, report.lo}, {work.hi(), report.hi()}};
  for (const auto& [edge, inner] : edges) {
    const double fd = std::max(std::fabs(drift(edge)), 1e-12);
    tail += density_at(edge) / mass * (0.5 * a0 / fd);
    contamination += density_at(edge) * std::fabs(fcheck(edge)) /
                     (fd * std::max(1e-300, density_at(inner)));
  }
  sol.error_budget = tail * sup_fc + contamination;
  return sol;
}

// ---------------------------------------------------------------------------
// Monte-Carlo cross-validation of the Poisson solution.
// ---------------------------------------------------------------------------

struct mc_estimate {
  double mean = 0.0;
  double standard_error = 0.0;
  double ci_half_width = 0.0;  // 1.96 se + truncation budget
  int replications = 0;
  std::uint64_t seed = 0;
  bool conclusive = true;
};

namespace detail {

inline double path_time_integral(const sim_path& path, const scalar_fn& g) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < path.times.size(); ++i) {
    const double dt = path.times[i + 1] - path.times[i];
    acc += 0.5 * (g(path.states[i][0]) + g(path.states[i + 1][0])) * dt;
  }
  return acc;
}

}  // namespace detail

/// Estimates int_0^infty E_x[fcheck(Y(t))] dt by time integrals along
/// simulated DM paths; the horizon truncation enters the CI as an additive
/// budget exp(-rate T) (|fcheck(x)| + 1)/rate with `decay_rate` the
/// (empirically estimated) ergodicity rate.
inline mc_estimate mc_poisson_value(const diffusion_model& dm, const scalar_fn& f, double pi_f,
                                    double x, double horizon, double step, int reps,
                                    std::uint64_t seed, double decay_rate = 0.5,
                                    double target_precision = 0.0) {
  auto fc = [&](double y) { return f(y) - pi_f; };
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const sim_path path = simulate_dm(dm, scalar_vec(x), horizon, step, seed, r);
    const double v = detail::path_time_integral(path, fc);
    sum += v;
    sumsq += v * v;
  }
  mc_estimate est;
  est.replications = reps;
  est.seed = seed;
  est.mean = sum / reps;
  const double var = std::max(0.0, (sumsq - reps * est.mean * est.mean) / (reps - 1));
  est.standard_error = std::sqrt(var / reps);
  const double tail_budget = std::exp(-decay_rate * horizon) * (std::fabs(fc(x)) + 1.0) / decay_rate;
  est.ci_half_width = 1.96 * est.standard_error + tail_budget;
  if (target_precision > 0.0 && est.ci_half_width > target_precision) est.conclusive = false;
  return est;
}

/// Difference estimator u(x) - u(x0) with common random numbers: both paths
/// share the Brownian increments, so contracting drifts couple and the
/// variance collapses.
inline mc_estimate mc_poisson_diff(const diffusion_model& dm, const scalar_fn& f, double pi_f,
                                   double x, double x0, double horizon, double step, int reps,
                                   std::uint64_t seed, double decay_rate = 0.5) {
  auto fc = [&](double y) { return f(y) - pi_f; };
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const sim_path a = simulate_dm(dm, scalar_vec(x), horizon, step, seed, r);
    const sim_path b = simulate_dm(dm, scalar_vec(x0), horizon, step, seed, r);
    const double v = detail::path_time_integral(a, fc) - detail::path_time_integral(b, fc);
    sum += v;
    sumsq += v * v;
  }
  mc_estimate est;
  est.replications = reps;
  est.seed = seed;
  est.mean = sum / reps;
  const double var = std::max(0.0, (sumsq - reps * est.mean * est.mean) / (reps - 1));
  est.standard_error = std::sqrt(var / reps);
  const double tail_budget = std::exp(-decay_rate * horizon) *
                             (std::fabs(fc(x)) + std::fabs(fc(x0)) + 1.0) / decay_rate;
  est.ci_half_width = 1.96 * est.standard_error + tail_budget;
  return est;
}

// ---------------------------------------------------------------------------
// Local Lipschitz envelope fbar.
// ---------------------------------------------------------------------------

struct lipschitz_profile {
  std::vector<double> values;  // fbar on the grid
  int samples_per_ball = 0;
};

/// fbar(x) = sup_{y in B_x(1/(1+|x|))} |f(y)| + sampled Lipschitz quotient
/// over the same shrinking ball.
inline lipschitz_profile local_lipschitz_profile(const scalar_fn& f,
                                                 const std::vector<double>& grid,
                                                 int samples_per_ball = 33) {
  lipschitz_profile out;
  out.samples_per_ball = samples_per_ball;
  out.values.reserve(grid.size());
  for (double x : grid) {
    const double r = 1.0 / (1.0 + std::fabs(x));
    double sup_abs = 0.0, lip = 0.0;
    double prev_y = x - r, prev_f = f(prev_y);
    sup_abs = std::fabs(prev_f);
    for (int k = 1; k < samples_per_ball; ++k) {
      const double y = x - r + 2.0 * r * k / (samples_per_ball - 1);
      const double fy = f(y);
      sup_abs = std::max(sup_abs, std::fabs(fy));
      lip = std::max(lip, std::fabs(fy - prev_f) / (y - prev_y));
      prev_y = y;
      prev_f = fy;
    }
    // a few long-span quotients across the ball
    for (int k = 1; k <= 4; ++k) {
      const double y = x - r + 2.0 * r * k / 5.0;
      const double z = x + r - 2.0 * r * (k - 1) / 5.0;
      if (std::fabs(z - y) > 1e-12) lip = std::max(lip, std::fabs(f(z) - f(y)) / std::fabs(z - y));
    }
    out.values.push_back(sup_abs + lip);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient-estimate verification.
// ---------------------------------------------------------------------------

struct gradient_bound_report {
  double theta_hat = 0.0;       // smallest envelope multiplier certifying all three bounds
  double theta_du = 0.0;        // |u'| (1+|x|)^2 route
  double theta_d2u = 0.0;       // |u''| (1+|x|) route
  double theta_holder = 0.0;    // Holder seminorm route
  std::vector<double> margins;  // per grid point, envelope minus quantity at theta_hat
  double c3 = 1.0;
  double C_u = 0.0;  // sup |u| / V
  double scale = 0.0;
};

/// Ratios of |u'|, |u''| and the local Holder seminorm of u'' against the
/// C_V(x)-shaped envelope 16 (1 + c3^2 C) V(x)(1+|x|)^3; theta_hat is the
/// smallest multiplier making all three hold on the grid.
inline gradient_bound_report verify_gradient_bounds(
    const poisson_solution& sol, const std::function<double(const vec&)>& V, double c3,
    double ell_bar, double scale) {
  gradient_bound_report rep;
  rep.c3 = std::max(c3, 1.0);
  rep.scale = scale;
  const int R = sol.grid.n_points;
  // pre-verify |u| <= C V on the grid
  double cu = 0.0;
  for (int i = 0; i < R; ++i)
    cu = std::max(cu, std::fabs(sol.u[i]) / V(scalar_vec(sol.grid[i])));
  rep.C_u = cu;
  const double env_const = 16.0 * (1.0 + rep.c3 * rep.c3 * std::max(cu, 1.0));
  const double ball = ell_bar / std::sqrt(scale);

  rep.margins.resize(R);
  for (int i = 0; i < R; ++i) {
    const double x = sol.grid[i];
    const double envelope = env_const * V(scalar_vec(x)) * std::pow(1.0 + std::fabs(x), 3);
    const double q1 = std::fabs(sol.du[i]) * sqr(1.0 + std::fabs(x));
    const double q2 = std::fabs(sol.d2u[i]) * (1.0 + std::fabs(x));
    // sampled Holder quotient of u'' over B_x(ell_bar / sqrt(n))
    double q3 = 0.0;
    const double lo = std::max(x - ball, sol.work.lo + 2.0 * sol.work.step);
    const double hi = std::min(x + ball, sol.work.hi() - 2.0 * sol.work.step);
    const int K = 9;
    std::vector<double> ys(K), d2(K);
    for (int k = 0; k < K; ++k) {
      ys[k] = lo + (hi - lo) * k / (K - 1);
      d2[k] = sol.d2u_at(ys[k]);
    }
    for (int a = 0; a < K; ++a)
      for (int b = a + 1; b < K; ++b)
        if (ys[b] - ys[a] > 1e-12)
          q3 = std::max(q3, std::fabs(d2[b] - d2[a]) / (ys[b] - ys[a]));
    rep.theta_du = std::max(rep.theta_du, q1 / envelope);
    rep.theta_d2u = std::max(rep.theta_d2u, q2 / envelope);
    rep.theta_holder = std::max(rep.theta_holder, q3 / envelope);
    rep.margins[i] = envelope - std::max({q1, q2, q3});
  }
  rep.theta_hat = std::max({rep.theta_du, rep.theta_d2u, rep.theta_holder});
  if (!std::isfinite(rep.theta_hat))
    throw solver_error("verify_gradient_bounds: unbounded ratio");
  return rep;
}

}  // namespace qlab
