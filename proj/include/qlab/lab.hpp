#pragma once

#include "qlab/chain.hpp"
#include "qlab/common.hpp"
#include "qlab/diffusion.hpp"
#include "qlab/lyapunov.hpp"
#include "qlab/model.hpp"
#include "qlab/poisson.hpp"
#include "qlab/simulate.hpp"
#include "qlab/steady_state.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qlab {

/// Hypothesis precondition failed (distinct from numerical solver failure so
/// the CLI can map it to its own exit code).
struct hypothesis_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rate fitting.
// ---------------------------------------------------------------------------

struct rate_fit {
  double slope = 0.0;
  double stderr_slope = 0.0;
  int rows_used = 0;
  std::vector<std::string> notes;
};

/// Ordinary least squares of log|gap| on log n.
inline rate_fit fit_rate(const std::vector<std::pair<double, double>>& rows) {
  rate_fit fit;
  std::vector<double> xs, ys;
  for (const auto& [n, gap] : rows) {
    if (gap == 0.0) {
      std::ostringstream os;
      os << "row n = " << n << " excluded: zero gap";
      fit.notes.push_back(os.str());
      continue;
    }
    xs.push_back(std::log(n));
    ys.push_back(std::log(std::fabs(gap)));
  }
  const int k = static_cast<int>(xs.size());
  if (k < 3) throw model_error("fit_rate: fewer than 3 admissible rows");
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < k; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < k; ++i) {
    sxx += sqr(xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  fit.slope = sxy / sxx;
  double ssr = 0.0;
  for (int i = 0; i < k; ++i) ssr += sqr(ys[i] - my - fit.slope * (xs[i] - mx));
  fit.stderr_slope = k > 2 ? std::sqrt(ssr / (k - 2) / sxx) : 0.0;
  fit.rows_used = k;
  return fit;
}

// ---------------------------------------------------------------------------
// Gap study.
// ---------------------------------------------------------------------------

struct gap_row {
  double n = 0.0;
  double nu_f = 0.0;
  double pi_f = 0.0;
  double gap = 0.0;
  double sqrt_n_gap = 0.0;
  double error_budget = 0.0;  // truncation + quadrature/refinement + MC CI
  double nu_truncation_mass = 0.0;
  std::string nu_solver;
  std::string pi_solver;
  bool admissible_for_fit = false;
  bool failed = false;
  std::string message;
};

struct gap_report {
  std::string test_function;
  std::vector<gap_row> rows;
  std::optional<rate_fit> fit;
  // machine-checked hypotheses
  bool assumptions_pass = false;
  std::optional<ul_certificate> ul;
  std::optional<subexp_constants> subexp;
  std::optional<dm_to_ctmc_result> transfer;  // Theorem 3.3 route constant
  std::optional<moment_bound_verdict> chain_moment_bound;  // nu^n(V) <= 2b/delta
  finite_integral_attestation finite_integral;
  std::string candidate;
  std::uint64_t seed = 0;
};

struct gap_config {
  std::vector<double> n_grid;
  std::uint64_t seed = 1;
  double chain_box_halfwidth = 12.0;  // in units of sqrt(n)
  double dm_box = 12.0;               // 1-d density box (scaled units)
  int dm_points = 2401;
  double fd_box = 6.0;                // 2-d Fokker-Planck box
  int fd_points = 121;
  bool cross_check_simulation = true;
  double sim_horizon = 2000.0;
  double sim_step = 0.01;
  int max_candidate_power = 4;
  double validation_radius = 10.0;
  int validation_points = 401;
};

namespace detail {

inline std::vector<vec> line_grid(double radius, int points) {
  std::vector<vec> g;
  g.reserve(points);
  const grid1d gr(-radius, radius, points);
  for (int i = 0; i < points; ++i) g.push_back(scalar_vec(gr[i]));
  return g;
}

inline std::vector<vec> plane_grid(double radius, int per_axis) {
  std::vector<vec> g;
  const grid1d gr(-radius, radius, per_axis);
  for (int i = 0; i < per_axis; ++i)
    for (int j = 0; j < per_axis; ++j) {
      vec x(2);
      x << gr[i], gr[j];
      g.push_back(x);
    }
  return g;
}

inline std::vector<vec> validation_grid(int d, double radius, int points) {
  if (d == 1) return line_grid(radius, points);
  if (d == 2) return plane_grid(radius, std::max(21, points / 10));
  throw model_error("validation grid: only d <= 2 supported");
}

/// Smallest certified candidate dominating fbar on the validation grid:
/// rho + x^(2m) on the line, powers of a quadratic form in the plane.
inline std::pair<lyapunov_candidate, ul_certificate> certify_candidate(
    const std::vector<diffusion_model>& dm_family,
    const std::function<double(const vec&)>& f, const std::vector<vec>& grid,
    double outer_radius, int max_power) {
  const int d = dm_family.front().dimension;
  std::string why;
  for (int m = 1; m <= max_power; ++m) {
    lyapunov_candidate cand;
    if (d == 1) {
      // domination profile along the line
      std::vector<double> xs;
      for (const auto& x : grid) xs.push_back(x[0]);
      auto prof = local_lipschitz_profile([&f](double x) { return f(scalar_vec(x)); }, xs);
      double rho = 1.0;
      double arg_r = 0.0, best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double need = prof.values[i] - std::pow(xs[i], 2 * m);
        if (need > best) {
          best = need;
          arg_r = std::fabs(xs[i]);
        }
        rho = std::max(rho, need);
      }
      if (arg_r > 0.85 * outer_radius) {
        why = "fbar - x^(2m) still growing at the grid edge";
        continue;  // domination not structural at this power
      }
      cand = poly_candidate(m, std::max(1.0, rho * 1.05));
    } else {
      const mat Q = mat::Identity(d, d);
      double rho = 1.0;
      double arg_r = 0.0, best = -std::numeric_limits<double>::infinity();
      for (const auto& x : grid) {
        // crude multi-d fbar sample: |f| plus difference quotient on the ball
        const double r = 1.0 / (1.0 + x.norm());
        double sup_abs = std::fabs(f(x)), lip = 0.0;
        for (int i = 0; i < d; ++i) {
          vec e = vec::Zero(d);
          e[i] = r;
          sup_abs = std::max({sup_abs, std::fabs(f(x + e)), std::fabs(f(x - e))});
          lip = std::max(lip, std::fabs(f(x + e) - f(x - e)) / (2.0 * r));
        }
        const double fbar = sup_abs + lip;
        const double need = std::pow(fbar, 1.0 / m) - x.dot(Q * x);
        if (need > best) {
          best = need;
          arg_r = x.norm();
        }
        rho = std::max(rho, need);
      }
      if (arg_r > 0.85 * outer_radius) {
        why = "fbar^(1/m) - x'Qx still growing at the grid edge";
        continue;
      }
      cand = power_candidate(quadratic_candidate(Q, std::max(1.0, rho * 1.05)), m);
    }
    const ul_result res = check_ul(dm_family, cand, 1.0, outer_radius, grid);
    if (const auto* cert = std::get_if<ul_certificate>(&res)) return {cand, *cert};
    why = std::get<ul_counterexample>(res).reason;
  }
  throw hypothesis_error("run_gap_study: no admissible certified Lyapunov candidate for this "
                         "test function (" + why + ")");
}

}  // namespace detail

/// Full gap study: per n, the exact chain stationary expectation against the
/// DM stationary expectation, with error budgets and the fitted log-log rate;
/// Theorem-level hypotheses are machine-checked and recorded in the report.
inline gap_report run_gap_study(const model_instance& model,
                                const std::function<double(const vec&)>& f,
                                const std::string& f_descriptor, const gap_config& cfg) {
  if (cfg.n_grid.size() < 1) throw model_error("run_gap_study: empty n grid");
  for (std::size_t i = 1; i < cfg.n_grid.size(); ++i)
    if (cfg.n_grid[i] <= cfg.n_grid[i - 1])
      throw model_error("run_gap_study: n grid must be strictly increasing");
  const int d = model.dimension();
  if (d > 2) throw model_error("run_gap_study: chains of dimension > 2 are out of scope");

  gap_report rep;
  rep.test_function = f_descriptor;
  rep.seed = cfg.seed;

  // families across the n grid
  std::vector<scaled_chain> family;
  std::vector<diffusion_model> dms;
  for (double n : cfg.n_grid) {
    family.push_back(model.scaled_at(n));
    diffusion_model dm = build_dm(family.back());
    if (model.scaled_kinks) dm.drift_kinks = model.scaled_kinks(n);
    dms.push_back(std::move(dm));
  }

  // hypothesis checks: structural assumptions, UL, transfer, admissibility
  const box val_box = box::symmetric(d, 0.5 * cfg.validation_radius);
  const assumption_report assumptions =
      validate_assumptions(family, val_box, 64, cfg.seed ^ 0x5151u);
  rep.assumptions_pass = assumptions.pass();
  if (!rep.assumptions_pass)
    throw hypothesis_error("run_gap_study: structural assumption validation failed");

  const std::vector<vec> vgrid =
      detail::validation_grid(d, cfg.validation_radius, cfg.validation_points);
  auto [cand, cert] = detail::certify_candidate(dms, f, vgrid, cfg.validation_radius,
                                                cfg.max_candidate_power);
  rep.ul = cert;
  rep.candidate = cand.description;
  rep.subexp = check_subexponential(cand, vgrid);
  rep.transfer = check_dm_to_ctmc(cand, cfg.n_grid, vgrid);
  rep.finite_integral = attest_finite_integral(
      model.chain, cfg.n_grid.back(), cand,
      box(family.back().center() - vec::Constant(d, family.back().sqrt_n()),
          family.back().center() + vec::Constant(d, family.back().sqrt_n())),
      64, cfg.seed ^ 0xf1f1u);

  std::vector<std::pair<double, double>> chain_v_moments;

  for (std::size_t idx = 0; idx < cfg.n_grid.size(); ++idx) {
    const double n = cfg.n_grid[idx];
    gap_row row;
    row.n = n;
    try {
      const scaled_chain& sc = family[idx];
      const diffusion_model& dm = dms[idx];

      // chain side (exact solver on a truncated box)
      discrete_stationary nu;
      if (model.chain.is_birth_death()) {
        const double c = sc.center()[0];
        const int lo = std::max(0, static_cast<int>(std::floor(c - cfg.chain_box_halfwidth *
                                                                       sc.sqrt_n())));
        const int hi = static_cast<int>(std::ceil(c + cfg.chain_box_halfwidth * sc.sqrt_n()));
        nu = chain_stationary_bd(sc, lo, hi);
        row.nu_solver = "birth-death product form";
      } else {
        lattice_box lbox;
        for (int i = 0; i < d; ++i) {
          const double c = sc.center()[i];
          lbox.lo.push_back(std::max(0, static_cast<int>(std::floor(
                                            c - cfg.chain_box_halfwidth * sc.sqrt_n()))));
          lbox.hi.push_back(static_cast<int>(std::ceil(c + cfg.chain_box_halfwidth *
                                                               sc.sqrt_n())));
        }
        nu = chain_stationary_general(sc, lbox);
        row.nu_solver = "truncated sparse solve";
      }
      const moment_result nu_m = moment(nu, f);
      row.nu_f = nu_m.value;
      row.nu_truncation_mass = nu.truncation_mass_bound;
      double budget = nu_m.truncation_bound;
      // roundoff floor for the weighted sum over the truncated support
      const double nu_abs = moment(nu, [&f](const vec& x) { return std::fabs(f(x)); }).value;
      budget += 4.0 * std::numeric_limits<double>::epsilon() * nu.support.size() * nu_abs;

      chain_v_moments.emplace_back(n, moment(nu, cand.value).value);

      // DM side
      if (d == 1) {
        const double kink = dm.drift_kinks.empty() ? 0.0 : dm.drift_kinks.front();
        const grid1d g = grid1d::with_anchor(-cfg.dm_box, cfg.dm_box,
                                             2.0 * cfg.dm_box / (cfg.dm_points - 1), kink);
        const continuous_stationary_1d pi = dm_stationary_1d(dm, g);
        const moment_result pi_m = moment(pi, f);
        row.pi_f = pi_m.value;
        budget += pi_m.truncation_bound;
        // quadrature budget: coarse-grid comparison plus a roundoff floor
        const grid1d gc = grid1d::with_anchor(-cfg.dm_box, cfg.dm_box,
                                              4.0 * cfg.dm_box / (cfg.dm_points - 1), kink);
        budget += std::fabs(moment(dm_stationary_1d(dm, gc), f).value - pi_m.value);
        const double pi_abs =
            moment(pi, [&f](const vec& x) { return std::fabs(f(x)); }).value;
        budget += 4.0 * std::numeric_limits<double>::epsilon() * g.n_points * (pi_abs + 1.0);
        row.pi_solver = "closed-form density quadrature";
      } else {
        const grid1d gx(-cfg.fd_box, cfg.fd_box, cfg.fd_points);
        const grid1d gy(-cfg.fd_box, cfg.fd_box, cfg.fd_points);
        const continuous_stationary_2d pi = dm_stationary_fd(dm, gx, gy);
        const moment_result pi_m = moment(pi, f);
        row.pi_f = pi_m.value;
        row.pi_solver = "finite-volume Fokker-Planck (Richardson)";
        // refinement difference of the moment as the discretization budget
        double refine_budget = 0.0;
        {
          const grid1d cgx(-cfg.fd_box, cfg.fd_box, (cfg.fd_points + 1) / 2);
          const continuous_stationary_2d coarse = dm_stationary_fd(dm, cgx, cgx);
          refine_budget = std::fabs(moment(coarse, f).value - pi_m.value);
        }
        budget += pi_m.truncation_bound + refine_budget;
        if (cfg.cross_check_simulation) {
          const sim_path path = simulate_dm(dm, vec::Zero(d), cfg.sim_horizon, cfg.sim_step,
                                            cfg.seed, static_cast<std::uint64_t>(idx));
          const batch_estimate est = steady_estimate(path, f, 0.1, 32);
          const double joint = 1.96 * est.standard_error + refine_budget +
                               pi_m.truncation_bound;
          if (std::fabs(est.value - row.pi_f) > std::max(joint, 1e-3)) {
            std::ostringstream os;
            os << "FD/simulation cross-check outside joint CI: fd = " << row.pi_f
               << ", sim = " << est.value << " +- " << 1.96 * est.standard_error;
            throw solver_error(os.str());
          }
        }
      }

      row.gap = row.nu_f - row.pi_f;
      row.sqrt_n_gap = std::sqrt(n) * row.gap;
      row.error_budget = budget;
      row.admissible_for_fit = budget < 0.1 * std::fabs(row.gap);
    } catch (const solver_error& e) {
      row.failed = true;
      row.message = e.what();
    }
    rep.rows.push_back(std::move(row));
  }

  rep.chain_moment_bound = moment_bound_check(
      cert, chain_v_moments, 1e-9 + 0.0);
  // Theorem 3.3 transfers with constant 2b/delta rather than b/delta
  if (rep.chain_moment_bound) {
    rep.chain_moment_bound->bound = 2.0 * cert.b / cert.delta;
    rep.chain_moment_bound->pass =
        rep.chain_moment_bound->worst_value <= rep.chain_moment_bound->bound + 1e-9;
  }

  std::vector<std::pair<double, double>> fit_rows;
  for (const auto& row : rep.rows)
    if (!row.failed && row.admissible_for_fit) fit_rows.emplace_back(row.n, row.gap);
  if (fit_rows.size() >= 3) rep.fit = fit_rate(fit_rows);
  return rep;
}

// ---------------------------------------------------------------------------
// Ergodicity decay (Theorem 3.1 evidence).
// ---------------------------------------------------------------------------

struct decay_fit {
  vec x0;
  double rate = 0.0;
  double stderr_rate = 0.0;
  int points_used = 0;
  std::string note;
};

/// Monte-Carlo transient expectations |E_x f(Y(t)) - pi(f)| on a time grid,
/// fitted to an exponential; points below the noise floor are dropped.
inline std::vector<decay_fit> ergodicity_decay(const diffusion_model& dm,
                                               const std::function<double(const vec&)>& f,
                                               double pi_f, const std::vector<vec>& x0_list,
                                               const std::vector<double>& t_grid, int reps,
                                               double step, std::uint64_t seed) {
  if (t_grid.empty()) throw model_error("ergodicity_decay: empty time grid");
  const double horizon = *std::max_element(t_grid.begin(), t_grid.end());
  std::vector<decay_fit> fits;
  for (std::size_t ix = 0; ix < x0_list.size(); ++ix) {
    std::vector<double> mean(t_grid.size(), 0.0), second(t_grid.size(), 0.0);
    for (int r = 0; r < reps; ++r) {
      const sim_path path = simulate_dm(dm, x0_list[ix], horizon, step, seed,
                                        ix * static_cast<std::uint64_t>(reps) + r);
      for (std::size_t k = 0; k < t_grid.size(); ++k) {
        // snap to the step grid
        const std::size_t si =
            std::min(path.states.size() - 1,
                     static_cast<std::size_t>(std::llround(t_grid[k] / step)));
        const double v = f(path.states[si]);
        mean[k] += v;
        second[k] += v * v;
      }
    }
    decay_fit fit;
    fit.x0 = x0_list[ix];
    std::vector<double> ts, logs;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      mean[k] /= reps;
      const double var = std::max(0.0, second[k] / reps - mean[k] * mean[k]);
      const double se = std::sqrt(var / reps);
      const double dev = std::fabs(mean[k] - pi_f);
      if (dev > 3.0 * se && dev > 1e-12) {
        ts.push_back(t_grid[k]);
        logs.push_back(std::log(dev));
      } else if (!ts.empty()) {
        fit.note = "time grid truncated at the noise floor";
        break;
      }
    }
    if (ts.size() < 2) {
      fit.note = "curve below noise floor, no fit";
      fits.push_back(fit);
      continue;
    }
    double mt = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      mt += ts[i];
      ml += logs[i];
    }
    mt /= ts.size();
    ml /= logs.size();
    double stt = 0.0, stl = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      stt += sqr(ts[i] - mt);
      stl += (ts[i] - mt) * (logs[i] - ml);
    }
    fit.rate = -stl / stt;
    double ssr = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i)
      ssr += sqr(logs[i] - ml + fit.rate * (ts[i] - mt));
    fit.stderr_rate = ts.size() > 2 ? std::sqrt(ssr / (ts.size() - 2) / stt) : 0.0;
    fit.points_used = static_cast<int>(ts.size());
    fits.push_back(fit);
  }
  return fits;
}

}  // namespace qlab
