// Acceptance suite: one criterion per section, each printing a PASS/FAIL
// line with the measured quantities.  Exit status is the number of failures.

#include "qlab/io.hpp"
#include "qlab/lab.hpp"
#include "qlab/model.hpp"
#include "qlab/poisson.hpp"
#include "qlab/steady_state.hpp"
#include "qlab/zoo.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace qlab;

namespace {

struct criterion_result {
  bool pass = false;
  std::string details;
};

int failures = 0;

void run_criterion(int index, const std::string& title,
                   const std::function<criterion_result()>& body) {
  const auto start = std::chrono::steady_clock::now();
  criterion_result res;
  try {
    res = body();
  } catch (const std::exception& e) {
    res.pass = false;
    res.details = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!res.pass) ++failures;
  std::printf("[%s] criterion %d: %s (%.1fs) %s\n", res.pass ? "PASS" : "FAIL", index,
              title.c_str(), secs, res.details.c_str());
  std::fflush(stdout);
}

model_instance mm_infinity_model() {
  return make_erlang_a_model(erlang_a_params::critically_staffed(1.0, 1.0));
}

model_instance erlang_a_model() {
  return make_erlang_a_model(erlang_a_params::critically_staffed(1.0, 0.5));
}

phase_type_params serial_two_phase() {
  phase_type_params p;
  p.nu = make_vec({2.0, 2.0});
  p.routing = mat::Zero(2, 2);
  p.routing(0, 1) = 1.0;
  p.theta = 0.5;
  return p;
}

std::vector<vec> line_grid(double radius, int points) {
  std::vector<vec> g;
  const grid1d gr(-radius, radius, points);
  for (int i = 0; i < points; ++i) g.push_back(scalar_vec(gr[i]));
  return g;
}

// ---------------------------------------------------------------------------

criterion_result mm_infinity_rate() {
  gap_config cfg;
  cfg.n_grid = {100.0, 1000.0, 10000.0};  // middle point feeds the 3-row rate fit
  cfg.seed = 1;
  const auto rep = run_gap_study(
      mm_infinity_model(), [](const vec& x) { return std::pow(x[0], 3); }, "x1^3", cfg);
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  for (const auto& row : rep.rows) {
    if (row.n != 100.0 && row.n != 10000.0) continue;
    const double expected = 1.0 / std::sqrt(row.n);
    const double err = std::fabs(row.gap - expected);
    out.pass = out.pass && !row.failed && err <= 1e-6;
    os << "n=" << row.n << " |gap - n^-1/2|=" << err << "; ";
  }
  const bool fit_ok = rep.fit && std::fabs(rep.fit->slope + 0.5) <= 1e-3;
  out.pass = out.pass && fit_ok;
  os << "slope=" << (rep.fit ? rep.fit->slope : 0.0);
  out.details = os.str();
  return out;
}

criterion_result mm_infinity_variance() {
  gap_config cfg;
  cfg.n_grid = {100.0, 10000.0};
  cfg.seed = 1;
  const auto rep =
      run_gap_study(mm_infinity_model(), [](const vec& x) { return sqr(x[0]); }, "x1^2", cfg);
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  for (const auto& row : rep.rows) {
    out.pass = out.pass && !row.failed && std::fabs(row.gap) <= 1e-8;
    os << "n=" << row.n << " |gap|=" << std::fabs(row.gap) << "; ";
  }
  out.details = os.str();
  return out;
}

criterion_result erlang_a_gap_boundedness() {
  gap_config cfg;
  cfg.n_grid = {50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0};
  cfg.seed = 3;
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  for (const std::string& f_text : {std::string("x1"), std::string("x1^2")}) {
    const auto f = parse_test_function(f_text);
    const auto rep = run_gap_study(erlang_a_model(), f, f_text, cfg);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    bool budgets_ok = true;
    for (const auto& row : rep.rows) {
      if (row.failed) {
        budgets_ok = false;
        continue;
      }
      budgets_ok = budgets_ok && row.error_budget < 0.1 * std::fabs(row.gap);
      lo = std::min(lo, std::fabs(row.sqrt_n_gap));
      hi = std::max(hi, std::fabs(row.sqrt_n_gap));
    }
    const double ratio = hi / lo;
    out.pass = out.pass && budgets_ok && ratio <= 5.0;
    os << "f=" << f_text << " ratio=" << ratio << (budgets_ok ? "" : " (budget breach)")
       << "; ";
  }
  out.details = os.str();
  return out;
}

criterion_result erlang_a_ul() {
  const std::vector<double> n_grid{100.0, 1000.0, 10000.0, 1000000.0};
  const model_instance model = erlang_a_model();
  std::vector<diffusion_model> dms;
  for (double n : n_grid) dms.push_back(model.dm_at(n));
  const auto grid = line_grid(10.0, 2001);
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  for (int m : {1, 2}) {
    const auto res = check_ul(dms, poly_candidate(m, 1.0), 1.0, 10.0, grid);
    const auto* cert = std::get_if<ul_certificate>(&res);
    const bool ok = cert && cert->margin >= 0.0 && cert->n_grid.size() == n_grid.size();
    out.pass = out.pass && ok;
    if (cert)
      os << "m=" << m << " (delta,b,K)=(" << cert->delta << "," << cert->b << "," << cert->K
         << "); ";
    else
      os << "m=" << m << " not certified; ";
  }
  out.details = os.str();
  return out;
}

criterion_result poisson_verification() {
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  const diffusion_model ou =
      make_dm([](const vec& x) { return vec(-x); }, 2.0 * mat::Identity(1, 1), 1.0);

  // OU closed forms
  {
    const auto sol = solve_poisson_1d(ou, [](double x) { return x; }, -10.0, 10.0, 0.01);
    double worst = 0.0;
    for (int i = 0; i < sol.grid.n_points; ++i)
      worst = std::max(worst, std::fabs(sol.u[i] - sol.grid[i]));
    out.pass = out.pass && sol.residual_sup <= 1e-8 && worst <= 1e-7;
    os << "OU f=x residual=" << sol.residual_sup << "; ";
  }
  {
    const auto sol =
        solve_poisson_1d(ou, [](double x) { return x * x - 1.0; }, -10.0, 10.0, 0.01);
    double worst = 0.0;
    for (int i = 0; i < sol.grid.n_points; ++i)
      worst = std::max(worst, std::fabs(sol.u[i] - sqr(sol.grid[i]) / 2.0));
    out.pass = out.pass && sol.residual_sup <= 1e-8 && worst <= 1e-7;
    os << "OU f=x^2-1 residual=" << sol.residual_sup << "; ";
  }

  // Erlang-A residual and Monte-Carlo agreement at ten points
  const diffusion_model dm = erlang_a_model().dm_at(100.0);
  const auto sol = solve_poisson_1d(dm, [](double x) { return x; }, -10.0, 10.0, 0.01);
  out.pass = out.pass && sol.residual_sup <= 1e-6;
  os << "Erlang-A residual=" << sol.residual_sup << "; ";
  int hits = 0;
  const std::vector<double> points{-2.5, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 2.5};
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double x = points[k];
    const auto est = mc_poisson_diff(dm, [](double y) { return y; }, sol.pi_f, x, 0.0, 24.0,
                                     0.005, 2000, 20250 + k, 0.5);
    const int wi = sol.grid.nearest_index(x);
    if (std::fabs(est.mean - sol.u[wi]) <= est.ci_half_width + 0.02) ++hits;
  }
  out.pass = out.pass && hits >= 9;
  os << "MC hits=" << hits << "/10";
  out.details = os.str();
  return out;
}

criterion_result gradient_bound_uniformity() {
  criterion_result out;
  std::ostringstream os;
  const auto grid = line_grid(10.0, 801);
  const auto cand = poly_candidate(1, 1.0);
  const auto se = check_subexponential(cand, grid);
  const double c3 = se ? se->c3 : 4.0;
  std::vector<double> thetas;
  const model_instance model = erlang_a_model();
  for (double n : {100.0, 10000.0}) {
    const auto sol =
        solve_poisson_1d(model.dm_at(n), [](double x) { return x; }, -10.0, 10.0, 0.01);
    const auto rep = verify_gradient_bounds(sol, cand.value, c3, 1.0, n);
    thetas.push_back(rep.theta_hat);
    os << "n=" << n << " theta=" << rep.theta_hat << "; ";
  }
  const double ratio = std::max(thetas[0], thetas[1]) / std::min(thetas[0], thetas[1]);
  out.pass = ratio <= 2.0;
  os << "ratio=" << ratio;
  out.details = os.str();
  return out;
}

criterion_result phase_type_cross_derivation() {
  criterion_result out;
  out.pass = true;
  std::ostringstream os;

  // I = 2 serial
  {
    const mphn_model m = make_mphn(serial_two_phase());
    const chain_family chain = build_mphn(m);
    const double n = 50.0;
    const scaled_chain sc(chain, n, m.center(n));
    counter_rng rng(777, 0);
    double worst_f = 0.0, worst_a = 0.0;
    for (int i = 0; i < 1000; ++i) {
      vec x(2);
      x[0] = 6.0 * (rng.next_uniform() - 0.5);
      x[1] = 6.0 * (rng.next_uniform() - 0.5);
      const vec fg = sc.drift_hat(x);
      const vec fc = mphn_drift_closed_form(m, x);
      worst_f = std::max(worst_f, (fg - fc).norm() / (1.0 + fc.norm()));
      const mat ag = sc.avar_bar(x);
      const mat ac = mphn_avar_closed_form(m, n, x);
      worst_a = std::max(worst_a, (ag - ac).norm() / (1.0 + ac.norm()));
    }
    out.pass = out.pass && worst_f <= 1e-12 && worst_a <= 1e-12;
    os << "I=2 drift err=" << worst_f << " avar err=" << worst_a << "; ";
  }
  // I = 1: the closed form against the scalar reconstruction
  {
    phase_type_params p;
    p.nu = scalar_vec(1.0);
    p.routing = mat::Zero(1, 1);
    p.theta = 0.5;
    const mphn_model m = make_mphn(p);
    const chain_family chain = build_mphn(m);
    const double n = 64.0;
    const scaled_chain sc(chain, n, m.center(n));
    counter_rng rng(778, 0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const vec x = scalar_vec(6.0 * (rng.next_uniform() - 0.5));
      worst = std::max(worst, std::fabs(sc.drift_hat(x)[0] - mphn_drift_closed_form(m, x)[0]) /
                                  (1.0 + std::fabs(x[0])));
    }
    out.pass = out.pass && worst <= 1e-12;
    os << "I=1 drift err=" << worst << "; ";

    // exact collapse to the Erlang-A birth-death rates on the lattice
    const chain_family ea =
        build_erlang_a(erlang_a_params(1.0, 0.5, [](double nn) { return std::round(nn); }));
    bool exact = true;
    for (int x = 0; x <= 200; ++x) {
      const vec xs = scalar_vec(static_cast<double>(x));
      exact = exact && derive_drift(chain, n, xs)[0] == derive_drift(ea, n, xs)[0] &&
              derive_avar(chain, n, xs)(0, 0) == derive_avar(ea, n, xs)(0, 0);
    }
    out.pass = out.pass && exact;
    os << (exact ? "I=1 lattice collapse exact" : "I=1 collapse differs");
  }
  out.details = os.str();
  return out;
}

criterion_result phase_type_gap_study() {
  gap_config cfg;
  cfg.n_grid = {25.0, 50.0, 100.0};
  cfg.seed = 8;
  cfg.chain_box_halfwidth = 8.0;
  cfg.fd_box = 6.0;
  cfg.fd_points = 121;
  cfg.cross_check_simulation = true;
  cfg.sim_horizon = 4000.0;
  cfg.sim_step = 0.01;
  const model_instance model = make_mphn_model(serial_two_phase());
  const auto rep = run_gap_study(
      model, [](const vec& x) { return x.squaredNorm(); }, "|x|^2", cfg);
  criterion_result out;
  out.pass = true;
  std::ostringstream os;
  std::vector<double> scaled;
  for (const auto& row : rep.rows) {
    if (row.failed) {
      out.pass = false;
      os << "n=" << row.n << " failed: " << row.message << "; ";
      continue;
    }
    out.pass = out.pass && row.nu_truncation_mass < 1e-8;
    scaled.push_back(std::fabs(row.sqrt_n_gap));
    os << "n=" << row.n << " sqrt(n)|gap|=" << std::fabs(row.sqrt_n_gap)
       << " trunc=" << row.nu_truncation_mass << "; ";
  }
  if (scaled.size() == 3) {
    const bool non_increasing = scaled[0] >= scaled[1] && scaled[1] >= scaled[2];
    const double band = *std::max_element(scaled.begin(), scaled.end()) /
                        *std::min_element(scaled.begin(), scaled.end());
    out.pass = out.pass && (non_increasing || band <= 3.0);
    os << "band=" << band;
  } else {
    out.pass = false;
  }
  out.details = os.str();
  return out;
}

criterion_result solver_cross_validation() {
  criterion_result out;
  out.pass = true;
  std::ostringstream os;

  // five randomized birth-death instances
  counter_rng rng(9001, 0);
  double worst_tv = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const double up = 0.5 + 3.0 * rng.next_uniform();
    const double slope = 0.05 + 0.3 * rng.next_uniform();
    std::vector<jump> jumps;
    jumps.push_back({scalar_vec(1.0), [up](double, const vec&) { return up; }, "up"});
    jumps.push_back(
        {scalar_vec(-1.0), [slope](double, const vec& x) { return slope * x[0]; }, "down"});
    const chain_family chain(1, std::move(jumps),
                             [](double, const vec& x) { return x[0] >= 0.0; });
    const int hi = 80;
    const auto bd = chain_stationary_bd(chain, 1.0, 0, hi);
    const auto gen = chain_stationary_general(chain, 1.0, lattice_box{{0}, {hi}});
    double tv = 0.0;
    for (std::size_t i = 0; i < bd.probs.size(); ++i)
      tv += std::fabs(bd.probs[i] - gen.probs[i]);
    worst_tv = std::max(worst_tv, 0.5 * tv);
  }
  out.pass = out.pass && worst_tv <= 1e-10;
  os << "worst TV=" << worst_tv << "; ";

  // 2-d FD density against the Lyapunov-equation Gaussian
  mat R(2, 2);
  R << 2.0, 0.0, -2.0, 2.0;
  mat a0(2, 2);
  a0 << 2.0, -1.0, -1.0, 2.0;
  // direct solve of R S + S R' = a0 for the 2x2 symmetric S
  mat lyap(3, 3);
  lyap << 2.0 * R(0, 0), 2.0 * R(0, 1), 0.0,
          R(1, 0), R(0, 0) + R(1, 1), R(0, 1),
          0.0, 2.0 * R(1, 0), 2.0 * R(1, 1);
  const vec s = lyap.fullPivLu().solve(make_vec({a0(0, 0), a0(0, 1), a0(1, 1)}));
  mat S(2, 2);
  S << s[0], s[1], s[1], s[2];
  const mat Sinv = S.inverse();
  const double norm_const = 1.0 / (2.0 * M_PI * std::sqrt(S.determinant()));

  const diffusion_model dm = make_dm([R](const vec& x) { return vec(-R * x); }, a0, 1.0);
  const grid1d g(-6.0, 6.0, 121);
  const auto pi = dm_stationary_fd(dm, g, g);
  double l1 = 0.0;
  for (int i = 0; i < g.n_points; ++i) {
    const double wx = (i == 0 || i == g.n_points - 1) ? 0.5 * g.step : g.step;
    for (int j = 0; j < g.n_points; ++j) {
      const double wy = (j == 0 || j == g.n_points - 1) ? 0.5 * g.step : g.step;
      vec x(2);
      x << g[i], g[j];
      const double gauss = norm_const * std::exp(-0.5 * x.dot(Sinv * x));
      l1 += std::fabs(pi.density(i, j) - gauss) * wx * wy;
    }
  }
  out.pass = out.pass && l1 <= 1e-4;
  os << "FD vs Gaussian L1=" << l1;
  out.details = os.str();
  return out;
}

criterion_result determinism() {
  criterion_result out;
  out.pass = true;
  std::ostringstream os;

  const diffusion_model dm = erlang_a_model().dm_at(100.0);

  // Euler-Maruyama path
  {
    const sim_path a = simulate_dm(dm, scalar_vec(0.4), 50.0, 0.01, 424242);
    const sim_path b = simulate_dm(dm, scalar_vec(0.4), 50.0, 0.01, 424242);
    bool same = a.states.size() == b.states.size();
    for (std::size_t k = 0; same && k < a.states.size(); ++k)
      same = a.states[k][0] == b.states[k][0];
    out.pass = out.pass && same;
    os << "EM path " << (same ? "bitwise equal" : "DIFFERS") << "; ";
  }
  // event-driven chain path
  {
    const scaled_chain sc = erlang_a_model().scaled_at(100.0);
    const sim_path a = simulate_ctmc(sc, scalar_vec(0.0), 50.0, 99);
    const sim_path b = simulate_ctmc(sc, scalar_vec(0.0), 50.0, 99);
    bool same = a.times.size() == b.times.size();
    for (std::size_t k = 0; same && k < a.times.size(); ++k)
      same = a.times[k] == b.times[k] && a.states[k][0] == b.states[k][0];
    out.pass = out.pass && same;
    os << "chain path " << (same ? "bitwise equal" : "DIFFERS") << "; ";
  }
  // Monte-Carlo Poisson estimate
  {
    const auto a = mc_poisson_diff(dm, [](double y) { return y; }, 0.33, 1.5, 0.0, 12.0, 0.01,
                                   500, 777, 0.5);
    const auto b = mc_poisson_diff(dm, [](double y) { return y; }, 0.33, 1.5, 0.0, 12.0, 0.01,
                                   500, 777, 0.5);
    const bool same = a.mean == b.mean && a.standard_error == b.standard_error;
    out.pass = out.pass && same;
    os << "MC estimate " << (same ? "bitwise equal" : "DIFFERS") << "; ";
  }
  // full seeded gap report including the simulation cross-check
  {
    gap_config cfg;
    cfg.n_grid = {25.0, 50.0};
    cfg.seed = 8;
    cfg.chain_box_halfwidth = 8.0;
    cfg.fd_points = 61;
    cfg.sim_horizon = 500.0;
    const model_instance model = make_mphn_model(serial_two_phase());
    const auto f = [](const vec& x) { return x.squaredNorm(); };
    const std::string a = gap_report_json(run_gap_study(model, f, "|x|^2", cfg)).dump();
    const std::string b = gap_report_json(run_gap_study(model, f, "|x|^2", cfg)).dump();
    out.pass = out.pass && a == b;
    os << "gap report " << (a == b ? "bitwise equal" : "DIFFERS");
  }
  out.details = os.str();
  return out;
}

}  // namespace

int main() {
  std::printf("qlab acceptance suite\n");
  run_criterion(1, "infinite-server exact rate (third scaled central power)",
                mm_infinity_rate);
  run_criterion(2, "infinite-server variance identity", mm_infinity_variance);
  run_criterion(3, "Erlang-A sqrt(n)-gap boundedness", erlang_a_gap_boundedness);
  run_criterion(4, "uniform Lyapunov certification for Erlang-A powers", erlang_a_ul);
  run_criterion(5, "Poisson-equation verification", poisson_verification);
  run_criterion(6, "gradient-bound uniformity", gradient_bound_uniformity);
  run_criterion(7, "phase-type cross-derivation", phase_type_cross_derivation);
  run_criterion(8, "phase-type gap study", phase_type_gap_study);
  run_criterion(9, "solver cross-validation", solver_cross_validation);
  run_criterion(10, "seeded determinism", determinism);
  if (failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criterion(s) failed\n", failures);
  return failures;
}
