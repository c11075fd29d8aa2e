// qlab command line: model validation, fluid/steady-state solves, Lyapunov
// certification, Poisson-equation checks, gap-rate studies and simulation.
//
// Exit codes: 0 success, 2 hypothesis-check failure, 3 solver/model failure.

#include "qlab/io.hpp"
#include "qlab/lab.hpp"
#include "qlab/model_spec.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace qlab;
using nlohmann::json;

constexpr int exit_ok = 0;
constexpr int exit_hypothesis = 2;
constexpr int exit_solver = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw model_error("cannot open output file " + path);
  return os;
}

void emit(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << std::endl;
  } else {
    auto os = open_out(path);
    os << j.dump(2) << "\n";
  }
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw model_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

std::vector<double> parse_n_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  if (out.empty()) throw model_error("empty n grid");
  return out;
}

int cmd_validate(const std::string& spec, const std::string& n_grid_text, double radius,
                 int samples, std::uint64_t seed, const std::string& out) {
  const model_instance model = load_model(spec);
  std::vector<scaled_chain> family;
  for (double n : parse_n_grid(n_grid_text)) family.push_back(model.scaled_at(n));
  const assumption_report rep = validate_assumptions(
      family, box::symmetric(model.dimension(), radius), samples, seed);
  emit(assumption_report_json(rep), out);
  return rep.pass() ? exit_ok : exit_hypothesis;
}

int cmd_fluid(const std::string& spec, double n, double x0, double T, double step,
              const std::string& out_csv, const std::string& out_json) {
  const model_instance model = load_model(spec);
  fluid_model fm{[&](const vec& x) { return derive_drift(model.chain, n, x); },
                 model.dimension(), n};
  const vec start = vec::Constant(model.dimension(), x0);
  const trajectory traj = integrate_fm(fm, start, T, step);
  if (!out_csv.empty()) {
    auto os = open_out(out_csv);
    write_trajectory_csv(os, traj);
  }
  const stationary_point_result sp = stationary_point(fm, traj.states.back());
  emit(stationary_point_json(sp), out_json);
  return exit_ok;
}

int cmd_steady(const std::string& spec, double n, const std::string& side, double halfwidth,
               double dm_box, int dm_points, const std::string& out_prefix) {
  const model_instance model = load_model(spec);
  const scaled_chain sc = model.scaled_at(n);
  json summary;
  summary["schema"] = "qlab-steady-summary/1";
  summary["n"] = n;

  auto scaled_moment = [](const auto& dist, int i) {
    return moment(dist, [i](const vec& x) { return x[i]; });
  };

  if (side == "chain" || side == "both") {
    discrete_stationary nu;
    if (model.chain.is_birth_death()) {
      const double c = sc.center()[0];
      const int lo = std::max(0, static_cast<int>(std::floor(c - halfwidth * sc.sqrt_n())));
      const int hi = static_cast<int>(std::ceil(c + halfwidth * sc.sqrt_n()));
      nu = chain_stationary_bd(sc, lo, hi);
    } else {
      lattice_box lbox;
      for (int i = 0; i < model.dimension(); ++i) {
        const double c = sc.center()[i];
        lbox.lo.push_back(std::max(0, static_cast<int>(std::floor(c - halfwidth * sc.sqrt_n()))));
        lbox.hi.push_back(static_cast<int>(std::ceil(c + halfwidth * sc.sqrt_n())));
      }
      nu = chain_stationary_general(sc, lbox);
    }
    if (!out_prefix.empty()) {
      auto os = open_out(out_prefix + ".chain.csv");
      write_distribution_csv(os, nu);
    }
    json side_j;
    side_j["truncation_mass_bound"] = nu.truncation_mass_bound;
    for (int i = 0; i < model.dimension(); ++i) {
      const auto m1 = scaled_moment(nu, i);
      side_j["mean"].push_back(m1.value);
      side_j["mean_truncation_bound"].push_back(m1.truncation_bound);
      const auto m2 = moment(nu, [i](const vec& x) { return x[i] * x[i]; });
      side_j["second_moment"].push_back(m2.value);
    }
    summary["chain"] = side_j;
  }

  if (side == "dm" || side == "both") {
    const diffusion_model dm = model.dm_at(n);
    json side_j;
    if (model.dimension() == 1) {
      const double kink = dm.drift_kinks.empty() ? 0.0 : dm.drift_kinks.front();
      const grid1d g =
          grid1d::with_anchor(-dm_box, dm_box, 2.0 * dm_box / (dm_points - 1), kink);
      const continuous_stationary_1d pi = dm_stationary_1d(dm, g);
      if (!out_prefix.empty()) {
        auto os = open_out(out_prefix + ".dm.csv");
        write_distribution_csv(os, pi);
      }
      side_j["truncation_mass_bound"] = pi.truncation_mass_bound;
      side_j["mean"].push_back(scaled_moment(pi, 0).value);
      side_j["second_moment"].push_back(
          moment(pi, [](const vec& x) { return x[0] * x[0]; }).value);
    } else if (model.dimension() == 2) {
      const grid1d gx(-dm_box, dm_box, dm_points);
      const continuous_stationary_2d pi = dm_stationary_fd(dm, gx, gx);
      if (!out_prefix.empty()) {
        auto os = open_out(out_prefix + ".dm.csv");
        write_distribution_csv(os, pi);
      }
      side_j["truncation_mass_bound"] = pi.truncation_mass_bound;
      side_j["refinement_l1"] = pi.refinement_l1;
      for (int i = 0; i < 2; ++i) side_j["mean"].push_back(scaled_moment(pi, i).value);
      side_j["second_moment_norm"] =
          moment(pi, [](const vec& x) { return x.squaredNorm(); }).value;
    } else {
      throw model_error("steady: DM side supports d <= 2 (use simulate for higher d)");
    }
    summary["dm"] = side_j;
  }
  emit(summary, out_prefix.empty() ? "" : out_prefix + ".json");
  return exit_ok;
}

int cmd_lyapunov(const std::string& spec, const std::string& n_grid_text,
                 const std::string& candidate, int m, double rho, double delta_trial,
                 double radius, int points, const std::string& out) {
  const model_instance model = load_model(spec);
  std::vector<diffusion_model> dms;
  for (double n : parse_n_grid(n_grid_text)) dms.push_back(model.dm_at(n));
  const int d = model.dimension();

  lyapunov_candidate cand;
  if (candidate == "poly") {
    if (d != 1) throw model_error("lyapunov: poly candidate is 1-d");
    cand = poly_candidate(m, rho);
  } else if (candidate == "quadratic") {
    cand = power_candidate(quadratic_candidate(mat::Identity(d, d), rho), m);
  } else {
    throw model_error("lyapunov: unknown candidate family '" + candidate + "'");
  }

  std::vector<vec> grid;
  if (d == 1) {
    const grid1d g(-radius, radius, points);
    for (int i = 0; i < points; ++i) grid.push_back(scalar_vec(g[i]));
  } else if (d == 2) {
    const int per_axis = std::max(21, points / 10);
    const grid1d g(-radius, radius, per_axis);
    for (int i = 0; i < per_axis; ++i)
      for (int j = 0; j < per_axis; ++j) grid.push_back(make_vec({g[i], g[j]}));
  } else {
    throw model_error("lyapunov: d > 2 unsupported");
  }

  const ul_result res = check_ul(dms, cand, delta_trial, radius, grid);
  if (const auto* cert = std::get_if<ul_certificate>(&res)) {
    json j = ul_certificate_json(*cert);
    if (const auto se = check_subexponential(cand, grid))
      j["subexponential"] = {{"c1", se->c1}, {"c2", se->c2}, {"c3", se->c3}, {"note", se->note}};
    const auto transfer = check_dm_to_ctmc(cand, parse_n_grid(n_grid_text), grid);
    j["dm_to_ctmc"] = {{"pass", transfer.pass}, {"C", transfer.C}, {"note", transfer.note}};
    emit(j, out);
    return exit_ok;
  }
  emit(ul_counterexample_json(std::get<ul_counterexample>(res)), out);
  return exit_hypothesis;
}

int cmd_poisson(const std::string& spec, double n, const std::string& f_text, double box_radius,
                double step, const std::string& out_prefix) {
  const model_instance model = load_model(spec);
  if (model.dimension() != 1)
    throw model_error("poisson: 1-d models only (multi-d is out of numerical scope)");
  const diffusion_model dm = model.dm_at(n);
  const auto f_vec = parse_test_function(f_text);
  const auto f = [f_vec](double x) { return f_vec(scalar_vec(x)); };
  const poisson_solution sol = solve_poisson_1d(dm, f, -box_radius, box_radius, step);
  if (!out_prefix.empty()) {
    auto os = open_out(out_prefix + ".csv");
    write_poisson_csv(os, sol);
  }
  json j;
  j["schema"] = "qlab-poisson-report/1";
  j["n"] = n;
  j["pi_f"] = sol.pi_f;
  j["residual_sup"] = sol.residual_sup;
  j["error_budget"] = sol.error_budget;
  emit(j, out_prefix.empty() ? "" : out_prefix + ".json");
  return exit_ok;
}

int cmd_gap(const std::string& config_path) {
  const json cfg_j = load_json(config_path);
  if (cfg_j.value("schema", "") != "qlab-gap/1")
    throw model_error("gap config: want schema qlab-gap/1");
  const model_instance model = parse_model(cfg_j.at("model"));
  gap_config cfg;
  cfg.n_grid = cfg_j.at("n_grid").get<std::vector<double>>();
  cfg.seed = cfg_j.at("seed").get<std::uint64_t>();
  if (cfg_j.contains("solver")) {
    const json& s = cfg_j.at("solver");
    cfg.chain_box_halfwidth = s.value("chain_box_halfwidth", cfg.chain_box_halfwidth);
    cfg.dm_box = s.value("dm_box", cfg.dm_box);
    cfg.dm_points = s.value("dm_points", cfg.dm_points);
    cfg.fd_box = s.value("fd_box", cfg.fd_box);
    cfg.fd_points = s.value("fd_points", cfg.fd_points);
    cfg.cross_check_simulation = s.value("cross_check_simulation", cfg.cross_check_simulation);
    cfg.sim_horizon = s.value("sim_horizon", cfg.sim_horizon);
    cfg.sim_step = s.value("sim_step", cfg.sim_step);
  }
  const std::string out_prefix = cfg_j.value("output_prefix", "");
  bool any_failed = false;
  for (const auto& f_j : cfg_j.at("test_functions")) {
    const std::string f_text = f_j.get<std::string>();
    const gap_report rep = run_gap_study(model, parse_test_function(f_text), f_text, cfg);
    for (const auto& row : rep.rows) any_failed = any_failed || row.failed;
    const std::string tag = std::to_string(&f_j - &*cfg_j.at("test_functions").begin());
    if (!out_prefix.empty()) {
      auto csv = open_out(out_prefix + ".f" + tag + ".csv");
      write_gap_csv(csv, rep);
      auto js = open_out(out_prefix + ".f" + tag + ".json");
      js << gap_report_json(rep).dump(2) << "\n";
    } else {
      std::cout << gap_report_json(rep).dump(2) << std::endl;
    }
  }
  return any_failed ? exit_solver : exit_ok;
}

int cmd_simulate(const std::string& spec, double n, double T, std::uint64_t seed,
                 const std::string& kind, double step, const std::string& estimate,
                 const std::string& out_csv, const std::string& out_json) {
  const model_instance model = load_model(spec);
  sim_path path;
  if (kind == "chain") {
    const scaled_chain sc = model.scaled_at(n);
    path = simulate_ctmc(sc, vec::Zero(model.dimension()), T, seed);
  } else if (kind == "dm") {
    const diffusion_model dm = model.dm_at(n);
    path = simulate_dm(dm, vec::Zero(model.dimension()), T, step, seed);
  } else {
    throw model_error("simulate: kind must be chain or dm");
  }
  if (!out_csv.empty()) {
    auto os = open_out(out_csv);
    write_path_csv(os, path);
  }
  if (!estimate.empty()) {
    const batch_estimate est = steady_estimate(path, parse_test_function(estimate));
    emit(batch_estimate_json(est, seed), out_json);
  }
  return exit_ok;
}

int cmd_decay(const std::string& config_path) {
  const json cfg = load_json(config_path);
  if (cfg.value("schema", "") != "qlab-decay/1")
    throw model_error("decay config: want schema qlab-decay/1");
  const model_instance model = parse_model(cfg.at("model"));
  const double n = cfg.at("n").get<double>();
  const diffusion_model dm = model.dm_at(n);
  const auto f = parse_test_function(cfg.at("f").get<std::string>());
  std::vector<vec> x0s;
  for (const auto& row : cfg.at("x0")) {
    const auto v = row.get<std::vector<double>>();
    x0s.push_back(Eigen::Map<const vec>(v.data(), v.size()));
  }
  const auto t_grid = cfg.at("t_grid").get<std::vector<double>>();
  const int reps = cfg.at("reps").get<int>();
  const double step = cfg.value("step", 0.01);
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

  // pi(f) from the 1-d closed form or a long simulation
  double pi_f = 0.0;
  if (model.dimension() == 1) {
    const double kink = dm.drift_kinks.empty() ? 0.0 : dm.drift_kinks.front();
    const grid1d g = grid1d::with_anchor(-12.0, 12.0, 0.01, kink);
    pi_f = moment(dm_stationary_1d(dm, g), f).value;
  } else {
    const sim_path path = simulate_dm(dm, vec::Zero(model.dimension()), 2000.0, 0.01, seed,
                                      0xabcdULL);
    pi_f = steady_estimate(path, f).value;
  }
  const auto fits = ergodicity_decay(dm, f, pi_f, x0s, t_grid, reps, step, seed);
  json j = decay_report_json(fits, seed);
  j["pi_f"] = pi_f;
  emit(j, cfg.value("output", ""));
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlab: steady-state diffusion approximations for Markovian queueing models"};
  app.require_subcommand(1);

  std::string spec, config, out, out_csv, out_json, out_prefix;
  std::string n_grid_text = "100,1000";
  std::string candidate = "poly", f_text = "x1", side = "both", kind = "chain", estimate;
  double n = 100.0, x0 = 0.0, T = 10.0, step = 1e-3, radius = 10.0, rho = 1.0;
  double delta_trial = 1.0, box_radius = 10.0, halfwidth = 12.0, dm_box = 12.0;
  int samples = 200, m = 1, points = 2001, dm_points = 2401;
  std::uint64_t seed = 0;

  auto* validate = app.add_subcommand("validate", "check structural assumptions of a model");
  validate->add_option("spec", spec)->required();
  validate->add_option("--n-grid", n_grid_text);
  validate->add_option("--radius", radius);
  validate->add_option("--samples", samples);
  validate->add_option("--seed", seed)->required();
  validate->add_option("--out", out);

  auto* fluid = app.add_subcommand("fluid", "integrate the fluid model, locate its root");
  fluid->add_option("spec", spec)->required();
  fluid->add_option("--n", n)->required();
  fluid->add_option("--x0", x0);
  fluid->add_option("--T", T);
  fluid->add_option("--step", step);
  fluid->add_option("--out", out_csv);
  fluid->add_option("--json", out_json);

  auto* steady = app.add_subcommand("steady", "stationary distributions of chain and DM");
  steady->add_option("spec", spec)->required();
  steady->add_option("--n", n)->required();
  steady->add_option("--side", side);
  steady->add_option("--halfwidth", halfwidth);
  steady->add_option("--dm-box", dm_box);
  steady->add_option("--dm-points", dm_points);
  steady->add_option("--out", out_prefix);

  auto* lyap = app.add_subcommand("lyapunov", "certify the uniform Lyapunov condition");
  lyap->add_option("spec", spec)->required();
  lyap->add_option("--n-grid", n_grid_text);
  lyap->add_option("--candidate", candidate);
  lyap->add_option("--m", m);
  lyap->add_option("--rho", rho);
  lyap->add_option("--delta-trial", delta_trial);
  lyap->add_option("--radius", radius);
  lyap->add_option("--points", points);
  lyap->add_option("--out", out);

  auto* poisson = app.add_subcommand("poisson", "solve the DM Poisson equation");
  poisson->add_option("spec", spec)->required();
  poisson->add_option("--n", n)->required();
  poisson->add_option("--f", f_text)->required();
  poisson->add_option("--box", box_radius);
  poisson->add_option("--step", step);
  poisson->add_option("--out", out_prefix);

  auto* gap = app.add_subcommand("gap", "run a gap-rate study from a config file");
  gap->add_option("config", config)->required();

  auto* simulate = app.add_subcommand("simulate", "simulate the chain or the DM");
  simulate->add_option("spec", spec)->required();
  simulate->add_option("--n", n)->required();
  simulate->add_option("--T", T)->required();
  simulate->add_option("--seed", seed)->required();
  simulate->add_option("--kind", kind);
  simulate->add_option("--step", step);
  simulate->add_option("--estimate", estimate);
  simulate->add_option("--out", out_csv);
  simulate->add_option("--json", out_json);

  auto* decay = app.add_subcommand("decay", "ergodicity decay study from a config file");
  decay->add_option("config", config)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed())
      return cmd_validate(spec, n_grid_text, radius, samples, seed, out);
    if (fluid->parsed()) return cmd_fluid(spec, n, x0, T, step, out_csv, out_json);
    if (steady->parsed())
      return cmd_steady(spec, n, side, halfwidth, dm_box, dm_points, out_prefix);
    if (lyap->parsed())
      return cmd_lyapunov(spec, n_grid_text, candidate, m, rho, delta_trial, radius, points,
                          out);
    if (poisson->parsed()) return cmd_poisson(spec, n, f_text, box_radius, step, out_prefix);
    if (gap->parsed()) return cmd_gap(config);
    if (simulate->parsed())
      return cmd_simulate(spec, n, T, seed, kind, step, estimate, out_csv, out_json);
    if (decay->parsed()) return cmd_decay(config);
  } catch (const qlab::hypothesis_error& e) {
    std::cerr << "hypothesis check failed: " << e.what() << std::endl;
    return exit_hypothesis;
  } catch (const qlab::model_error& e) {
    std::cerr << "model error: " << e.what() << std::endl;
    return exit_solver;
  } catch (const qlab::solver_error& e) {
    std::cerr << "solver error: " << e.what() << std::endl;
    return exit_solver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_solver;
  }
  return exit_ok;
}
