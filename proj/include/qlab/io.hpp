#pragma once

#include "qlab/chain.hpp"
#include "qlab/fluid.hpp"
#include "qlab/lab.hpp"
#include "qlab/lyapunov.hpp"
#include "qlab/poisson.hpp"
#include "qlab/simulate.hpp"
#include "qlab/steady_state.hpp"

#include <json.hpp>

#include <iomanip>
#include <ostream>
#include <string>

namespace qlab {

inline void csv_header(std::ostream& os, const std::string& schema) {
  os << "# schema: " << schema << "\n";
}

inline std::ostream& full_precision(std::ostream& os) {
  os << std::setprecision(17);
  return os;
}

inline void write_trajectory_csv(std::ostream& os, const trajectory& traj) {
  csv_header(os, "qlab-trajectory/1");
  full_precision(os);
  const int d = static_cast<int>(traj.states.front().size());
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  os << "\n";
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    os << traj.times[k];
    for (int i = 0; i < d; ++i) os << "," << traj.states[k][i];
    os << "\n";
  }
}

inline nlohmann::json stationary_point_json(const stationary_point_result& sp) {
  nlohmann::json j;
  j["schema"] = "qlab-stationary-point/1";
  j["point"] = std::vector<double>(sp.point.data(), sp.point.data() + sp.point.size());
  j["residual"] = sp.residual;
  j["iterations"] = sp.newton_iterations;
  j["integration_fallback"] = sp.used_integration_fallback;
  return j;
}

inline void write_distribution_csv(std::ostream& os, const discrete_stationary& d) {
  csv_header(os, "qlab-distribution-discrete/1");
  full_precision(os);
  const int dim = static_cast<int>(d.support.front().size());
  for (int i = 1; i <= dim; ++i) os << "x" << i << ",";
  os << "probability,truncation_boundary\n";
  for (std::size_t k = 0; k < d.support.size(); ++k) {
    for (int i = 0; i < dim; ++i) os << d.support[k][i] << ",";
    os << d.probs[k] << "," << int(d.truncation_boundary[k]) << "\n";
  }
}

inline void write_distribution_csv(std::ostream& os, const continuous_stationary_1d& d) {
  csv_header(os, "qlab-distribution-density/1");
  full_precision(os);
  os << "x1,density\n";
  for (int i = 0; i < d.grid.n_points; ++i) os << d.grid[i] << "," << d.density[i] << "\n";
}

inline void write_distribution_csv(std::ostream& os, const continuous_stationary_2d& d) {
  csv_header(os, "qlab-distribution-density/1");
  full_precision(os);
  os << "x1,x2,density\n";
  for (int i = 0; i < d.gx.n_points; ++i)
    for (int j = 0; j < d.gy.n_points; ++j)
      os << d.gx[i] << "," << d.gy[j] << "," << d.density(i, j) << "\n";
}

inline nlohmann::json assumption_report_json(const assumption_report& r) {
  nlohmann::json j;
  j["schema"] = "qlab-assumption-report/1";
  j["lipschitz_K_F"] = r.lipschitz_K_F;
  j["avar_growth_K_a"] = r.avar_growth_K_a;
  j["avar0_min_eig"] = r.avar0_min_eig;
  j["jump_bound"] = r.jump_bound;
  j["n_grid"] = r.n_grid;
  j["K_F_per_n"] = r.K_F_per_n;
  j["K_a_per_n"] = r.K_a_per_n;
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  j["box_lo"] = std::vector<double>(r.sampled_box.lo.data(),
                                    r.sampled_box.lo.data() + r.sampled_box.lo.size());
  j["box_hi"] = std::vector<double>(r.sampled_box.hi.data(),
                                    r.sampled_box.hi.data() + r.sampled_box.hi.size());
  auto verdict = [](const condition_verdict& v) {
    return nlohmann::json{{"pass", v.pass}, {"estimate", v.estimate}, {"note", v.note}};
  };
  j["drift_lipschitz"] = verdict(r.drift_lipschitz);
  j["avar_linear_growth"] = verdict(r.avar_linear_growth);
  j["avar0_positive_definite"] = verdict(r.avar0_positive_definite);
  j["jumps_bounded"] = verdict(r.jumps_bounded);
  j["pass"] = r.pass();
  return j;
}

inline nlohmann::json ul_certificate_json(const ul_certificate& c) {
  nlohmann::json j;
  j["schema"] = "qlab-ul-certificate/1";
  j["candidate"] = c.candidate;
  j["delta"] = c.delta;
  j["b"] = c.b;
  j["K"] = c.K;
  j["n_grid"] = c.n_grid;
  j["margin"] = c.margin;
  j["tail_rate"] = c.tail_rate;
  j["tail_structural"] = c.tail_structural;
  j["attestations"] = c.attestations;
  return j;
}

inline nlohmann::json ul_counterexample_json(const ul_counterexample& c) {
  nlohmann::json j;
  j["schema"] = "qlab-ul-counterexample/1";
  j["n"] = c.n;
  j["x"] = std::vector<double>(c.x.data(), c.x.data() + c.x.size());
  j["generator_value"] = c.generator_value;
  j["delta_v"] = c.delta_v;
  j["reason"] = c.reason;
  return j;
}

inline void write_poisson_csv(std::ostream& os, const poisson_solution& s) {
  csv_header(os, "qlab-poisson-solution/1");
  full_precision(os);
  os << "x,u,du,d2u,residual\n";
  for (int i = 0; i < s.grid.n_points; ++i)
    os << s.grid[i] << "," << s.u[i] << "," << s.du[i] << "," << s.d2u[i] << ","
       << s.residual[i] << "\n";
}

inline nlohmann::json gradient_report_json(const std::vector<std::pair<double, gradient_bound_report>>& per_n) {
  nlohmann::json j;
  j["schema"] = "qlab-gradient-report/1";
  for (const auto& [n, rep] : per_n) {
    nlohmann::json r;
    r["n"] = n;
    r["theta_hat"] = rep.theta_hat;
    r["theta_du"] = rep.theta_du;
    r["theta_d2u"] = rep.theta_d2u;
    r["theta_holder"] = rep.theta_holder;
    r["c3"] = rep.c3;
    r["C_u"] = rep.C_u;
    r["min_margin"] = rep.margins.empty()
                          ? 0.0
                          : *std::min_element(rep.margins.begin(), rep.margins.end());
    j["per_n"].push_back(r);
  }
  return j;
}

inline void write_path_csv(std::ostream& os, const sim_path& p, std::size_t max_rows = 100000) {
  csv_header(os, "qlab-path/1");
  full_precision(os);
  const int d = static_cast<int>(p.states.front().size());
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  os << "\n";
  const std::size_t stride = p.times.size() > max_rows ? p.times.size() / max_rows + 1 : 1;
  for (std::size_t k = 0; k < p.times.size(); k += stride) {
    os << p.times[k];
    for (int i = 0; i < d; ++i) os << "," << p.states[k][i];
    os << "\n";
  }
}

inline nlohmann::json batch_estimate_json(const batch_estimate& e, std::uint64_t seed) {
  nlohmann::json j;
  j["schema"] = "qlab-estimate/1";
  j["value"] = e.value;
  j["standard_error"] = e.standard_error;
  j["batches"] = e.batches;
  j["warmup_fraction"] = e.warmup_fraction;
  j["seed"] = seed;
  return j;
}

inline void write_gap_csv(std::ostream& os, const gap_report& r) {
  csv_header(os, "qlab-gap-rows/1");
  full_precision(os);
  os << "n,nu_f,pi_f,gap,sqrt_n_gap,error_budget,nu_solver,pi_solver,admissible,failed,"
        "message\n";
  for (const auto& row : r.rows) {
    os << row.n << "," << row.nu_f << "," << row.pi_f << "," << row.gap << ","
       << row.sqrt_n_gap << "," << row.error_budget << "," << row.nu_solver << ","
       << row.pi_solver << "," << int(row.admissible_for_fit) << "," << int(row.failed) << ","
       << row.message << "\n";
  }
}

inline nlohmann::json gap_report_json(const gap_report& r) {
  nlohmann::json j;
  j["schema"] = "qlab-gap-report/1";
  j["test_function"] = r.test_function;
  j["seed"] = r.seed;
  j["candidate"] = r.candidate;
  j["assumptions_pass"] = r.assumptions_pass;
  if (r.ul) j["ul_certificate"] = ul_certificate_json(*r.ul);
  if (r.subexp)
    j["subexponential"] = {{"c1", r.subexp->c1}, {"c2", r.subexp->c2}, {"c3", r.subexp->c3},
                           {"note", r.subexp->note}};
  if (r.transfer)
    j["dm_to_ctmc"] = {{"pass", r.transfer->pass}, {"C", r.transfer->C},
                       {"note", r.transfer->note}};
  if (r.chain_moment_bound)
    j["chain_moment_bound"] = {{"pass", r.chain_moment_bound->pass},
                               {"bound", r.chain_moment_bound->bound},
                               {"worst_value", r.chain_moment_bound->worst_value},
                               {"worst_n", r.chain_moment_bound->worst_n}};
  j["finite_integral"] = {{"attested", r.finite_integral.attested},
                          {"note", r.finite_integral.note}};
  if (r.fit)
    j["fit"] = {{"slope", r.fit->slope},
                {"stderr", r.fit->stderr_slope},
                {"rows_used", r.fit->rows_used},
                {"notes", r.fit->notes}};
  for (const auto& row : r.rows) {
    nlohmann::json rj;
    rj["n"] = row.n;
    rj["nu_f"] = row.nu_f;
    rj["pi_f"] = row.pi_f;
    rj["gap"] = row.gap;
    rj["sqrt_n_gap"] = row.sqrt_n_gap;
    rj["error_budget"] = row.error_budget;
    rj["nu_solver"] = row.nu_solver;
    rj["pi_solver"] = row.pi_solver;
    rj["admissible_for_fit"] = row.admissible_for_fit;
    rj["failed"] = row.failed;
    if (row.failed) rj["message"] = row.message;
    j["rows"].push_back(rj);
  }
  return j;
}

inline nlohmann::json decay_report_json(const std::vector<decay_fit>& fits,
                                        std::uint64_t seed) {
  nlohmann::json j;
  j["schema"] = "qlab-decay-report/1";
  j["seed"] = seed;
  for (const auto& f : fits) {
    nlohmann::json r;
    r["x0"] = std::vector<double>(f.x0.data(), f.x0.data() + f.x0.size());
    r["rate"] = f.rate;
    r["stderr"] = f.stderr_rate;
    r["points_used"] = f.points_used;
    r["note"] = f.note;
    j["fits"].push_back(r);
  }
  return j;
}

}  // namespace qlab
