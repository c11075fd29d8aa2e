#pragma once

#include "qlab/chain.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace qlab {

// ---------------------------------------------------------------------------
// Erlang-A: birth rate n, death rate mu*(x ^ N) + theta*(x - N)^+.
// ---------------------------------------------------------------------------

struct erlang_a_params {
  double mu = 1.0;
  double theta = 1.0;
  std::function<double(double)> staffing;  // N^n as a function of n

  erlang_a_params() = default;
  erlang_a_params(double mu_, double theta_, std::function<double(double)> staffing_)
      : mu(mu_), theta(theta_), staffing(std::move(staffing_)) {}
  static erlang_a_params critically_staffed(double mu_, double theta_) {
    return erlang_a_params(mu_, theta_, [mu_](double n) { return n / mu_; });
  }
};

inline chain_family build_erlang_a(const erlang_a_params& p) {
  if (!(p.theta > 0.0)) throw model_error("erlang_a: patience rate theta must be positive");
  if (!(p.mu > 0.0)) throw model_error("erlang_a: service rate mu must be positive");
  if (!p.staffing) throw model_error("erlang_a: staffing rule missing");
  const double mu = p.mu, theta = p.theta;
  auto staffing = p.staffing;
  std::vector<jump> jumps;
  jumps.push_back({scalar_vec(1.0), [](double n, const vec&) { return n; }, "arrival"});
  jumps.push_back({scalar_vec(-1.0),
                   [mu, theta, staffing](double n, const vec& x) {
                     // real-argument extension as written: vanishes at 0 and
                     // goes negative below it, which only ever feeds the
                     // drift/variance extensions, never lattice dynamics
                     const double N = staffing(n);
                     return mu * std::min(x[0], N) + theta * pos_part(x[0] - N);
                   },
                   "departure"});
  auto domain = [](double, const vec& x) { return x[0] >= 0.0; };
  return chain_family(1, std::move(jumps), domain);
}

/// Unique root of the Erlang-A drift: n/mu when underloaded, else
/// N + (n - mu N)/theta.
inline double erlang_a_stationary_point(const erlang_a_params& p, double n) {
  const double N = p.staffing(n);
  if (n <= p.mu * N) return n / p.mu;
  return N + (n - p.mu * N) / p.theta;
}

/// Kink location of the scaled drift (where x ^ N switches branch).
inline double erlang_a_scaled_kink(const erlang_a_params& p, double n) {
  return (p.staffing(n) - erlang_a_stationary_point(p, n)) / std::sqrt(n);
}

// ---------------------------------------------------------------------------
// M/PH/n+M: phase-type service (p = e1), exponential abandonment.
// ---------------------------------------------------------------------------

struct phase_type_params {
  vec nu;         // per-phase completion rates, > 0
  mat routing;    // substochastic P, row sums <= 1, zero diagonal
  double theta = 1.0;
  double staffing_beta = 0.0;  // N^n = sum_k gamma^n_k + beta*sqrt(n), default 0

  int phases() const { return static_cast<int>(nu.size()); }

  void check() const {
    const int I = phases();
    if (I < 1) throw model_error("phase_type: need at least one phase");
    if (routing.rows() != I || routing.cols() != I)
      throw model_error("phase_type: routing matrix must be I x I");
    if (!(theta > 0.0)) throw model_error("phase_type: theta must be positive");
    for (int i = 0; i < I; ++i) {
      if (!(nu[i] > 0.0)) throw model_error("phase_type: phase rates must be positive");
      double row = 0.0;
      for (int j = 0; j < I; ++j) {
        if (routing(i, j) < 0.0) throw model_error("phase_type: negative routing probability");
        row += routing(i, j);
      }
      if (row > 1.0 + 1e-12) throw model_error("phase_type: routing row sum exceeds 1");
      if (routing(i, i) != 0.0) throw model_error("phase_type: self-routing not supported");
    }
  }
};

/// R = (I - P') diag(nu), mean service rate mu with 1/mu = e'R^{-1}p, and the
/// per-phase load profile gamma = mu R^{-1} p.  `mean_service_time` stores
/// e'R^{-1}p itself so that 1/mu is reproduced exactly.
struct ph_derived_values {
  mat R;
  double mu = 0.0;
  double mean_service_time = 0.0;  // e'R^{-1}p, == 1/mu by construction
  vec gamma;
};

inline ph_derived_values ph_derived(const phase_type_params& p) {
  p.check();
  const int I = p.phases();
  mat R = (mat::Identity(I, I) - p.routing.transpose()) * p.nu.asDiagonal();
  Eigen::FullPivLU<mat> lu(R);
  if (!lu.isInvertible()) throw model_error("phase_type: R = (I - P')diag(nu) is singular");
  vec e1 = vec::Zero(I);
  e1[0] = 1.0;
  const vec m = lu.solve(e1);  // R^{-1} p
  const double mst = m.sum();
  if (!(mst > 0.0)) throw model_error("phase_type: nonpositive mean service time");
  ph_derived_values out;
  out.R = std::move(R);
  out.mean_service_time = mst;
  out.mu = 1.0 / mst;
  out.gamma = m / mst;
  return out;
}

struct mphn_model {
  phase_type_params params;
  ph_derived_values derived;
  std::function<double(double)> staffing;  // N^n
  bool staffing_rounded = false;           // sum gamma^n_k was not an integer

  vec center(double n) const { return derived.gamma * n; }
};

/// Number in queue at unscaled state x given N servers.
inline double mphn_queue(const vec& x, double N) { return pos_part(x.sum() - N); }

/// In-service headcount per phase; phase 1 carries the queue.
inline vec mphn_in_service(const vec& x, double N) {
  vec s = x;
  s[0] -= mphn_queue(x, N);
  return s;
}

/// Reconstructed transition family: arrival +e1 at rate n; completion at k
/// routed to j as -e_k + e_j at rate nu_k * (in service at k) * P_kj; exit
/// -e_k at rate nu_k * (in service at k) * (1 - sum_j P_kj); abandonment -e1
/// at rate theta * queue.
inline chain_family build_mphn(const mphn_model& m) {
  m.params.check();
  const int I = m.params.phases();
  const vec nu = m.params.nu;
  const mat P = m.params.routing;
  const double theta = m.params.theta;
  auto staffing = m.staffing;

  auto in_service_checked = [staffing, I](double n, const vec& x, int k) {
    const double N = staffing(n);
    const double s = (k == 0) ? x[0] - mphn_queue(x, N) : x[k];
    if (s < 0.0) {
      bool lattice = true;
      for (int i = 0; i < I; ++i) lattice = lattice && x[i] == std::floor(x[i]) && x[i] >= 0.0;
      if (lattice) {
        std::ostringstream os;
        os << "mphn: negative in-service count at lattice state [" << x.transpose() << "]";
        throw model_error(os.str());
      }
    }
    return s;
  };

  std::vector<jump> jumps;
  {
    vec e1 = vec::Zero(I);
    e1[0] = 1.0;
    jumps.push_back({e1, [](double n, const vec&) { return n; }, "arrival"});
  }
  for (int k = 0; k < I; ++k) {
    for (int j = 0; j < I; ++j) {
      if (P(k, j) == 0.0) continue;
      vec dir = vec::Zero(I);
      dir[k] -= 1.0;
      dir[j] += 1.0;
      const double nuk = nu[k], pkj = P(k, j);
      jumps.push_back({dir,
                       [nuk, pkj, in_service_checked, k](double n, const vec& x) {
                         return nuk * pkj * in_service_checked(n, x, k);
                       },
                       "route_" + std::to_string(k + 1) + "_" + std::to_string(j + 1)});
    }
    const double exit_prob = 1.0 - P.row(k).sum();
    if (exit_prob > 0.0) {
      vec dir = vec::Zero(I);
      dir[k] = -1.0;
      const double nuk = nu[k];
      jumps.push_back({dir,
                       [nuk, exit_prob, in_service_checked, k](double n, const vec& x) {
                         return nuk * exit_prob * in_service_checked(n, x, k);
                       },
                       "exit_" + std::to_string(k + 1)});
    }
  }
  {
    vec dir = vec::Zero(I);
    dir[0] = -1.0;
    jumps.push_back({dir,
                     [theta, staffing](double n, const vec& x) {
                       return theta * mphn_queue(x, staffing(n));
                     },
                     "abandon"});
  }
  auto domain = [staffing](double n, const vec& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < 0.0) return false;
    return x[0] - mphn_queue(x, staffing(n)) >= 0.0;
  };
  return chain_family(I, std::move(jumps), domain);
}

inline mphn_model make_mphn(const phase_type_params& p) {
  mphn_model m;
  m.params = p;
  m.derived = ph_derived(p);
  const vec gamma = m.derived.gamma;
  const double beta = p.staffing_beta;
  m.staffing = [gamma, beta](double n) {
    return std::round(gamma.sum() * n + beta * std::sqrt(n));
  };
  // probe integrality at a reference scale for the report flag
  const double probe = gamma.sum() * 100.0 + beta * 10.0;
  m.staffing_rounded = std::fabs(probe - std::round(probe)) > 1e-9;
  return m;
}

// ---------------------------------------------------------------------------
// Closed-form scaled drift and diffusion coefficients for M/PH/n+M.  These
// are an independent code path against the jump reconstruction above; the
// cross-derivation tests pin the two together.
// ---------------------------------------------------------------------------

/// Fhat(x) = -R x + (R - theta I) p (e'x)^+, with p = e1.
inline vec mphn_drift_closed_form(const mphn_model& m, const vec& x) {
  const int I = m.params.phases();
  const double q = pos_part(x.sum());
  vec e1 = vec::Zero(I);
  e1[0] = 1.0;
  return -m.derived.R * x +
         q * ((m.derived.R - m.params.theta * mat::Identity(I, I)) * e1);
}

/// abar^n(x) at scaled state x.  Diagonal k: arrival (k=1 only), all service
/// events at k, completions routed into k, abandonment (k=1 only).
/// Off-diagonal (k,j): -(P_kj nu_k s_k + P_jk nu_j s_j) with s the in-service
/// headcounts.
inline mat mphn_avar_closed_form(const mphn_model& m, double n, const vec& x) {
  const int I = m.params.phases();
  const vec nu = m.params.nu;
  const mat& P = m.params.routing;
  const double sqrt_n = std::sqrt(n);
  const double N = m.staffing(n);
  const vec xu = m.center(n) + sqrt_n * x;  // unscaled state
  const double q = mphn_queue(xu, N);
  vec s = xu;
  s[0] -= q;

  mat a = mat::Zero(I, I);
  for (int k = 0; k < I; ++k) {
    double diag = nu[k] * s[k];  // every service event at k moves coordinate k
    for (int i = 0; i < I; ++i)
      if (i != k) diag += P(i, k) * nu[i] * s[i];
    if (k == 0) diag += n + m.params.theta * q;
    a(k, k) = diag;
    for (int j = k + 1; j < I; ++j) {
      const double off = -(P(k, j) * nu[k] * s[k] + P(j, k) * nu[j] * s[j]);
      a(k, j) = off;
      a(j, k) = off;
    }
  }
  return a / n;
}

}  // namespace qlab
