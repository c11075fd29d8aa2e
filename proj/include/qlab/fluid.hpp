#pragma once

#include "qlab/common.hpp"

#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace qlab {

/// Deterministic drift field xdot = F(x).  Used for both the unscaled fluid
/// model (drift F^n) and the scaled one (drift Fhat^n); `scale` is carried
/// for reporting and tolerance purposes only.
struct fluid_model {
  std::function<vec(const vec&)> drift;
  int dimension = 1;
  double scale = 1.0;  // n
};

struct trajectory {
  std::vector<double> times;
  std::vector<vec> states;
};

/// Classical fourth-order one-step integration with fixed step; the final
/// partial step lands exactly on the horizon.
inline trajectory integrate_fm(const fluid_model& fm, const vec& x0, double horizon,
                               double step) {
  if (!(horizon > 0.0) || !(step > 0.0))
    throw model_error("integrate_fm: horizon and step must be positive");
  trajectory out;
  out.times.push_back(0.0);
  out.states.push_back(x0);
  vec x = x0;
  double t = 0.0;
  while (t < horizon) {
    const double h = std::min(step, horizon - t);
    const vec k1 = fm.drift(x);
    const vec k2 = fm.drift(x + 0.5 * h * k1);
    const vec k3 = fm.drift(x + 0.5 * h * k2);
    const vec k4 = fm.drift(x + h * k3);
    x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
    if (!all_finite(x)) {
      std::ostringstream os;
      os << "integrate_fm: non-finite state at t = " << t
         << ", last finite time " << out.times.back();
      throw solver_error(os.str());
    }
    out.times.push_back(t);
    out.states.push_back(x);
  }
  return out;
}

struct stationary_point_result {
  vec point;
  double residual = 0.0;
  int newton_iterations = 0;
  bool used_integration_fallback = false;
};

namespace detail {

inline mat fd_jacobian(const fluid_model& fm, const vec& x) {
  const int d = fm.dimension;
  mat J(d, d);
  for (int j = 0; j < d; ++j) {
    const double h = 1e-6 * (1.0 + std::fabs(x[j]));
    vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (fm.drift(xp) - fm.drift(xm)) / (2.0 * h);
  }
  return J;
}

}  // namespace detail

/// Damped Newton (central-difference Jacobian, backtracking on the residual)
/// with a long-horizon integration fallback when Newton stalls.  Residual
/// target is tol_per_scale * n, matching the O(n) magnitude of F^n.
inline stationary_point_result stationary_point(const fluid_model& fm, const vec& x0,
                                                double tol_per_scale = 1e-10,
                                                int max_iterations = 200) {
  const double tol = tol_per_scale * std::max(fm.scale, 1.0);
  stationary_point_result res;
  vec x = x0;
  double r = fm.drift(x).norm();
  int stalls = 0;
  for (int it = 0; it < max_iterations && r > tol; ++it) {
    ++res.newton_iterations;
    mat J = detail::fd_jacobian(fm, x);
    Eigen::FullPivLU<mat> lu(J);
    vec dx;
    if (lu.isInvertible()) {
      dx = lu.solve(-fm.drift(x));
    } else {
      dx = -fm.drift(x);  // gradient-free fallback direction
    }
    double lambda = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const vec cand = x + lambda * dx;
      const double rc = fm.drift(cand).norm();
      if (rc < r) {
        x = cand;
        r = rc;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) {
      if (++stalls >= 2) {
        // integrate toward the attractor, then resume Newton
        res.used_integration_fallback = true;
        const double T = 32.0;
        trajectory traj = integrate_fm(fm, x, T, T / 4096.0);
        x = traj.states.back();
        r = fm.drift(x).norm();
        stalls = 0;
      }
    } else {
      stalls = 0;
    }
  }
  res.point = x;
  res.residual = r;
  if (r > tol) {
    std::ostringstream os;
    os << "stationary_point: no convergence, best residual " << r << " > " << tol
       << " at x = [" << x.transpose() << "]";
    throw solver_error(os.str());
  }
  return res;
}

/// Evidence for the fluid-level drift condition Fhat'(x) DV(x) <=
/// -eta (V(x) - V(0)) across a family of scaled drifts, plus the outer-shell
/// Hessian ratio used as evidence for the vanishing-ratio condition.
struct fm_lyapunov_report {
  bool pass = false;
  double eta = 0.0;           // largest grid-certified eta
  double d2_ratio_sup = 0.0;  // sup over outer shell of |D2V|/V
  // counterexample when pass == false
  double bad_n = 0.0;
  vec bad_x;
  double lhs = 0.0, rhs = 0.0;
};

struct smooth_scalar_field {
  std::function<double(const vec&)> value;
  std::function<vec(const vec&)> gradient;
  std::function<mat(const vec&)> hessian;
};

inline fm_lyapunov_report check_fm_lyapunov(const smooth_scalar_field& V,
                                            const std::vector<fluid_model>& scaled_family,
                                            const std::vector<vec>& grid,
                                            double shell_fraction = 0.8) {
  if (scaled_family.empty() || grid.empty())
    throw model_error("check_fm_lyapunov: empty family or grid");
  const vec origin = vec::Zero(scaled_family.front().dimension);
  const double v0 = V.value(origin);
  double max_r = 0.0;
  for (const auto& x : grid) max_r = std::max(max_r, x.norm());

  fm_lyapunov_report rep;
  rep.eta = std::numeric_limits<double>::infinity();
  for (const auto& fm : scaled_family) {
    for (const auto& x : grid) {
      if (x.norm() < 1e-12) continue;
      const double vx = V.value(x);
      if (!(vx > v0)) {
        rep.pass = false;
        rep.bad_n = fm.scale;
        rep.bad_x = x;
        rep.lhs = vx;
        rep.rhs = v0;
        return rep;
      }
      const double directional = fm.drift(x).dot(V.gradient(x));
      const double eta_here = -directional / (vx - v0);
      if (!(eta_here > 0.0)) {
        rep.pass = false;
        rep.bad_n = fm.scale;
        rep.bad_x = x;
        rep.lhs = directional;
        rep.rhs = 0.0;
        return rep;
      }
      rep.eta = std::min(rep.eta, eta_here);
    }
  }
  for (const auto& x : grid) {
    if (x.norm() >= shell_fraction * max_r)
      rep.d2_ratio_sup = std::max(rep.d2_ratio_sup, V.hessian(x).norm() / V.value(x));
  }
  rep.pass = rep.eta > 0.0 && std::isfinite(rep.eta);
  return rep;
}

}  // namespace qlab
