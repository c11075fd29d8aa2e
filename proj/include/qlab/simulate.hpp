#pragma once

#include "qlab/chain.hpp"
#include "qlab/common.hpp"
#include "qlab/diffusion.hpp"
#include "qlab/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <utility>
#include <vector>

namespace qlab {

enum class path_kind { chain, diffusion };

/// One simulated path, piecewise constant (chain) or Euler grid (diffusion).
struct sim_path {
  std::vector<double> times;
  std::vector<vec> states;  // scaled coordinates
  std::uint64_t seed = 0;
  path_kind kind = path_kind::chain;

  /// Time integral of f along the path divided by elapsed time on [t0, T].
  /// Chain paths are piecewise constant; diffusion paths use the trapezoid.
  double time_average(const std::function<double(const vec&)>& f, double t0) const {
    double acc = 0.0, len = 0.0;
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      const double a = std::max(times[i], t0);
      const double b = times[i + 1];
      if (b <= a) continue;
      const double dt = b - a;
      if (kind == path_kind::chain)
        acc += f(states[i]) * dt;
      else
        acc += 0.5 * (f(states[i]) + f(states[i + 1])) * dt;
      len += dt;
    }
    if (len <= 0.0) throw solver_error("time_average: empty window");
    return acc / len;
  }
};

/// Exact event-driven CTMC simulation in scaled coordinates: exponential
/// holding time at the total rate, jump chosen proportionally.
inline sim_path simulate_ctmc(const scaled_chain& sc, const vec& x0, double horizon,
                              std::uint64_t seed, std::uint64_t stream = 0) {
  sim_path path;
  path.seed = seed;
  path.kind = path_kind::chain;
  counter_rng rng(seed, stream * 2 + 1);

  vec x = sc.unscale(x0);
  double t = 0.0;
  path.times.push_back(0.0);
  path.states.push_back(sc.scale(x));
  const auto& jumps = sc.base().jumps();
  for (;;) {
    const auto rates = sc.base().rates(sc.n(), x);
    double total = 0.0;
    for (double r : rates) total += r;
    if (!(total < 1e15)) {
      std::ostringstream os;
      os << "simulate_ctmc: rate overflow " << total << " at state [" << x.transpose() << "]";
      throw solver_error(os.str());
    }
    if (total <= 0.0) {
      // absorbed: constant to the horizon
      path.times.push_back(horizon);
      path.states.push_back(sc.scale(x));
      break;
    }
    t += rng.next_exponential() / total;
    if (t >= horizon) {
      path.times.push_back(horizon);
      path.states.push_back(sc.scale(x));
      break;
    }
    double u = rng.next_uniform() * total;
    std::size_t k = 0;
    for (; k + 1 < rates.size(); ++k) {
      if (u < rates[k]) break;
      u -= rates[k];
    }
    x += jumps[k].direction;
    path.times.push_back(t);
    path.states.push_back(sc.scale(x));
  }
  return path;
}

/// Euler-Maruyama for the DM: y += Fhat(y) h + L sqrt(h) xi.  `drift_only`
/// drops the noise (ODE limit).
inline sim_path simulate_dm(const diffusion_model& dm, const vec& y0, double horizon,
                            double step, std::uint64_t seed, std::uint64_t stream = 0,
                            bool drift_only = false) {
  if (!(step > 0.0)) throw model_error("simulate_dm: step must be positive");
  sim_path path;
  path.seed = seed;
  path.kind = path_kind::diffusion;
  counter_rng rng(seed, stream * 2);

  const int d = dm.dimension;
  vec y = y0;
  double t = 0.0;
  path.times.push_back(0.0);
  path.states.push_back(y);
  const long long steps = static_cast<long long>(std::ceil(horizon / step - 1e-12));
  for (long long k = 0; k < steps; ++k) {
    const double h = std::min(step, horizon - t);
    vec dy = dm.drift_hat(y) * h;
    if (!drift_only) {
      vec xi(d);
      for (int i = 0; i < d; ++i) xi[i] = rng.next_normal();
      dy += dm.sqrt_avar0 * (std::sqrt(h) * xi);
    }
    y += dy;
    t += h;
    if (!all_finite(y)) {
      std::ostringstream os;
      os << "simulate_dm: path blew up at t = " << t;
      throw solver_error(os.str());
    }
    path.times.push_back(t);
    path.states.push_back(y);
  }
  return path;
}

/// Batch-means point estimate of a steady-state functional.
struct batch_estimate {
  double value = 0.0;
  double standard_error = 0.0;
  int batches = 0;
  double warmup_fraction = 0.0;
};

inline batch_estimate steady_estimate(const sim_path& path,
                                      const std::function<double(const vec&)>& f,
                                      double warmup_fraction = 0.1, int batches = 32) {
  if (batches < 20) throw model_error("steady_estimate: need at least 20 batches");
  const double T = path.times.back();
  const double t0 = warmup_fraction * T;
  if (!(T > t0)) throw solver_error("steady_estimate: path shorter than warmup");
  const double span = (T - t0) / batches;
  std::vector<double> means(batches);
  // batch k covers [t0 + k span, t0 + (k+1) span]
  std::size_t cursor = 0;
  for (int k = 0; k < batches; ++k) {
    const double a = t0 + k * span, b = t0 + (k + 1) * span;
    double acc = 0.0, len = 0.0;
    while (cursor + 1 < path.times.size() && path.times[cursor + 1] <= a) ++cursor;
    for (std::size_t i = cursor; i + 1 < path.times.size(); ++i) {
      const double lo = std::max(path.times[i], a);
      const double hi = std::min(path.times[i + 1], b);
      if (hi <= lo) {
        if (path.times[i] >= b) break;
        continue;
      }
      if (path.kind == path_kind::chain)
        acc += f(path.states[i]) * (hi - lo);
      else
        acc += 0.5 * (f(path.states[i]) + f(path.states[i + 1])) * (hi - lo);
      len += hi - lo;
    }
    means[k] = len > 0.0 ? acc / len : 0.0;
  }
  batch_estimate est;
  est.batches = batches;
  est.warmup_fraction = warmup_fraction;
  double m = 0.0;
  for (double v : means) m += v;
  m /= batches;
  double s2 = 0.0;
  for (double v : means) s2 += sqr(v - m);
  s2 /= (batches - 1);
  est.value = m;
  est.standard_error = std::sqrt(s2 / batches);
  return est;
}

/// Distributional comparison of chain and DM paths from a common start:
/// per-seed sup-norm of each path over [0, T].
struct path_comparison {
  std::vector<double> chain_sup;      // per replicate
  std::vector<double> diffusion_sup;  // per replicate
  double quantile_chain(double q) const { return quantile(chain_sup, q); }
  double quantile_diffusion(double q) const { return quantile(diffusion_sup, q); }

  static double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= v.size()) return v.back();
    const double w = pos - i;
    return (1.0 - w) * v[i] + w * v[i + 1];
  }
};

inline path_comparison compare_paths(const scaled_chain& sc, const diffusion_model& dm,
                                     const vec& x0, double horizon, double em_step,
                                     int replications, std::uint64_t seed) {
  path_comparison out;
  out.chain_sup.reserve(replications);
  out.diffusion_sup.reserve(replications);
  for (int r = 0; r < replications; ++r) {
    const sim_path cp = simulate_ctmc(sc, x0, horizon, seed, 2 * r + 1);
    const sim_path dp = simulate_dm(dm, x0, horizon, em_step, seed, 2 * r);
    double cs = 0.0, ds = 0.0;
    for (const auto& s : cp.states) cs = std::max(cs, s.norm());
    for (const auto& s : dp.states) ds = std::max(ds, s.norm());
    out.chain_sup.push_back(cs);
    out.diffusion_sup.push_back(ds);
  }
  return out;
}

}  // namespace qlab
