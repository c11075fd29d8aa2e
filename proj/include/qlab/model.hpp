#pragma once

#include "qlab/chain.hpp"
#include "qlab/diffusion.hpp"
#include "qlab/fluid.hpp"
#include "qlab/zoo.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qlab {

/// A chain family together with its centering rule and (for 1-d piecewise
/// drifts) the scaled kink locations.  Zoo models carry closed-form centers;
/// custom models fall back to the fluid stationary point.
struct model_instance {
  std::string kind;  // "erlang_a", "mphn", "custom"
  chain_family chain;
  std::function<vec(double)> center;                       // empty => numeric
  std::function<std::vector<double>(double)> scaled_kinks; // may be empty

  int dimension() const { return chain.dimension(); }

  vec center_at(double n) const {
    if (center) return center(n);
    // numeric centering: damped Newton on F^n from a crude interior guess
    fluid_model fm{[this, n](const vec& x) { return derive_drift(chain, n, x); },
                   chain.dimension(), n};
    vec x0 = vec::Constant(chain.dimension(), n / (2.0 * chain.dimension()));
    return stationary_point(fm, x0).point;
  }

  scaled_chain scaled_at(double n) const { return scale_chain(chain, n, center_at(n)); }

  diffusion_model dm_at(double n) const {
    const scaled_chain sc = scaled_at(n);
    diffusion_model dm = build_dm(sc);
    if (scaled_kinks) dm.drift_kinks = scaled_kinks(n);
    return dm;
  }
};

inline model_instance make_erlang_a_model(const erlang_a_params& p) {
  model_instance m{"erlang_a", build_erlang_a(p), {}, {}};
  m.center = [p](double n) { return scalar_vec(erlang_a_stationary_point(p, n)); };
  m.scaled_kinks = [p](double n) { return std::vector<double>{erlang_a_scaled_kink(p, n)}; };
  return m;
}

inline model_instance make_mphn_model(const phase_type_params& p) {
  const mphn_model zoo = make_mphn(p);
  model_instance m{"mphn", build_mphn(zoo), {}, {}};
  // gamma^n is the drift zero only at unit mean service rate; otherwise the
  // fluid solver locates the center
  if (std::fabs(zoo.derived.mu - 1.0) < 1e-9)
    m.center = [zoo](double n) { return vec(zoo.center(n)); };
  return m;
}

}  // namespace qlab
