#include "qlab/fluid.hpp"
#include "qlab/model.hpp"
#include "qlab/zoo.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace qlab;

namespace {

fluid_model linear_decay(double rate) {
  return fluid_model{[rate](const vec& x) { return vec(-rate * x); }, 1, 1.0};
}

/// Closed-form Erlang-A fluid path for n=100, mu=1, theta=0.5, N=80, x0=0:
/// xdot = 100 - x until x = 80 (at t* = ln 5), then relaxation to 120.
double erlang_fm_oracle(double t) {
  const double t_star = std::log(5.0);
  if (t <= t_star) return 100.0 * (1.0 - std::exp(-t));
  return 120.0 - 40.0 * std::exp(-0.5 * (t - t_star));
}

}  // namespace

TEST_CASE("fourth-order integration of simple fields") {
  SECTION("linear decay hits e^{-1}") {
    const trajectory traj = integrate_fm(linear_decay(1.0), scalar_vec(1.0), 1.0, 1e-3);
    CHECK(traj.times.front() == 0.0);
    CHECK(traj.times.back() == Catch::Approx(1.0));
    CHECK(traj.states.back()[0] == Catch::Approx(std::exp(-1.0)).margin(1e-6));
  }
  SECTION("zero field stays put") {
    const fluid_model still{[](const vec& x) { return vec(0.0 * x); }, 1, 1.0};
    const trajectory traj = integrate_fm(still, scalar_vec(2.5), 3.0, 0.1);
    for (const auto& s : traj.states) REQUIRE(s[0] == 2.5);
  }
  SECTION("overloaded Erlang-A approaches 120 and tracks the closed form") {
    const erlang_a_params p(1.0, 0.5, [](double) { return 80.0; });
    const chain_family chain = build_erlang_a(p);
    const fluid_model fm{[&](const vec& x) { return derive_drift(chain, 100.0, x); }, 1, 100.0};
    const trajectory traj = integrate_fm(fm, scalar_vec(0.0), 20.0, 1e-3);
    CHECK(traj.states.back()[0] == Catch::Approx(120.0).margin(1e-2));
    for (std::size_t k = 0; k < traj.times.size(); k += 2000)
      REQUIRE(traj.states[k][0] ==
              Catch::Approx(erlang_fm_oracle(traj.times[k])).margin(1e-4));
  }
  SECTION("divergence is reported with the last finite time") {
    const fluid_model blowup{[](const vec& x) { return vec(x.array().square().matrix() * 1e3); },
                             1, 1.0};
    CHECK_THROWS_AS(integrate_fm(blowup, scalar_vec(10.0), 10.0, 0.1), solver_error);
  }
  SECTION("contraction envelope") {
    const double theta = 0.7, h = 1e-3;
    const trajectory traj = integrate_fm(linear_decay(theta), scalar_vec(3.0), 5.0, h);
    for (std::size_t k = 0; k < traj.times.size(); k += 100)
      REQUIRE(std::fabs(traj.states[k][0]) <=
              3.0 * std::exp(-theta * traj.times[k]) + 10.0 * h);
  }
}

TEST_CASE("stationary point solver") {
  SECTION("underloaded Erlang-A root is n/mu") {
    const erlang_a_params p(1.0, 0.5, [](double) { return 120.0; });
    const chain_family chain = build_erlang_a(p);
    const fluid_model fm{[&](const vec& x) { return derive_drift(chain, 100.0, x); }, 1, 100.0};
    const auto sp = stationary_point(fm, scalar_vec(1.0));
    CHECK(sp.point[0] == Catch::Approx(100.0).margin(1e-7));
    CHECK(sp.residual <= 1e-10 * 100.0);
    // re-evaluating the drift at the point reproduces the residual
    CHECK(fm.drift(sp.point).norm() == sp.residual);
  }
  SECTION("overloaded Erlang-A root is N + (n - mu N)/theta") {
    const erlang_a_params p(1.0, 0.5, [](double) { return 80.0; });
    const chain_family chain = build_erlang_a(p);
    const fluid_model fm{[&](const vec& x) { return derive_drift(chain, 100.0, x); }, 1, 100.0};
    const auto sp = stationary_point(fm, scalar_vec(10.0));
    CHECK(sp.point[0] == Catch::Approx(120.0).margin(1e-7));
  }
  SECTION("phase-type center equals gamma n") {
    phase_type_params p;
    p.nu = make_vec({2.0, 2.0});
    p.routing = mat::Zero(2, 2);
    p.routing(0, 1) = 1.0;
    p.theta = 0.5;
    const model_instance m = make_mphn_model(p);
    const double n = 50.0;
    const vec closed = m.center_at(n);
    CHECK(closed[0] == Catch::Approx(25.0));
    CHECK(closed[1] == Catch::Approx(25.0));
    // numeric root from the generic solver agrees
    const fluid_model fm{[&](const vec& x) { return derive_drift(m.chain, n, x); }, 2, n};
    const auto sp = stationary_point(fm, make_vec({10.0, 10.0}));
    CHECK((sp.point - closed).norm() <= 1e-6);
  }
}

TEST_CASE("fluid-level drift condition") {
  const smooth_scalar_field V{
      [](const vec& x) { return 1.0 + x.squaredNorm(); },
      [](const vec& x) { return vec(2.0 * x); },
      [](const vec& x) { return mat(2.0 * mat::Identity(x.size(), x.size())); }};
  std::vector<vec> grid;
  for (double x = -6.0; x <= 6.0; x += 0.05) grid.push_back(scalar_vec(x));

  SECTION("pure decay certifies eta = 2 exactly") {
    const auto rep = check_fm_lyapunov(V, {linear_decay(1.0)}, grid);
    REQUIRE(rep.pass);
    CHECK(rep.eta == Catch::Approx(2.0));
  }
  SECTION("critically staffed Erlang-A certifies eta = 2 min(mu, theta)") {
    const double mu = 1.0, theta = 0.5;
    const erlang_a_params p = erlang_a_params::critically_staffed(mu, theta);
    const chain_family chain = build_erlang_a(p);
    std::vector<fluid_model> family;
    for (double n : {100.0, 10000.0}) {
      const scaled_chain sc(chain, n, scalar_vec(erlang_a_stationary_point(p, n)));
      family.push_back(fluid_model{[sc](const vec& x) { return sc.drift_hat(x); }, 1, n});
    }
    const auto rep = check_fm_lyapunov(V, family, grid);
    REQUIRE(rep.pass);
    CHECK(rep.eta == Catch::Approx(2.0 * std::min(mu, theta)).epsilon(1e-9));
    // quadratic V against quadratic growth: outer-shell ratio is small
    CHECK(rep.d2_ratio_sup <= 2.0 / (1.0 + sqr(0.8 * 6.0)) + 1e-12);
  }
  SECTION("unstable drift yields a counterexample") {
    const smooth_scalar_field V4{
        [](const vec& x) { return 1.0 + std::pow(x[0], 4); },
        [](const vec& x) { return scalar_vec(4.0 * std::pow(x[0], 3)); },
        [](const vec& x) {
          mat h(1, 1);
          h(0, 0) = 12.0 * sqr(x[0]);
          return h;
        }};
    const fluid_model unstable{[](const vec& x) { return vec(1.0 * x); }, 1, 1.0};
    const auto rep = check_fm_lyapunov(V4, {unstable}, grid);
    REQUIRE_FALSE(rep.pass);
    CHECK(rep.lhs > rep.rhs);
  }
  SECTION("verdict and eta are invariant to adding a constant to V") {
    const smooth_scalar_field Vshift{
        [](const vec& x) { return 26.0 + x.squaredNorm(); },
        [](const vec& x) { return vec(2.0 * x); },
        [](const vec& x) { return mat(2.0 * mat::Identity(x.size(), x.size())); }};
    const auto a = check_fm_lyapunov(V, {linear_decay(0.8)}, grid);
    const auto b = check_fm_lyapunov(Vshift, {linear_decay(0.8)}, grid);
    REQUIRE(a.pass == b.pass);
    CHECK(a.eta == Catch::Approx(b.eta));
  }
}
