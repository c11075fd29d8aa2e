#include "qlab/steady_state.hpp"
#include "qlab/model.hpp"
#include "qlab/zoo.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace qlab;

namespace {

double poisson_log_pmf(double lambda, int k) {
  return k * std::log(lambda) - lambda - std::lgamma(k + 1.0);
}

chain_family mm_infinity(double mu) {
  std::vector<jump> jumps;
  jumps.push_back({scalar_vec(1.0), [](double n, const vec&) { return n; }, "arrival"});
  jumps.push_back({scalar_vec(-1.0), [mu](double, const vec& x) { return mu * x[0]; },
                   "departure"});
  return chain_family(1, std::move(jumps),
                      [](double, const vec& x) { return x[0] >= 0.0; });
}

double total_variation(const discrete_stationary& a, const discrete_stationary& b) {
  REQUIRE(a.support.size() == b.support.size());
  double tv = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i) tv += std::fabs(a.probs[i] - b.probs[i]);
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("birth-death product form") {
  SECTION("infinite-server chain is Poisson") {
    const chain_family chain = mm_infinity(1.0);
    const double n = 100.0;
    const auto dist = chain_stationary_bd(chain, n, 0, 220);
    REQUIRE(std::fabs(dist.prob_sum() - 1.0) <= 1e-12);
    for (int k : {50, 80, 100, 120, 160})
      REQUIRE(dist.probs[k] == Catch::Approx(std::exp(poisson_log_pmf(n, k))).epsilon(1e-10));
    CHECK(dist.truncation_mass_bound < 1e-20);
  }
  SECTION("constant birth = death = 1 on {0..K} is uniform") {
    const int K = 7;
    std::vector<jump> jumps;
    jumps.push_back({scalar_vec(1.0),
                     [K](double, const vec& x) { return x[0] < K ? 1.0 : 0.0; }, "up"});
    jumps.push_back({scalar_vec(-1.0),
                     [](double, const vec& x) { return x[0] > 0.0 ? 1.0 : 0.0; }, "down"});
    const chain_family chain(1, std::move(jumps),
                             [K](double, const vec& x) { return x[0] >= 0.0 && x[0] <= K; });
    const auto dist = chain_stationary_bd(chain, 1.0, 0, K);
    for (double p : dist.probs) REQUIRE(p == Catch::Approx(1.0 / (K + 1)));
  }
  SECTION("Erlang-A scaled mean is near zero with finite moments") {
    const erlang_a_params p = erlang_a_params::critically_staffed(1.0, 0.5);
    const chain_family chain = build_erlang_a(p);
    const double n = 100.0;
    const scaled_chain sc(chain, n, scalar_vec(erlang_a_stationary_point(p, n)));
    const auto dist = chain_stationary_bd(sc, 0, 220);
    const double mean = moment(dist, [](const vec& x) { return x[0]; }).value;
    const double second = moment(dist, [](const vec& x) { return sqr(x[0]); }).value;
    CHECK(std::fabs(mean) < 0.5);
    CHECK(second > 0.1);
    CHECK(second < 10.0);
  }
  SECTION("zero interior death rate is an irreducibility error") {
    std::vector<jump> jumps;
    jumps.push_back({scalar_vec(1.0), [](double, const vec&) { return 1.0; }, "up"});
    jumps.push_back({scalar_vec(-1.0),
                     [](double, const vec& x) { return x[0] > 3.0 ? 1.0 : 0.0; }, "down"});
    const chain_family chain(1, std::move(jumps),
                             [](double, const vec& x) { return x[0] >= 0.0; });
    CHECK_THROWS_AS(chain_stationary_bd(chain, 1.0, 0, 10), model_error);
  }
}

TEST_CASE("general truncated solver") {
  SECTION("two-state chain with rates (a, b)") {
    const double a = 0.3, b = 1.7;
    std::vector<jump> jumps;
    jumps.push_back({scalar_vec(1.0),
                     [a](double, const vec& x) { return x[0] < 0.5 ? a : 0.0; }, "up"});
    jumps.push_back({scalar_vec(-1.0),
                     [b](double, const vec& x) { return x[0] > 0.5 ? b : 0.0; }, "down"});
    const chain_family chain(1, std::move(jumps),
                             [](double, const vec& x) { return x[0] >= 0.0 && x[0] <= 1.0; });
    lattice_box lbox{{0}, {1}};
    const auto dist = chain_stationary_general(chain, 1.0, lbox);
    CHECK(dist.probs[0] == Catch::Approx(b / (a + b)).epsilon(1e-12));
    CHECK(dist.probs[1] == Catch::Approx(a / (a + b)).epsilon(1e-12));
  }
  SECTION("agrees with detailed balance on randomized birth-death instances") {
    counter_rng rng(2024, 0);
    for (int trial = 0; trial < 3; ++trial) {
      const double up = 0.5 + 2.0 * rng.next_uniform();
      const double slope = 0.05 + 0.2 * rng.next_uniform();
      std::vector<jump> jumps;
      jumps.push_back({scalar_vec(1.0), [up](double, const vec&) { return up; }, "up"});
      jumps.push_back({scalar_vec(-1.0),
                       [slope](double, const vec& x) { return slope * x[0]; }, "down"});
      const chain_family chain(1, std::move(jumps),
                               [](double, const vec& x) { return x[0] >= 0.0; });
      const int hi = 60;
      const auto bd = chain_stationary_bd(chain, 1.0, 0, hi);
      lattice_box lbox{{0}, {hi}};
      const auto gen = chain_stationary_general(chain, 1.0, lbox);
      REQUIRE(total_variation(bd, gen) <= 1e-10);
    }
  }
  SECTION("reducible truncation is reported") {
    std::vector<jump> jumps;
    jumps.push_back({scalar_vec(1.0),
                     [](double, const vec& x) { return x[0] < 2.0 ? 0.0 : 1.0; }, "up"});
    jumps.push_back({scalar_vec(-1.0),
                     [](double, const vec& x) { return x[0] > 3.0 ? 1.0 : 0.0; }, "down"});
    const chain_family chain(1, std::move(jumps),
                             [](double, const vec& x) { return x[0] >= 0.0; });
    lattice_box lbox{{0}, {6}};
    CHECK_THROWS_AS(chain_stationary_general(chain, 1.0, lbox), model_error);
  }
  SECTION("phase-type box keeps the boundary layer light") {
    phase_type_params p;
    p.nu = make_vec({2.0, 2.0});
    p.routing = mat::Zero(2, 2);
    p.routing(0, 1) = 1.0;
    p.theta = 0.5;
    const model_instance m = make_mphn_model(p);
    const double n = 50.0;
    const scaled_chain sc = m.scaled_at(n);
    const double half = 8.0 * sc.sqrt_n();
    lattice_box lbox;
    for (int i = 0; i < 2; ++i) {
      lbox.lo.push_back(std::max(0, static_cast<int>(std::floor(sc.center()[i] - half))));
      lbox.hi.push_back(static_cast<int>(std::ceil(sc.center()[i] + half)));
    }
    const auto dist = chain_stationary_general(sc, lbox);
    CHECK(dist.truncation_mass_bound < 1e-8);
    CHECK(std::fabs(dist.prob_sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("1-d DM stationary density") {
  SECTION("OU gives the standard normal") {
    const diffusion_model ou =
        make_dm([](const vec& x) { return vec(-x); }, 2.0 * mat::Identity(1, 1), 1.0);
    const auto pi = dm_stationary_1d(ou, grid1d(-10.0, 10.0, 2001));
    const double z = 1.0 / std::sqrt(2.0 * M_PI);
    for (double x : {0.0, 0.5, 1.0, 2.5}) {
      const int i = pi.grid.nearest_index(x);
      REQUIRE(pi.density[i] ==
              Catch::Approx(z * std::exp(-sqr(pi.grid[i]) / 2.0)).epsilon(1e-8));
    }
    CHECK(moment(pi, [](const vec& x) { return sqr(x[0]); }).value ==
          Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("critically staffed Erlang-A is piecewise Gaussian") {
    const double mu = 1.0, theta = 0.5;
    const erlang_a_params p = erlang_a_params::critically_staffed(mu, theta);
    const model_instance m = make_erlang_a_model(p);
    const diffusion_model dm = m.dm_at(100.0);
    const auto pi = dm_stationary_1d(dm, grid1d(-12.0, 12.0, 2401));
    const double Z = std::sqrt(M_PI / 2.0) * (1.0 / std::sqrt(mu) + 1.0 / std::sqrt(theta));
    for (double x : {-2.0, -0.5, 0.5, 2.0, 4.0}) {
      const int i = pi.grid.nearest_index(x);
      const double xg = pi.grid[i];
      const double expected =
          (xg < 0 ? std::exp(-mu * sqr(xg) / 2.0) : std::exp(-theta * sqr(xg) / 2.0)) / Z;
      REQUIRE(pi.density[i] == Catch::Approx(expected).epsilon(1e-7));
    }
  }
  SECTION("sign drift gives the Laplace density") {
    diffusion_model dm = make_dm(
        [](const vec& x) { return scalar_vec(x[0] > 0 ? -1.0 : (x[0] < 0 ? 1.0 : 0.0)); },
        2.0 * mat::Identity(1, 1), 1.0);
    dm.drift_kinks = {0.0};
    const auto pi = dm_stationary_1d(dm, grid1d(-30.0, 30.0, 6001));
    for (double x : {-3.0, -1.0, 0.0, 2.0}) {
      const int i = pi.grid.nearest_index(x);
      REQUIRE(pi.density[i] ==
              Catch::Approx(0.5 * std::exp(-std::fabs(pi.grid[i]))).epsilon(1e-6));
    }
  }
  SECTION("box too small for an unstable density is an error") {
    const diffusion_model bad =
        make_dm([](const vec& x) { return vec(x); }, 2.0 * mat::Identity(1, 1), 1.0);
    CHECK_THROWS_AS(dm_stationary_1d(bad, grid1d(-5.0, 5.0, 501)), solver_error);
  }
  SECTION("stationary identity: generator moments vanish under the density") {
    const erlang_a_params p = erlang_a_params::critically_staffed(1.0, 0.5);
    const model_instance m = make_erlang_a_model(p);
    const diffusion_model dm = m.dm_at(100.0);
    const auto pi = dm_stationary_1d(dm, grid1d(-12.0, 12.0, 4801));
    for (int k : {1, 2, 3}) {
      const test_function u{
          [k](const vec& x) { return std::pow(x[0], k); },
          [k](const vec& x) { return scalar_vec(k * std::pow(x[0], k - 1)); },
          [k](const vec& x) {
            mat h(1, 1);
            h(0, 0) = k * (k - 1) * (k >= 2 ? std::pow(x[0], k - 2) : 0.0);
            return h;
          }};
      const double integral =
          moment(pi, [&](const vec& x) { return apply_generator(dm, u, x); }).value;
      REQUIRE(std::fabs(integral) <= 1e-6);
    }
  }
}

TEST_CASE("2-d Fokker-Planck solver") {
  SECTION("isotropic OU matches the product normal under refinement") {
    const diffusion_model iso =
        make_dm([](const vec& x) { return vec(-x); }, 2.0 * mat::Identity(2, 2), 1.0);
    const grid1d g(-6.0, 6.0, 61);
    const auto pi = dm_stationary_fd(iso, g, g);
    double l1 = 0.0;
    for (int i = 0; i < g.n_points; ++i) {
      const double wx = (i == 0 || i == g.n_points - 1) ? 0.5 * g.step : g.step;
      for (int j = 0; j < g.n_points; ++j) {
        const double wy = (j == 0 || j == g.n_points - 1) ? 0.5 * g.step : g.step;
        const double gauss =
            std::exp(-(sqr(g[i]) + sqr(g[j])) / 2.0) / (2.0 * M_PI);
        l1 += std::fabs(pi.density(i, j) - gauss) * wx * wy;
      }
    }
    CHECK(l1 <= 1e-4);
    CHECK(moment(pi, [](const vec& x) { return x.squaredNorm(); }).value ==
          Catch::Approx(2.0).margin(2e-4));
  }
  SECTION("linear drift with cross-correlated noise solves the Lyapunov equation") {
    // R and abar(0) of the serial phase-type model; the stationary law is the
    // zero-mean Gaussian with R S + S R' = abar(0), here S = I/2
    mat R(2, 2);
    R << 2.0, 0.0, -2.0, 2.0;
    mat a0(2, 2);
    a0 << 2.0, -1.0, -1.0, 2.0;
    const diffusion_model dm = make_dm([R](const vec& x) { return vec(-R * x); }, a0, 1.0);
    // oracle: solve the 2x2 Lyapunov equation directly
    mat lyap(3, 3);
    vec rhs(3);
    // unknowns (s11, s12, s22): rows from (RS + SR')_{11,12,22} = a0
    lyap << 2.0 * R(0, 0), 2.0 * R(0, 1), 0.0,
            R(1, 0), R(0, 0) + R(1, 1), R(0, 1),
            0.0, 2.0 * R(1, 0), 2.0 * R(1, 1);
    rhs << a0(0, 0), a0(0, 1), a0(1, 1);
    const vec s = lyap.fullPivLu().solve(rhs);
    CHECK(s[0] == Catch::Approx(0.5));
    CHECK(s[1] == Catch::Approx(0.0).margin(1e-14));
    CHECK(s[2] == Catch::Approx(0.5));

    const grid1d g(-5.0, 5.0, 81);
    const auto pi = dm_stationary_fd(dm, g, g);
    CHECK(moment(pi, [](const vec& x) { return sqr(x[0]); }).value ==
          Catch::Approx(s[0]).margin(3e-4));
    CHECK(moment(pi, [](const vec& x) { return x[0] * x[1]; }).value ==
          Catch::Approx(s[1]).margin(3e-4));
    CHECK(moment(pi, [](const vec& x) { return sqr(x[1]); }).value ==
          Catch::Approx(s[2]).margin(3e-4));
  }
}

TEST_CASE("moments and truncation accounting") {
  SECTION("normalization moment is exactly one") {
    const chain_family chain = mm_infinity(1.0);
    const auto dist = chain_stationary_bd(chain, 50.0, 0, 140);
    CHECK(moment(dist, [](const vec&) { return 1.0; }).value == Catch::Approx(1.0));
  }
  SECTION("third scaled central power of the Poisson law") {
    const chain_family chain = mm_infinity(1.0);
    const double n = 100.0;
    const scaled_chain sc(chain, n, scalar_vec(n));
    const auto dist = chain_stationary_bd(sc, 0, 220);
    // third central cumulant of Poisson(n) is n, so the scaled value is n^{-1/2}
    CHECK(moment(dist, [](const vec& x) { return std::pow(x[0], 3); }).value ==
          Catch::Approx(0.1).margin(1e-10));
  }
  SECTION("infinite-server variance identity between chain and DM") {
    const double mu = 1.0, n = 100.0;
    const chain_family chain = mm_infinity(mu);
    const scaled_chain sc(chain, n, scalar_vec(n / mu));
    const auto nu = chain_stationary_bd(sc, 0, 220);
    const diffusion_model dm = build_dm(sc);
    const auto pi = dm_stationary_1d(dm, grid1d(-12.0, 12.0, 2401));
    const double second_nu = moment(nu, [](const vec& x) { return sqr(x[0]); }).value;
    const double second_pi = moment(pi, [](const vec& x) { return sqr(x[0]); }).value;
    CHECK(std::fabs(second_nu - second_pi) <= 1e-8);
    CHECK(second_nu == Catch::Approx(1.0 / mu).margin(1e-8));
  }
  SECTION("box doubling moves moments by less than the reported bound") {
    const erlang_a_params p = erlang_a_params::critically_staffed(1.0, 0.5);
    const chain_family chain = build_erlang_a(p);
    const double n = 100.0;
    const scaled_chain sc(chain, n, scalar_vec(erlang_a_stationary_point(p, n)));
    const auto small = chain_stationary_bd(sc, 0, 160);  // 6 sigma
    const auto big = chain_stationary_bd(sc, 0, 220);    // 12 sigma
    auto f = [](const vec& x) { return sqr(x[0]); };
    const auto ms = moment(small, f);
    const auto mb = moment(big, f);
    CHECK(std::fabs(ms.value - mb.value) <=
          std::max(ms.truncation_bound, 1e-12) + mb.truncation_bound);
  }
  SECTION("NaN from the test function propagates as an error") {
    const chain_family chain = mm_infinity(1.0);
    const auto dist = chain_stationary_bd(chain, 10.0, 0, 40);
    CHECK_THROWS_AS(
        moment(dist, [](const vec&) { return std::numeric_limits<double>::quiet_NaN(); }),
        solver_error);
  }
}
