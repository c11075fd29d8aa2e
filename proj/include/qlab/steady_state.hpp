#pragma once

#include "qlab/chain.hpp"
#include "qlab/common.hpp"
#include "qlab/diffusion.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <sstream>
#include <utility>
#include <vector>

namespace qlab {

struct moment_result {
  double value = 0.0;
  double truncation_bound = 0.0;  // |f| at the boundary times truncated mass
};

// ---------------------------------------------------------------------------
// Discrete stationary laws (scaled CTMC).
// ---------------------------------------------------------------------------

struct discrete_stationary {
  std::vector<vec> support;        // scaled states
  std::vector<double> probs;
  std::vector<std::uint8_t> truncation_boundary;  // 1 where jumps were censored
  double truncation_mass_bound = 0.0;
  /// Dominating masses for states beyond the box (geometric extension for
  /// birth-death solves); lets moment() bound the tail of growing f.
  std::vector<std::pair<vec, double>> tail_envelope;

  double prob_sum() const {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
  }
};

inline moment_result moment(const discrete_stationary& dist,
                            const std::function<double(const vec&)>& f) {
  moment_result out;
  double boundary_absmax = 0.0;
  for (std::size_t i = 0; i < dist.support.size(); ++i) {
    const double v = f(dist.support[i]);
    if (std::isnan(v)) throw solver_error("moment: NaN from test function");
    out.value += v * dist.probs[i];
    if (dist.truncation_boundary[i]) boundary_absmax = std::max(boundary_absmax, std::fabs(v));
  }
  if (dist.tail_envelope.empty()) {
    out.truncation_bound = boundary_absmax * dist.truncation_mass_bound;
  } else {
    for (const auto& [x, mass] : dist.tail_envelope)
      out.truncation_bound += std::fabs(f(x)) * mass;
  }
  return out;
}

namespace detail {

inline double birth_rate(const chain_family& chain, double n, double x) {
  vec xs = scalar_vec(x);
  double b = 0.0;
  const auto rates = chain.rates(n, xs);
  for (std::size_t k = 0; k < rates.size(); ++k)
    if (chain.jumps()[k].direction[0] > 0) b += rates[k];
  return b;
}

inline double death_rate(const chain_family& chain, double n, double x) {
  vec xs = scalar_vec(x);
  double d = 0.0;
  const auto rates = chain.rates(n, xs);
  for (std::size_t k = 0; k < rates.size(); ++k)
    if (chain.jumps()[k].direction[0] < 0) d += rates[k];
  return d;
}

}  // namespace detail

/// Detailed-balance product form for a 1-d birth-death chain truncated to
/// the integer box [x_lo, x_hi].  Support is emitted in scaled coordinates
/// (x - center)/sqrt(n).
inline discrete_stationary chain_stationary_bd(const chain_family& chain, double n, int x_lo,
                                               int x_hi, double center = 0.0,
                                               double sqrt_n = 1.0) {
  if (!chain.is_birth_death())
    throw model_error("chain_stationary_bd: chain is not 1-d birth-death");
  if (x_hi <= x_lo) throw model_error("chain_stationary_bd: empty box");

  const int count = x_hi - x_lo + 1;
  std::vector<double> logw(count, -std::numeric_limits<double>::infinity());
  logw[0] = 0.0;
  int top = 0;  // last reachable index
  for (int i = 1; i < count; ++i) {
    const double b = detail::birth_rate(chain, n, x_lo + i - 1.0);
    const double d = detail::death_rate(chain, n, x_lo + i + 0.0);
    if (b <= 0.0) break;  // states above are unreachable; they carry no mass
    if (d <= 0.0) {
      std::ostringstream os;
      os << "chain_stationary_bd: zero death rate at interior state " << x_lo + i
         << " with positive inflow (chain reducible on the box)";
      throw model_error(os.str());
    }
    logw[i] = logw[i - 1] + std::log(b) - std::log(d);
    top = i;
  }
  const double lmax = *std::max_element(logw.begin(), logw.begin() + top + 1);
  std::vector<double> w(count, 0.0);
  double z = 0.0;
  for (int i = 0; i <= top; ++i) {
    w[i] = std::exp(logw[i] - lmax);
    z += w[i];
  }

  discrete_stationary out;
  out.support.resize(count);
  out.probs.resize(count);
  out.truncation_boundary.assign(count, 0);
  for (int i = 0; i < count; ++i) {
    out.support[i] = scalar_vec((x_lo + i - center) / sqrt_n);
    out.probs[i] = w[i] / z;
  }
  out.truncation_boundary.back() = 1;
  if (x_lo > 0) out.truncation_boundary.front() = 1;

  // geometric tail envelope above the box: valid dominating masses whenever
  // the birth/death ratio keeps shrinking beyond x_hi, which holds for the
  // queueing models here (non-increasing births, non-decreasing deaths)
  const double b_top = detail::birth_rate(chain, n, static_cast<double>(x_hi));
  const double d_top = detail::death_rate(chain, n, x_hi + 1.0);
  if (b_top > 0.0 && d_top > 0.0) {
    const double r = b_top / d_top;
    if (r >= 1.0) {
      out.truncation_mass_bound = std::numeric_limits<double>::infinity();
    } else {
      double mass = out.probs.back();
      for (int k = 1; k <= 2000; ++k) {
        mass *= r;
        if (mass < 1e-18 * out.probs.back()) break;
        out.tail_envelope.emplace_back(scalar_vec((x_hi + k - center) / sqrt_n), mass);
        out.truncation_mass_bound += mass;
      }
      // remainder of the geometric series folded into the last entry
      if (!out.tail_envelope.empty() && r < 1.0) {
        out.tail_envelope.back().second += mass * r / (1.0 - r);
        out.truncation_mass_bound += mass * r / (1.0 - r);
      }
    }
  }
  return out;
}

inline discrete_stationary chain_stationary_bd(const scaled_chain& sc, int x_lo, int x_hi) {
  return chain_stationary_bd(sc.base(), sc.n(), x_lo, x_hi, sc.center()[0], sc.sqrt_n());
}

/// Integer lattice rectangle for truncated solves.
struct lattice_box {
  std::vector<int> lo;
  std::vector<int> hi;
  int dimension() const { return static_cast<int>(lo.size()); }
};

/// Truncated-generator stationary solve: censors jumps leaving the box,
/// solves nu Q = 0 with one balance equation replaced by normalization
/// (sparse LU; uniformized power iteration as fallback).
inline discrete_stationary chain_stationary_general(const chain_family& chain, double n,
                                                    const lattice_box& lbox,
                                                    const vec* center = nullptr,
                                                    double sqrt_n = 1.0) {
  const int d = chain.dimension();
  if (lbox.dimension() != d) throw model_error("chain_stationary_general: box dim mismatch");

  // enumerate lattice states inside box and domain
  std::vector<int> extent(d);
  long long total = 1;
  for (int i = 0; i < d; ++i) {
    extent[i] = lbox.hi[i] - lbox.lo[i] + 1;
    if (extent[i] <= 0) throw model_error("chain_stationary_general: empty box");
    total *= extent[i];
  }
  if (total > 40'000'000LL) throw solver_error("chain_stationary_general: box too large");

  auto pack = [&](const std::vector<int>& c) {
    long long key = 0;
    for (int i = 0; i < d; ++i) key = key * extent[i] + (c[i] - lbox.lo[i]);
    return key;
  };
  std::vector<long long> packed_of_state;
  std::vector<vec> states;
  std::vector<int> compact(total, -1);
  {
    std::vector<int> c(lbox.lo);
    for (;;) {
      vec x(d);
      for (int i = 0; i < d; ++i) x[i] = c[i];
      if (chain.in_domain(n, x)) {
        compact[pack(c)] = static_cast<int>(states.size());
        states.push_back(x);
        packed_of_state.push_back(pack(c));
      }
      int i = d - 1;
      while (i >= 0 && ++c[i] > lbox.hi[i]) c[i--] = lbox.lo[i];
      if (i < 0) break;
    }
  }
  const int N = static_cast<int>(states.size());
  if (N < 2) throw model_error("chain_stationary_general: fewer than 2 states in box");

  auto compact_of = [&](const vec& y) -> int {
    std::vector<int> c(d);
    for (int i = 0; i < d; ++i) {
      const double yi = std::llround(y[i]);
      if (yi < lbox.lo[i] || yi > lbox.hi[i]) return -1;
      c[i] = static_cast<int>(yi);
    }
    return compact[pack(c)];
  };

  // assemble Q^T and the jump graph
  using trip = Eigen::Triplet<double>;
  std::vector<trip> trips;
  trips.reserve(static_cast<std::size_t>(N) * (chain.jumps().size() + 1));
  std::vector<std::vector<int>> fwd(N);
  std::vector<std::vector<int>> bwd(N);
  std::vector<std::uint8_t> boundary(N, 0);
  for (int s = 0; s < N; ++s) {
    const auto rates = chain.rates(n, states[s]);
    double diag = 0.0;
    for (std::size_t k = 0; k < rates.size(); ++k) {
      if (rates[k] <= 0.0) continue;
      const vec y = states[s] + chain.jumps()[k].direction;
      const int t = chain.in_domain(n, y) ? compact_of(y) : -1;
      if (t < 0) {
        if (chain.in_domain(n, y)) boundary[s] = 1;  // censored by the box
        continue;
      }
      trips.emplace_back(t, s, rates[k]);
      diag += rates[k];
      fwd[s].push_back(t);
      bwd[t].push_back(s);
    }
    trips.emplace_back(s, s, -diag);
  }

  // irreducibility on the truncated set
  auto bfs = [&](const std::vector<std::vector<int>>& adj) {
    std::vector<std::uint8_t> seen(N, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int cnt = 1;
    while (!q.empty()) {
      const int s = q.front();
      q.pop();
      for (int t : adj[s])
        if (!seen[t]) {
          seen[t] = 1;
          ++cnt;
          q.push(t);
        }
    }
    return std::pair(cnt, seen);
  };
  const auto [fcnt, fseen] = bfs(fwd);
  const auto [bcnt, bseen] = bfs(bwd);
  if (fcnt != N || bcnt != N) {
    std::ostringstream os;
    os << "chain_stationary_general: truncated chain reducible ("
       << N - std::min(fcnt, bcnt) << " of " << N << " states unreachable";
    for (int s = 0; s < N && os.str().size() < 400; ++s)
      if (!fseen[s] || !bseen[s]) os << "; e.g. state [" << states[s].transpose() << "]";
    os << ")";
    throw model_error(os.str());
  }

  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(trips.begin(), trips.end());

  // replace the balance equation of the anchor state with normalization
  int anchor = 0;
  if (center) {
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < N; ++s) {
      const double r = (states[s] - *center).norm();
      if (r < best) {
        best = r;
        anchor = s;
      }
    }
  }
  Eigen::SparseMatrix<double> B = A;
  for (int col = 0; col < N; ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(B, col); it; ++it)
      if (it.row() == anchor) it.valueRef() = 1.0;
  // ensure every column carries the normalization row
  {
    std::vector<trip> extra;
    for (int col = 0; col < N; ++col) {
      bool has = false;
      for (Eigen::SparseMatrix<double>::InnerIterator it(B, col); it; ++it)
        if (it.row() == anchor) has = true;
      if (!has) extra.emplace_back(anchor, col, 1.0);
    }
    if (!extra.empty()) {
      Eigen::SparseMatrix<double> E(N, N);
      E.setFromTriplets(extra.begin(), extra.end());
      B += E;
    }
  }
  vec rhs = vec::Zero(N);
  rhs[anchor] = 1.0;

  vec v;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(B);
  lu.factorize(B);
  if (lu.info() == Eigen::Success) {
    v = lu.solve(rhs);
  } else {
    // uniformized power iteration fallback
    double lambda = 0.0;
    for (int s = 0; s < N; ++s) lambda = std::max(lambda, -A.coeff(s, s));
    lambda *= 1.01;
    v = vec::Constant(N, 1.0 / N);
    for (int it = 0; it < 2'000'000; ++it) {
      vec w = v + (A * v) / lambda;
      w = w.cwiseMax(0.0);
      w /= w.sum();
      const double diff = (w - v).lpNorm<1>();
      v = w;
      if (diff < 1e-15) break;
    }
  }

  const double vsum = v.sum();
  if (!(vsum > 0.0)) throw solver_error("chain_stationary_general: degenerate solution");
  v /= vsum;
  if (v.minCoeff() < -1e-9)
    throw solver_error("chain_stationary_general: negative stationary mass beyond tolerance");
  v = v.cwiseMax(0.0);
  v /= v.sum();

  discrete_stationary out;
  out.support.resize(N);
  out.probs.resize(N);
  out.truncation_boundary.assign(N, 0);
  double layer_mass = 0.0;
  for (int s = 0; s < N; ++s) {
    out.support[s] = center ? vec(((states[s] - *center) / sqrt_n).eval()) : states[s];
    out.probs[s] = v[s];
    out.truncation_boundary[s] = boundary[s];
    if (boundary[s]) layer_mass += v[s];
  }
  out.truncation_mass_bound = layer_mass;
  return out;
}

inline discrete_stationary chain_stationary_general(const scaled_chain& sc,
                                                    const lattice_box& lbox) {
  const vec c = sc.center();
  return chain_stationary_general(sc.base(), sc.n(), lbox, &c, sc.sqrt_n());
}

// ---------------------------------------------------------------------------
// 1-d DM stationary density (closed form by integrating factor).
// ---------------------------------------------------------------------------

/// Normalized 1-d stationary density p(x) proportional to
/// exp((2/abar(0)) int_0^x Fhat) on a refined uniform grid; evaluable at
/// arbitrary points inside the box.
class stationary_density_1d {
 public:
  stationary_density_1d(const diffusion_model& dm, const grid1d& grid)
      : drift_(dm.drift_hat), two_over_a_(2.0 / dm.avar0_scalar()), grid_(grid) {
    const int n = grid.n_points;
    phi_.resize(n);
    phi_[0] = 0.0;
    for (int i = 1; i < n; ++i)
      phi_[i] = phi_[i - 1] + gauss3([this](double y) { return two_over_a_ * drift1(y); },
                                     grid_[i - 1], grid_[i]);
    // shift so that phi(0 or nearest node) = 0 happened implicitly at the
    // left edge; renormalize against the max to avoid overflow
    phi_max_ = *std::max_element(phi_.begin(), phi_.end());
    std::vector<double> pu(n);
    for (int i = 0; i < n; ++i) pu[i] = std::exp(phi_[i] - phi_max_);
    const int odd = (n % 2 == 1) ? n : n - 1;
    std::vector<double> head(pu.begin(), pu.begin() + odd);
    double z = simpson(head, grid_.step);
    if (n % 2 == 0) z += 0.5 * grid_.step * (pu[n - 2] + pu[n - 1]);
    z_ = z;
    density_.resize(n);
    for (int i = 0; i < n; ++i) density_[i] = pu[i] / z_;
  }

  const grid1d& grid() const { return grid_; }
  const std::vector<double>& values() const { return density_; }

  double density_at(double x) const {
    const int i = std::min(std::max(static_cast<int>(std::floor((x - grid_.lo) / grid_.step)), 0),
                           grid_.n_points - 1);
    const double phi = phi_[i] + gauss3([this](double y) { return two_over_a_ * drift1(y); },
                                        grid_[i], x);
    return std::exp(phi - phi_max_) / z_;
  }

  /// Composite-Simpson quadrature of g(x) p(x) over the grid.
  double integrate(const std::function<double(double)>& g) const {
    const int n = grid_.n_points;
    std::vector<double> fv(n);
    for (int i = 0; i < n; ++i) fv[i] = g(grid_[i]) * density_[i];
    const int odd = (n % 2 == 1) ? n : n - 1;
    std::vector<double> head(fv.begin(), fv.begin() + odd);
    double s = simpson(head, grid_.step);
    if (n % 2 == 0) s += 0.5 * grid_.step * (fv[n - 2] + fv[n - 1]);
    return s;
  }

  /// Laplace-type estimate of the mass beyond each edge.
  double tail_mass_estimate() const {
    double tail = 0.0;
    for (const double edge : {grid_.lo, grid_.hi()}) {
      const double f = drift1(edge);
      if ((edge == grid_.hi() && f < 0.0) || (edge == grid_.lo && f > 0.0))
        tail += density_at(edge) / (two_over_a_ * std::fabs(f));
      else
        tail = std::numeric_limits<double>::infinity();
    }
    return tail;
  }

  double edge_density_ratio() const {
    const double pmax = *std::max_element(density_.begin(), density_.end());
    return std::max(density_.front(), density_.back()) / pmax;
  }

 private:
  double drift1(double x) const { return drift_(scalar_vec(x))[0]; }

  std::function<vec(const vec&)> drift_;
  double two_over_a_;
  grid1d grid_;
  std::vector<double> phi_;
  double phi_max_ = 0.0;
  double z_ = 0.0;
  std::vector<double> density_;
};

struct continuous_stationary_1d {
  grid1d grid;                      // reporting grid
  std::vector<double> density;      // at reporting nodes
  std::string quadrature_rule = "composite-simpson(refined x2)";
  double truncation_mass_bound = 0.0;
  std::shared_ptr<stationary_density_1d> solver;  // refined representation
};

/// Stationary density of a scalar DM on a grid.  The density is computed on
/// a twice-refined grid; a box whose edges still carry relative density above
/// `edge_tol` is rejected as too small.
inline continuous_stationary_1d dm_stationary_1d(const diffusion_model& dm, const grid1d& grid,
                                                 double edge_tol = 1e-8) {
  if (dm.dimension != 1) throw model_error("dm_stationary_1d: scalar models only");
  grid1d refined(grid.lo, grid.hi(), 2 * (grid.n_points - 1) + 1);
  auto solver = std::make_shared<stationary_density_1d>(dm, refined);
  if (solver->edge_density_ratio() > edge_tol) {
    std::ostringstream os;
    os << "dm_stationary_1d: density mass still present at the box edge (ratio "
       << solver->edge_density_ratio() << "); enlarge the box";
    throw solver_error(os.str());
  }
  continuous_stationary_1d out;
  out.grid = grid;
  out.density.resize(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i) out.density[i] = solver->values()[2 * i];
  out.truncation_mass_bound = solver->tail_mass_estimate();
  out.solver = std::move(solver);
  return out;
}

inline moment_result moment(const continuous_stationary_1d& dist,
                            const std::function<double(const vec&)>& f) {
  moment_result out;
  out.value = dist.solver->integrate([&](double x) {
    const double v = f(scalar_vec(x));
    if (std::isnan(v)) throw solver_error("moment: NaN from test function");
    return v;
  });
  const double fa = std::fabs(f(scalar_vec(dist.grid.lo)));
  const double fb = std::fabs(f(scalar_vec(dist.grid.hi())));
  out.truncation_bound = dist.truncation_mass_bound * std::max(fa, fb);
  return out;
}

// ---------------------------------------------------------------------------
// 2-d DM stationary density by finite-volume Fokker-Planck.
// ---------------------------------------------------------------------------

struct continuous_stationary_2d {
  grid1d gx, gy;
  mat density;  // density(i, j) at (gx[i], gy[j])
  std::string quadrature_rule = "trapezoid";
  double truncation_mass_bound = 0.0;  // boundary-ring mass
  double refinement_l1 = 0.0;          // two-grid Richardson difference
};

namespace detail {

inline mat fokker_planck_solve_2d(const diffusion_model& dm, const grid1d& gx,
                                  const grid1d& gy) {
  const int nx = gx.n_points, ny = gy.n_points;
  const double hx = gx.step, hy = gy.step;
  const double a11 = dm.avar0(0, 0), a22 = dm.avar0(1, 1), a12 = dm.avar0(0, 1);
  const int N = nx * ny;
  auto idx = [ny](int i, int j) { return i * ny + j; };

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(N) * 12);
  auto add = [&](int row, int col, double val) { trips.emplace_back(row, col, val); };

  auto drift_at = [&](double x, double y) {
    vec p(2);
    p << x, y;
    return dm.drift_hat(p);
  };

  // x-faces between (i, j) and (i+1, j)
  for (int i = 0; i + 1 < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const double w = (j == 0 || j == ny - 1) ? 0.5 * hy : hy;
      const double xf = 0.5 * (gx[i] + gx[i + 1]);
      const double F = drift_at(xf, gy[j])[0];
      std::vector<std::pair<int, double>> flux;  // J = sum coeff * p(node)
      const double pe = std::fabs(F) * hx / (0.5 * a11);
      if (pe <= 2.0) {
        flux.push_back({idx(i, j), 0.5 * F});
        flux.push_back({idx(i + 1, j), 0.5 * F});
      } else if (F > 0.0) {
        flux.push_back({idx(i, j), F});
      } else {
        flux.push_back({idx(i + 1, j), F});
      }
      flux.push_back({idx(i, j), 0.5 * a11 / hx});
      flux.push_back({idx(i + 1, j), -0.5 * a11 / hx});
      if (a12 != 0.0) {
        for (int c : {i, i + 1}) {
          if (j > 0 && j + 1 < ny) {
            flux.push_back({idx(c, j + 1), -0.5 * a12 / (4.0 * hy)});
            flux.push_back({idx(c, j - 1), 0.5 * a12 / (4.0 * hy)});
          } else if (j == 0) {
            flux.push_back({idx(c, 1), -0.5 * a12 / (2.0 * hy)});
            flux.push_back({idx(c, 0), 0.5 * a12 / (2.0 * hy)});
          } else {
            flux.push_back({idx(c, ny - 1), -0.5 * a12 / (2.0 * hy)});
            flux.push_back({idx(c, ny - 2), 0.5 * a12 / (2.0 * hy)});
          }
        }
      }
      for (const auto& [node, coeff] : flux) {
        add(idx(i, j), node, coeff * w);
        add(idx(i + 1, j), node, -coeff * w);
      }
    }
  }
  // y-faces between (i, j) and (i, j+1)
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j + 1 < ny; ++j) {
      const double w = (i == 0 || i == nx - 1) ? 0.5 * hx : hx;
      const double yf = 0.5 * (gy[j] + gy[j + 1]);
      const double F = drift_at(gx[i], yf)[1];
      std::vector<std::pair<int, double>> flux;
      const double pe = std::fabs(F) * hy / (0.5 * a22);
      if (pe <= 2.0) {
        flux.push_back({idx(i, j), 0.5 * F});
        flux.push_back({idx(i, j + 1), 0.5 * F});
      } else if (F > 0.0) {
        flux.push_back({idx(i, j), F});
      } else {
        flux.push_back({idx(i, j + 1), F});
      }
      flux.push_back({idx(i, j), 0.5 * a22 / hy});
      flux.push_back({idx(i, j + 1), -0.5 * a22 / hy});
      if (a12 != 0.0) {
        for (int c : {j, j + 1}) {
          if (i > 0 && i + 1 < nx) {
            flux.push_back({idx(i + 1, c), -0.5 * a12 / (4.0 * hx)});
            flux.push_back({idx(i - 1, c), 0.5 * a12 / (4.0 * hx)});
          } else if (i == 0) {
            flux.push_back({idx(1, c), -0.5 * a12 / (2.0 * hx)});
            flux.push_back({idx(0, c), 0.5 * a12 / (2.0 * hx)});
          } else {
            flux.push_back({idx(nx - 1, c), -0.5 * a12 / (2.0 * hx)});
            flux.push_back({idx(nx - 2, c), 0.5 * a12 / (2.0 * hx)});
          }
        }
      }
      for (const auto& [node, coeff] : flux) {
        add(idx(i, j), node, coeff * w);
        add(idx(i, j + 1), node, -coeff * w);
      }
    }
  }

  // pin the anchor node (nearest the origin) and solve
  const int ai = gx.nearest_index(0.0), aj = gy.nearest_index(0.0);
  const int anchor = idx(ai, aj);
  std::vector<Eigen::Triplet<double>> kept;
  kept.reserve(trips.size());
  for (const auto& t : trips)
    if (t.row() != anchor) kept.push_back(t);
  kept.emplace_back(anchor, anchor, 1.0);

  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(kept.begin(), kept.end());
  A.makeCompressed();
  vec rhs = vec::Zero(N);
  rhs[anchor] = 1.0;

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw solver_error("dm_stationary_fd: sparse factorization failed");
  vec p = lu.solve(rhs);

  const double pmax = p.maxCoeff();
  if (!(pmax > 0.0)) throw solver_error("dm_stationary_fd: degenerate solution");
  if (p.minCoeff() < -1e-8 * pmax)
    throw solver_error("dm_stationary_fd: negative density cells beyond tolerance");
  p = p.cwiseMax(0.0);

  mat out(nx, ny);
  double mass = 0.0;
  for (int i = 0; i < nx; ++i) {
    const double wx = (i == 0 || i == nx - 1) ? 0.5 * hx : hx;
    for (int j = 0; j < ny; ++j) {
      const double wy = (j == 0 || j == ny - 1) ? 0.5 * hy : hy;
      out(i, j) = p[idx(i, j)];
      mass += out(i, j) * wx * wy;
    }
  }
  out /= mass;
  return out;
}

}  // namespace detail

/// Stationary Fokker-Planck solve for a 2-d DM: hybrid central/upwind finite
/// volumes with no-flux boundaries, solved on the given grid and on a
/// once-refined grid; the reported density is the Richardson combination and
/// `refinement_l1` the two-grid difference.
inline continuous_stationary_2d dm_stationary_fd(const diffusion_model& dm, const grid1d& gx,
                                                 const grid1d& gy) {
  if (dm.dimension != 2) throw model_error("dm_stationary_fd: 2-d models only");
  const mat coarse = detail::fokker_planck_solve_2d(dm, gx, gy);
  grid1d fx(gx.lo, gx.hi(), 2 * (gx.n_points - 1) + 1);
  grid1d fy(gy.lo, gy.hi(), 2 * (gy.n_points - 1) + 1);
  const mat fine = detail::fokker_planck_solve_2d(dm, fx, fy);

  const int nx = gx.n_points, ny = gy.n_points;
  mat fine_on_coarse(nx, ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) fine_on_coarse(i, j) = fine(2 * i, 2 * j);

  continuous_stationary_2d out;
  out.gx = gx;
  out.gy = gy;
  out.density = ((4.0 * fine_on_coarse - coarse) / 3.0).cwiseMax(0.0);

  double mass = 0.0, l1 = 0.0, ring = 0.0;
  for (int i = 0; i < nx; ++i) {
    const double wx = (i == 0 || i == nx - 1) ? 0.5 * gx.step : gx.step;
    for (int j = 0; j < ny; ++j) {
      const double wy = (j == 0 || j == ny - 1) ? 0.5 * gy.step : gy.step;
      mass += out.density(i, j) * wx * wy;
      l1 += std::fabs(fine_on_coarse(i, j) - coarse(i, j)) * wx * wy;
      if (i == 0 || i == nx - 1 || j == 0 || j == ny - 1)
        ring += out.density(i, j) * wx * wy;
    }
  }
  out.density /= mass;
  out.refinement_l1 = l1;
  out.truncation_mass_bound = ring / mass;
  return out;
}

inline moment_result moment(const continuous_stationary_2d& dist,
                            const std::function<double(const vec&)>& f) {
  moment_result out;
  const int nx = dist.gx.n_points, ny = dist.gy.n_points;
  double boundary_absmax = 0.0;
  for (int i = 0; i < nx; ++i) {
    const double wx = (i == 0 || i == nx - 1) ? 0.5 * dist.gx.step : dist.gx.step;
    for (int j = 0; j < ny; ++j) {
      const double wy = (j == 0 || j == ny - 1) ? 0.5 * dist.gy.step : dist.gy.step;
      vec x(2);
      x << dist.gx[i], dist.gy[j];
      const double v = f(x);
      if (std::isnan(v)) throw solver_error("moment: NaN from test function");
      out.value += v * dist.density(i, j) * wx * wy;
      if (i == 0 || i == nx - 1 || j == 0 || j == ny - 1)
        boundary_absmax = std::max(boundary_absmax, std::fabs(v));
    }
  }
  out.truncation_bound = dist.truncation_mass_bound * boundary_absmax;
  return out;
}

}  // namespace qlab
