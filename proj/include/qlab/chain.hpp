#pragma once

#include "qlab/common.hpp"
#include "qlab/rng.hpp"

#include <algorithm>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qlab {

/// One transition type: a fixed integer jump vector and its state-dependent
/// rate.  Rates are callables of (scale n, state x) and must vanish whenever
/// the target state x + direction leaves the state domain.
struct jump {
  vec direction;                                      // in Z^d
  std::function<double(double, const vec&)> rate;     // (n, x) -> rate
  std::string name;
};

/// Scale-indexed CTMC family: d, a finite jump set fixed across n, per-jump
/// rate functions, and the lattice domain E^n.
class chain_family {
 public:
  chain_family(int dimension, std::vector<jump> jumps,
               std::function<bool(double, const vec&)> domain)
      : dimension_(dimension), jumps_(std::move(jumps)), domain_(std::move(domain)) {
    if (dimension_ < 1) throw model_error("chain_family: dimension must be positive");
    if (jumps_.empty()) throw model_error("chain_family: empty jump set");
    for (const auto& j : jumps_) {
      if (j.direction.size() != dimension_)
        throw model_error("chain_family: jump '" + j.name + "' has wrong dimension");
      for (Eigen::Index i = 0; i < j.direction.size(); ++i)
        if (j.direction[i] != std::floor(j.direction[i]))
          throw model_error("chain_family: jump '" + j.name + "' is not an integer vector");
      max_jump_norm_ = std::max(max_jump_norm_, j.direction.norm());
    }
  }

  int dimension() const { return dimension_; }
  const std::vector<jump>& jumps() const { return jumps_; }
  /// The uniform jump bound: fixed at construction, independent of n.
  double max_jump_norm() const { return max_jump_norm_; }
  bool in_domain(double n, const vec& x) const { return !domain_ || domain_(n, x); }

  /// Per-jump rates at (n, x).  A negative rate at a domain state is a
  /// model-spec error; off-domain the formulas are the real-argument
  /// extensions of F^n and a^n and may go negative.
  std::vector<double> rates(double n, const vec& x) const {
    std::vector<double> r(jumps_.size());
    const bool on_domain = in_domain(n, x);
    for (std::size_t k = 0; k < jumps_.size(); ++k) {
      r[k] = jumps_[k].rate(n, x);
      if (std::isnan(r[k]) || (on_domain && r[k] < 0.0)) {
        std::ostringstream os;
        os << "negative or non-finite rate " << r[k] << " for jump '" << jumps_[k].name
           << "' (direction [" << jumps_[k].direction.transpose() << "]) at x = ["
           << x.transpose() << "], n = " << n;
        throw model_error(os.str());
      }
    }
    return r;
  }

  bool is_birth_death() const {
    if (dimension_ != 1) return false;
    for (const auto& j : jumps_)
      if (j.direction[0] != 1.0 && j.direction[0] != -1.0) return false;
    return true;
  }

 private:
  int dimension_;
  std::vector<jump> jumps_;
  std::function<bool(double, const vec&)> domain_;
  double max_jump_norm_ = 0.0;
};

/// Drift field F^n(x) = sum_l l * beta_l^n(x).
inline vec derive_drift(const chain_family& chain, double n, const vec& x) {
  const auto rates = chain.rates(n, x);
  vec f = vec::Zero(chain.dimension());
  for (std::size_t k = 0; k < rates.size(); ++k) f += chain.jumps()[k].direction * rates[k];
  return f;
}

/// Quadratic-variation field a^n(x) = sum_l l l' beta_l^n(x); symmetric PSD.
inline mat derive_avar(const chain_family& chain, double n, const vec& x) {
  const auto rates = chain.rates(n, x);
  mat a = mat::Zero(chain.dimension(), chain.dimension());
  for (std::size_t k = 0; k < rates.size(); ++k) {
    const vec& l = chain.jumps()[k].direction;
    a += rates[k] * (l * l.transpose());
  }
  return a;
}

/// Centered/scaled view of one chain at scale n: state y corresponds to the
/// unscaled state center + sqrt(n) y.
class scaled_chain {
 public:
  scaled_chain(chain_family base, double n, vec center, double center_tol_per_n = 1e-10)
      : base_(std::make_shared<chain_family>(std::move(base))),
        n_(n),
        sqrt_n_(std::sqrt(n)),
        center_(std::move(center)) {
    if (!(n_ > 0)) throw model_error("scaled_chain: scale must be positive");
    const double residual = derive_drift(*base_, n_, center_).norm();
    if (!(residual <= center_tol_per_n * n_)) {
      std::ostringstream os;
      os << "scaled_chain: center is not a drift zero, |F^n(center)| = " << residual
         << " exceeds " << center_tol_per_n * n_;
      throw model_error(os.str());
    }
    avar0_ = avar_bar(vec::Zero(base_->dimension()));
  }

  const chain_family& base() const { return *base_; }
  double n() const { return n_; }
  double sqrt_n() const { return sqrt_n_; }
  const vec& center() const { return center_; }
  int dimension() const { return base_->dimension(); }

  vec unscale(const vec& y) const { return center_ + sqrt_n_ * y; }
  vec scale(const vec& x) const { return (x - center_) / sqrt_n_; }

  /// Fhat^n(y) = F^n(center + sqrt(n) y) / sqrt(n); same summation order as
  /// derive_drift so the two routes agree bit-for-bit.
  vec drift_hat(const vec& y) const { return derive_drift(*base_, n_, unscale(y)) / sqrt_n_; }

  /// abar^n(y) = a^n(center + sqrt(n) y) / n.
  mat avar_bar(const vec& y) const { return derive_avar(*base_, n_, unscale(y)) / n_; }

  const mat& avar0() const { return avar0_; }

 private:
  std::shared_ptr<chain_family> base_;
  double n_;
  double sqrt_n_;
  vec center_;
  mat avar0_;
};

inline scaled_chain scale_chain(const chain_family& chain, double n, const vec& center,
                                double center_tol_per_n = 1e-10) {
  return scaled_chain(chain, n, center, center_tol_per_n);
}

struct condition_verdict {
  bool pass = false;
  double estimate = 0.0;
  std::string note;
};

/// Sampled evidence for the structural assumptions: uniform Lipschitz drift,
/// linear growth of abar around 0, positive definite abar^n(0), bounded jumps.
struct assumption_report {
  double lipschitz_K_F = 0.0;
  vec worst_pair_x, worst_pair_y;   // argmax of the drift difference quotient
  double avar_growth_K_a = 0.0;
  double avar0_min_eig = 0.0;
  double jump_bound = 0.0;
  std::vector<double> n_grid;
  std::vector<double> K_F_per_n;
  std::vector<double> K_a_per_n;
  box sampled_box;
  int samples = 0;
  std::uint64_t seed = 0;
  condition_verdict drift_lipschitz;   // Lipschitz estimate stable across n
  condition_verdict avar_linear_growth;
  condition_verdict avar0_positive_definite;
  condition_verdict jumps_bounded;
  bool pass() const {
    return drift_lipschitz.pass && avar_linear_growth.pass &&
           avar0_positive_definite.pass && jumps_bounded.pass;
  }
};

/// Samples difference quotients of drift_hat and avar_bar over `sample_box`
/// across the scaled family; the verdict fails when an estimate keeps growing
/// with n faster than `growth_factor` between consecutive scales.
inline assumption_report validate_assumptions(const std::vector<scaled_chain>& family,
                                              const box& sample_box, int samples,
                                              std::uint64_t seed,
                                              double growth_factor = 1.05) {
  if (family.empty()) throw model_error("validate_assumptions: empty family");
  if (sample_box.degenerate()) throw model_error("validate_assumptions: degenerate sample box");
  if (samples < 2) throw model_error("validate_assumptions: need at least 2 samples");
  const int d = family.front().dimension();
  if (sample_box.dimension() != d)
    throw model_error("validate_assumptions: box dimension mismatch");

  assumption_report rep;
  rep.sampled_box = sample_box;
  rep.samples = samples;
  rep.seed = seed;
  rep.jump_bound = family.front().base().max_jump_norm();

  counter_rng rng(seed, /*stream=*/0);
  std::vector<vec> points(samples);
  for (int s = 0; s < samples; ++s) {
    vec p(d);
    for (int i = 0; i < d; ++i)
      p[i] = sample_box.lo[i] + (sample_box.hi[i] - sample_box.lo[i]) * rng.next_uniform();
    points[s] = p;
  }

  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& sc : family) {
    rep.n_grid.push_back(sc.n());
    double kf = 0.0, ka = 0.0;
    std::vector<vec> drifts(samples);
    for (int s = 0; s < samples; ++s) drifts[s] = sc.drift_hat(points[s]);
    const mat a0 = sc.avar0();
    for (int s = 0; s < samples; ++s) {
      for (int t = s + 1; t < samples; ++t) {
        const double dx = (points[s] - points[t]).norm();
        if (dx < 1e-12) continue;
        kf = std::max(kf, (drifts[s] - drifts[t]).norm() / dx);
      }
      const double r = points[s].norm();
      if (r > 1e-12) {
        const mat da = sc.avar_bar(points[s]) - a0;
        ka = std::max(ka, sc.sqrt_n() * da.norm() / r);
      }
    }
    rep.K_F_per_n.push_back(kf);
    rep.K_a_per_n.push_back(ka);
    Eigen::SelfAdjointEigenSolver<mat> es(a0);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }
  rep.lipschitz_K_F = *std::max_element(rep.K_F_per_n.begin(), rep.K_F_per_n.end());
  rep.avar_growth_K_a = *std::max_element(rep.K_a_per_n.begin(), rep.K_a_per_n.end());
  rep.avar0_min_eig = min_eig;

  // record the worst drift pair at the largest scale
  {
    const auto& sc = family.back();
    double worst = -1.0;
    for (int s = 0; s < samples; ++s)
      for (int t = s + 1; t < samples; ++t) {
        const double dx = (points[s] - points[t]).norm();
        if (dx < 1e-12) continue;
        const double q = (sc.drift_hat(points[s]) - sc.drift_hat(points[t])).norm() / dx;
        if (q > worst) {
          worst = q;
          rep.worst_pair_x = points[s];
          rep.worst_pair_y = points[t];
        }
      }
  }

  auto stable = [&](const std::vector<double>& per_n) {
    for (std::size_t i = 1; i < per_n.size(); ++i) {
      const double prev = std::max(per_n[i - 1], 1e-12);
      if (per_n[i] > growth_factor * prev) return false;
    }
    return true;
  };
  rep.drift_lipschitz = {stable(rep.K_F_per_n), rep.lipschitz_K_F,
                         stable(rep.K_F_per_n) ? "estimate stable across n grid"
                                               : "estimate grows with n"};
  rep.avar_linear_growth = {stable(rep.K_a_per_n), rep.avar_growth_K_a,
                            stable(rep.K_a_per_n) ? "estimate stable across n grid"
                                                  : "estimate grows with n"};
  rep.avar0_positive_definite = {min_eig > 0.0, min_eig,
                                 min_eig > 0.0 ? "min eigenvalue positive"
                                               : "abar^n(0) not positive definite"};
  rep.jumps_bounded = {true, rep.jump_bound, "jump set fixed at construction"};
  return rep;
}

}  // namespace qlab
