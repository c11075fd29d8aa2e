#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlab {

using vec = Eigen::VectorXd;
using mat = Eigen::MatrixXd;

/// Malformed model input: negative rates, bad parameters, unparseable spec.
struct model_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical procedure failed: divergence, non-convergence, singularity.
struct solver_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline vec make_vec(std::initializer_list<double> xs) {
  vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

inline vec scalar_vec(double x) {
  vec v(1);
  v[0] = x;
  return v;
}

inline double pos_part(double x) { return x > 0.0 ? x : 0.0; }
inline double neg_part(double x) { return x < 0.0 ? -x : 0.0; }

/// Axis-aligned box, used for sampling and truncation domains.
struct box {
  vec lo;
  vec hi;

  box() = default;
  box(vec lo_, vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw model_error("box: lo/hi dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw model_error("box: empty in coordinate " + std::to_string(i));
  }
  static box symmetric(int d, double radius) {
    return box(vec::Constant(d, -radius), vec::Constant(d, radius));
  }
  int dimension() const { return static_cast<int>(lo.size()); }
  bool degenerate() const {
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (hi[i] - lo[i] <= 0.0) return true;
    return false;
  }
};

/// Uniform 1-d grid.  `anchor` (when finite) is shifted onto a node so that
/// piecewise drifts keep their kinks on the mesh.
struct grid1d {
  double lo = 0.0;
  double step = 0.0;
  int n_points = 0;

  grid1d() = default;
  grid1d(double lo_, double hi_, int n_points_) : lo(lo_), n_points(n_points_) {
    if (n_points_ < 2 || !(hi_ > lo_)) throw model_error("grid1d: need hi > lo and >= 2 points");
    step = (hi_ - lo_) / (n_points_ - 1);
  }
  static grid1d with_anchor(double lo_, double hi_, double step_, double anchor) {
    if (!(step_ > 0.0) || !(hi_ > lo_)) throw model_error("grid1d: bad step or bounds");
    // place nodes at anchor + k*step, covering [lo, hi]
    double start = anchor - std::ceil((anchor - lo_) / step_) * step_;
    int n = static_cast<int>(std::floor((hi_ - start) / step_ + 1e-9)) + 1;
    grid1d g;
    g.lo = start;
    g.step = step_;
    g.n_points = n;
    return g;
  }
  double operator[](int i) const { return lo + step * i; }
  double hi() const { return (*this)[n_points - 1]; }
  std::vector<double> nodes() const {
    std::vector<double> xs(n_points);
    for (int i = 0; i < n_points; ++i) xs[i] = (*this)[i];
    return xs;
  }
  int nearest_index(double x) const {
    int i = static_cast<int>(std::lround((x - lo) / step));
    return std::min(std::max(i, 0), n_points - 1);
  }
};

/// Composite Simpson weights demand an odd node count; callers round up.
inline int odd_count(int n) { return n % 2 == 0 ? n + 1 : n; }

/// Composite Simpson on uniformly spaced samples (odd count).
inline double simpson(const std::vector<double>& f, double step) {
  const int n = static_cast<int>(f.size());
  if (n < 3 || n % 2 == 0) throw solver_error("simpson: need odd sample count >= 3");
  double s = f.front() + f.back();
  for (int i = 1; i < n - 1; i += 2) s += 4.0 * f[i];
  for (int i = 2; i < n - 1; i += 2) s += 2.0 * f[i];
  return s * step / 3.0;
}

/// 3-point Gauss-Legendre on [a, b].
template <class F>
double gauss3(F&& f, double a, double b) {
  static const double r = std::sqrt(0.6);
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  return h * ((5.0 * f(c - r * h) + 8.0 * f(c) + 5.0 * f(c + r * h)) / 9.0);
}

inline bool all_finite(const vec& v) { return v.allFinite(); }

inline double sqr(double x) { return x * x; }

}  // namespace qlab
