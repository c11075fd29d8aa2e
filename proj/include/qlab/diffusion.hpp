#pragma once

#include "qlab/chain.hpp"
#include "qlab/common.hpp"

#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace qlab {

/// Symmetric PSD square root via eigendecomposition; rejects asymmetric or
/// non-positive-definite input.
inline mat sqrt_psd(const mat& m, double asym_tol = 1e-10) {
  const double scale = std::max(m.norm(), 1.0);
  if ((m - m.transpose()).norm() > asym_tol * scale)
    throw model_error("sqrt_psd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<mat> es(m);
  const vec evals = es.eigenvalues();
  if (evals.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "sqrt_psd: nonpositive eigenvalue " << evals.minCoeff();
    throw model_error(os.str());
  }
  const mat L = es.eigenvectors() * evals.cwiseSqrt().asDiagonal() *
                es.eigenvectors().transpose();
  const double err = (L * L.transpose() - m).norm() / m.norm();
  if (err > 1e-12) {
    std::ostringstream os;
    os << "sqrt_psd: L L' reproduces input only to relative error " << err;
    throw solver_error(os.str());
  }
  return L;
}

/// DM with the diffusion coefficient frozen at abar^n(0): drift Fhat^n plus
/// additive noise sqrt(abar^n(0)) dB.
struct diffusion_model {
  std::function<vec(const vec&)> drift_hat;
  mat avar0;
  mat sqrt_avar0;
  double scale = 1.0;  // n
  int dimension = 1;
  /// Locations (1-d models) where the drift has kinks; solvers align grids.
  std::vector<double> drift_kinks;

  double avar0_scalar() const { return avar0(0, 0); }
  double drift1(double x) const { return drift_hat(scalar_vec(x))[0]; }
};

inline diffusion_model build_dm(const scaled_chain& sc) {
  diffusion_model dm;
  dm.dimension = sc.dimension();
  dm.scale = sc.n();
  dm.avar0 = sc.avar0();
  Eigen::SelfAdjointEigenSolver<mat> es(dm.avar0);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "build_dm: abar^n(0) not positive definite, min eigenvalue "
       << es.eigenvalues().minCoeff();
    throw model_error(os.str());
  }
  dm.sqrt_avar0 = sqrt_psd(dm.avar0);
  dm.drift_hat = [sc](const vec& y) { return sc.drift_hat(y); };
  return dm;
}

inline diffusion_model make_dm(std::function<vec(const vec&)> drift, mat avar0,
                               double scale = 1.0) {
  diffusion_model dm;
  dm.dimension = static_cast<int>(avar0.rows());
  dm.scale = scale;
  dm.avar0 = std::move(avar0);
  dm.sqrt_avar0 = sqrt_psd(dm.avar0);
  dm.drift_hat = std::move(drift);
  return dm;
}

/// Twice-differentiable test function; analytic derivatives when available,
/// otherwise central differences with step 1e-5 (1 + |x|) and a 9-point
/// stencil for 2-d Hessians.
struct test_function {
  std::function<double(const vec&)> value;
  std::function<vec(const vec&)> gradient;   // may be empty
  std::function<mat(const vec&)> hessian;    // may be empty

  vec grad_at(const vec& x) const {
    if (gradient) return gradient(x);
    const int d = static_cast<int>(x.size());
    vec g(d);
    for (int i = 0; i < d; ++i) {
      const double h = 1e-5 * (1.0 + std::fabs(x[i]));
      vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      g[i] = (value(xp) - value(xm)) / (2.0 * h);
    }
    return g;
  }

  mat hess_at(const vec& x) const {
    if (hessian) return hessian(x);
    const int d = static_cast<int>(x.size());
    mat H(d, d);
    for (int i = 0; i < d; ++i) {
      const double hi = 1e-5 * (1.0 + std::fabs(x[i]));
      vec xp = x, xm = x;
      xp[i] += hi;
      xm[i] -= hi;
      H(i, i) = (value(xp) - 2.0 * value(x) + value(xm)) / (hi * hi);
      for (int j = i + 1; j < d; ++j) {
        const double hj = 1e-5 * (1.0 + std::fabs(x[j]));
        vec xpp = x, xpm = x, xmp = x, xmm = x;
        xpp[i] += hi; xpp[j] += hj;
        xpm[i] += hi; xpm[j] -= hj;
        xmp[i] -= hi; xmp[j] += hj;
        xmm[i] -= hi; xmm[j] -= hj;
        H(i, j) = (value(xpp) - value(xpm) - value(xmp) + value(xmm)) / (4.0 * hi * hj);
        H(j, i) = H(i, j);
      }
    }
    return H;
  }
};

/// A^n u(x) = sum_i Fhat_i(x) d_i u(x) + (1/2) sum_ij abar_ij(0) d_ij u(x).
inline double apply_generator(const diffusion_model& dm, const test_function& u,
                              const vec& x) {
  const vec g = u.grad_at(x);
  const mat H = u.hess_at(x);
  if (!all_finite(g) || !H.allFinite())
    throw solver_error("apply_generator: non-finite derivative");
  return dm.drift_hat(x).dot(g) + 0.5 * (dm.avar0.array() * H.array()).sum();
}

}  // namespace qlab
