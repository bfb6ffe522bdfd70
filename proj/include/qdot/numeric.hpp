#pragma once

// Lineshape primitives and a thin least-squares wrapper.

#include <complex>
#include <functional>

#include <Eigen/Dense>

namespace qdot {

/// Faddeeva function w(z) = exp(-z^2) erfc(-iz) for Im z >= 0 (Weideman's
/// rational expansion, 32 terms).
std::complex<double> faddeeva(std::complex<double> z);

/// Area-normalized Lorentzian with full width `fwhm`.
double lorentzian(double x, double fwhm);
/// Area-normalized Gaussian with full width `fwhm`.
double gaussian(double x, double fwhm);
/// Area-normalized Voigt profile from Lorentzian and Gaussian FWHMs.
double voigt(double x, double lorentzian_fwhm, double gaussian_fwhm);

inline constexpr double kGaussFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

struct LeastSquaresResult {
  Eigen::VectorXd params;
  Eigen::VectorXd uncertainty;  // sqrt(diag) of s^2 (J^T J)^-1
  double residual_norm = 0.0;   // sqrt of the residual sum of squares
  int evaluations = 0;
  bool converged = false;
};

using ResidualFn = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals)>;

/// Levenberg-Marquardt (MINPACK lmdif via Eigen) with forward-difference
/// Jacobian. Bounds are the caller's job, e.g. through reparameterization.
LeastSquaresResult least_squares(const ResidualFn& fn, int n_residuals, Eigen::VectorXd start,
                                 int max_evaluations = 4000);

}  // namespace qdot
