#include "qdot/numeric.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

namespace qdot {

namespace {

constexpr int kTerms = 32;

struct WeidemanTable {
  double L;
  std::array<double, kTerms> a;  // a[n-1] multiplies Z^(n-1)
};

WeidemanTable make_table() {
  WeidemanTable tab{};
  const int M = 2 * kTerms;
  tab.L = std::sqrt(kTerms / std::numbers::sqrt2);
  for (int n = 1; n <= kTerms; ++n) {
    double sum = 0.0;
    for (int k = -M + 1; k <= M - 1; ++k) {
      const double t = tab.L * std::tan(0.5 * k * std::numbers::pi / M);
      const double f = std::exp(-t * t) * (tab.L * tab.L + t * t);
      sum += f * std::cos(std::numbers::pi * k * n / M);
    }
    tab.a[static_cast<std::size_t>(n - 1)] = sum / (2.0 * M);
  }
  return tab;
}

const WeidemanTable& table() {
  static const WeidemanTable tab = make_table();
  return tab;
}

struct Adapter {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const ResidualFn* fn;
  int n_in;
  int n_out;
  int inputs() const { return n_in; }
  int values() const { return n_out; }
  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    (*fn)(x, r);
    return 0;
  }
};

}  // namespace

std::complex<double> faddeeva(std::complex<double> z) {
  if (z.imag() < 0.0) throw std::domain_error("faddeeva: Im z must be >= 0");
  const auto& tab = table();
  const std::complex<double> i(0.0, 1.0);
  const std::complex<double> denom = tab.L - i * z;
  const std::complex<double> Z = (tab.L + i * z) / denom;
  std::complex<double> p = 0.0;
  for (int n = kTerms - 1; n >= 0; --n) p = p * Z + tab.a[static_cast<std::size_t>(n)];
  return 2.0 * p / (denom * denom) + (1.0 / std::sqrt(std::numbers::pi)) / denom;
}

double lorentzian(double x, double fwhm) {
  const double g = 0.5 * fwhm;
  return g / (std::numbers::pi * (x * x + g * g));
}

double gaussian(double x, double fwhm) {
  const double s = fwhm / kGaussFwhmPerSigma;
  return std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
}

double voigt(double x, double lorentzian_fwhm, double gaussian_fwhm) {
  if (lorentzian_fwhm < 0.0 || gaussian_fwhm < 0.0) throw std::invalid_argument("voigt widths must be >= 0");
  if (gaussian_fwhm <= 1e-9 * lorentzian_fwhm) return lorentzian(x, lorentzian_fwhm);
  const double sigma = gaussian_fwhm / kGaussFwhmPerSigma;
  if (lorentzian_fwhm == 0.0) return gaussian(x, gaussian_fwhm);
  const std::complex<double> z((x) / (sigma * std::numbers::sqrt2), 0.5 * lorentzian_fwhm / (sigma * std::numbers::sqrt2));
  return faddeeva(z).real() / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

LeastSquaresResult least_squares(const ResidualFn& fn, int n_residuals, Eigen::VectorXd start,
                                 int max_evaluations) {
  const int n = static_cast<int>(start.size());
  if (n_residuals < n) throw std::invalid_argument("least_squares needs at least as many residuals as parameters");
  Adapter adapter{&fn, n, n_residuals};
  Eigen::NumericalDiff<Adapter> numeric(adapter);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<Adapter>, double> lm(numeric);
  lm.parameters.maxfev = max_evaluations;
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-12;
  const auto status = lm.minimize(start);

  LeastSquaresResult out;
  out.params = start;
  out.evaluations = static_cast<int>(lm.nfev);
  out.converged = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters &&
                  status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation;

  Eigen::VectorXd r(n_residuals);
  fn(start, r);
  out.residual_norm = r.norm();

  // Central-difference Jacobian at the optimum for the covariance.
  Eigen::MatrixXd J(n_residuals, n);
  Eigen::VectorXd rp(n_residuals), rm(n_residuals);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(start[j]));
    Eigen::VectorXd xp = start, xm = start;
    xp[j] += h;
    xm[j] -= h;
    fn(xp, rp);
    fn(xm, rm);
    J.col(j) = (rp - rm) / (2.0 * h);
  }
  const double dof = std::max(1, n_residuals - n);
  const double s2 = r.squaredNorm() / dof;
  const Eigen::MatrixXd cov = (J.transpose() * J).completeOrthogonalDecomposition().pseudoInverse() * s2;
  out.uncertainty = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

}  // namespace qdot
