#include "qdot/presets.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <boost/math/tools/roots.hpp>

#include "qdot/interference.hpp"
#include "qdot/numeric.hpp"
#include "qdot/spectroscopy.hpp"

namespace qdot {

namespace {

// Mean of the pair kernel over a zero-mean Gaussian detuning of variance var.
double averaged_kernel(double decay, double gamma, double var) {
  const double s = decay + 2.0 * gamma;
  if (var <= 0.0) return decay / s;
  // Kernel = (decay/s) / (1 + (d/a)^2), a = s/(2 pi): a Lorentzian in d, so
  // its Gaussian average is a Voigt value at the origin.
  const double a = s / (2.0 * std::numbers::pi);
  const double sigma = std::sqrt(var);
  const double voigt0 = faddeeva({0.0, a / (sigma * std::numbers::sqrt2)}).real() / (sigma * std::sqrt(2.0 * std::numbers::pi));
  return decay / s * std::numbers::pi * a * voigt0;
}

double model_dephasing(const EmitterConfig& c, double voltage) {
  return c.dephasing_rate_intrinsic + cotunnel_rate(c.plateau, voltage);
}

template <class F>
double bisect(F f, double lo, double hi) {
  boost::math::tools::eps_tolerance<double> tol(40);
  std::uintmax_t iters = 300;
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, tol, iters);
  return 0.5 * (a + b);
}

}  // namespace

double homogeneous_fwhm(const EmitterConfig& c, double voltage) {
  return (1.0 / c.lifetime + 2.0 * model_dephasing(c, voltage)) / (2.0 * std::numbers::pi);
}

double diffusion_fwhm(const EmitterConfig& c) { return kGaussFwhmPerSigma * c.diffusion.stationary_std; }

double model_remote_visibility(const EmitterConfig& c, double voltage) {
  const double sigma = c.diffusion.stationary_std;
  return averaged_kernel(1.0 / c.lifetime, model_dephasing(c, voltage), 2.0 * sigma * sigma);
}

double predicted_hom_visibility(const EmitterConfig& c, double voltage, double delay) {
  const double sigma = c.diffusion.stationary_std;
  const double rho = std::exp(-delay / c.diffusion.correlation_time);
  const double matched = averaged_kernel(1.0 / c.lifetime, model_dephasing(c, voltage), 2.0 * sigma * sigma * (1.0 - rho));
  const double p = emission_probability(c, voltage, std::numbers::pi);
  if (!(p > 0.0)) throw std::invalid_argument("emitter does not emit at this voltage");
  const double r = c.reexcitation_prob;
  // Same-pulse photon pairs add zero-delay coincidences to both polarizations.
  const double contamination = 4.0 * r / (p * (1.0 + r) * (1.0 + r));
  return matched / (1.0 + contamination);
}

double calibrate_correlation_time(const EmitterConfig& config, double voltage, double delay, double target) {
  EmitterConfig c = config;
  auto f = [&](double log_tau) {
    c.diffusion.correlation_time = std::exp(log_tau);
    return predicted_hom_visibility(c, voltage, delay) - target;
  };
  const double lo = std::log(1e-12), hi = std::log(1.0);
  if (f(lo) * f(hi) > 0.0) throw std::invalid_argument("target visibility not reachable by tuning the correlation time");
  return std::exp(bisect(f, lo, hi));
}

double calibrate_edge_rate(const EmitterConfig& config, double edge_voltage, double target) {
  EmitterConfig c = config;
  auto f = [&](double log_rate) {
    c.plateau.cotunnel_rate_edge = std::exp(log_rate);
    return model_remote_visibility(c, edge_voltage) - target;
  };
  const double lo = std::log(1e3), hi = std::log(1e13);
  if (f(lo) * f(hi) > 0.0) throw std::invalid_argument("target remote visibility not reachable by tuning the edge rate");
  return std::exp(bisect(f, lo, hi));
}

EmitterConfig calibrated_dot(const DotTargets& t) {
  EmitterConfig c;
  c.lifetime = 652e-12;
  c.stark_slope = kStarkSlopeResonant;
  c.rep_rate = kRepRateStandard;
  c.prep_fidelity = 0.85;
  c.dephasing_rate_intrinsic = t.intrinsic_dephasing;
  c.plateau.center_voltage = -0.570;
  c.plateau.half_width = 0.120;
  c.plateau.edge_softness = 0.060;
  c.plateau.intensity_loss = 0.4;

  const double center = c.plateau.center_voltage;
  c.diffusion.stationary_std = gaussian_for_voigt(homogeneous_fwhm(c, center), t.stationary_fwhm) / kGaussFwhmPerSigma;
  c.reexcitation_prob = reexcitation_for_g2(t.g2_zero, emission_probability(c, center, std::numbers::pi));
  c.diffusion.correlation_time = calibrate_correlation_time(c, center, t.hom_delay, t.hom_visibility);
  c.plateau.cotunnel_rate_edge = calibrate_edge_rate(c, t.edge_voltage, t.remote_visibility_edge);
  return c;
}

EmitterConfig with_double_pulses(EmitterConfig config, double separation) {
  config.double_pulse_separation = separation;
  config.validate();
  return config;
}

EmitterConfig pcfs_dot(const DotTargets& targets, double collection_efficiency) {
  EmitterConfig c = calibrated_dot(targets);
  c.rep_rate = kRepRatePcfs;
  c.collection_efficiency = collection_efficiency;
  return c;
}

}  // namespace qdot
