#pragma once

// Calibrated emitter configurations for the studied dot and the semi-analytic
// predictors used to calibrate them.

#include "qdot/emitter.hpp"

namespace qdot {

struct DotTargets {
  double stationary_fwhm = 420e6;       // Hz, plateau-center Voigt width
  double intrinsic_dephasing = 5e7;     // 1/s at the plateau center
  double g2_zero = 0.028;
  double remote_visibility_edge = 0.145;  // at edge_voltage
  double edge_voltage = -0.450;
  double hom_visibility = 0.855;        // raw double-pulse visibility at hom_delay
  double hom_delay = 2e-9;              // s
};

/// Plateau-center dot at 76.2 MHz, single pulses.
EmitterConfig calibrated_dot(const DotTargets& targets = {});

/// Same dot driven by pulse pairs `separation` apart.
EmitterConfig with_double_pulses(EmitterConfig config, double separation);

/// Same dot at the 304.8 MHz PCFS repetition rate with the given collection.
EmitterConfig pcfs_dot(const DotTargets& targets = {}, double collection_efficiency = 0.009);

/// Homogeneous Lorentzian FWHM (Hz) at `voltage`: (1/T1 + 2 gamma)/(2 pi).
double homogeneous_fwhm(const EmitterConfig& config, double voltage);

/// Gaussian FWHM of the OU stationary distribution.
double diffusion_fwhm(const EmitterConfig& config);

/// Remote estimate computed from the model truth: both spectra are the OU
/// stationary Gaussian, residual dephasing is the model dephasing at voltage.
double model_remote_visibility(const EmitterConfig& config, double voltage);

/// Raw double-pulse HOM visibility predicted for a delay: OU frequency
/// difference after `delay`, pair kernel, and the zero-delay contamination of
/// re-excitation photons.
double predicted_hom_visibility(const EmitterConfig& config, double voltage, double delay);

/// OU correlation time giving predicted_hom_visibility(delay) == target.
double calibrate_correlation_time(const EmitterConfig& config, double voltage, double delay, double target);

/// Cotunneling edge rate giving model_remote_visibility(edge_voltage) == target.
double calibrate_edge_rate(const EmitterConfig& config, double edge_voltage, double target);

}  // namespace qdot
