#pragma once

// Stationary spectra: FT limit, Voigt widths, truth spectra, scanning
// Fabry-Perot simulation and Voigt-convolved-with-SR fitting.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdot/emitter.hpp"
#include "qdot/photonstream.hpp"

namespace qdot {

struct Spectrum {
  std::vector<double> detuning;   // Hz, uniform and strictly increasing
  std::vector<double> intensity;  // arbitrary units, >= 0
  double sr_fwhm = 0.0;           // Hz, 0 when not instrument-filtered
  double fsr = 0.0;               // Hz, 0 = no periodicity

  std::size_t size() const noexcept { return detuning.size(); }
  double step() const;
  void validate() const;
};

/// Uniform grid from `start` to `stop` inclusive.
std::vector<double> uniform_grid(double start, double stop, double step);

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, double residual_norm);
  double residual_norm() const noexcept { return residual_; }

 private:
  double residual_;
};

double ft_limit(double lifetime);

/// FWHM of the Lorentzian-Gaussian convolution, by root finding on the
/// exact Voigt profile.
double voigt_fwhm(double lorentzian_fwhm, double gaussian_fwhm);
/// Gaussian FWHM that gives a Voigt of `total_fwhm` with the given Lorentzian.
double gaussian_for_voigt(double lorentzian_fwhm, double total_fwhm);

/// Histogram of truth frequencies convolved with each photon's homogeneous
/// Lorentzian, FWHM (1/lifetime + 2 dephasing)/(2 pi); unit peak. The lifetime
/// defaults to the stream's lifetime_s metadata.
Spectrum spectrum_from_truth(const TagStream& stream, const std::vector<double>& grid,
                             std::optional<double> lifetime = std::nullopt);

inline constexpr double kFpiFsr = 15e9;
inline constexpr double kFpiSrFwhm = 100e6;

/// Transmission of a scanning FPI with Lorentzian (Airy-periodic) SR.
Spectrum fpi_scan(const Spectrum& spectrum, double scan_start, double scan_stop, double step, double fsr = kFpiFsr,
                  double sr_fwhm = kFpiSrFwhm);

/// Replaces intensities by Poisson counts scaled so the peak expects
/// `peak_counts`.
Spectrum add_counting_noise(const Spectrum& spectrum, double peak_counts, std::uint64_t seed);

/// Optional measured SR, sampled on a uniform offset grid (Hz). When empty,
/// a Lorentzian of the given FWHM is used.
struct TabulatedResponse {
  std::vector<double> offset;
  std::vector<double> value;
};

struct LineshapeFit {
  double lorentzian_fwhm = 0.0;
  bool lorentzian_fixed = false;
  double gaussian_fwhm = 0.0;
  double total_fwhm = 0.0;  // Voigt FWHM with the SR removed
  double amplitude = 0.0;
  double center = 0.0;
  double offset = 0.0;
  double residual_norm = 0.0;
  double lorentzian_uncertainty = 0.0;
  double gaussian_uncertainty = 0.0;
  double total_uncertainty = 0.0;
  double amplitude_uncertainty = 0.0;
  double center_uncertainty = 0.0;
  double offset_uncertainty = 0.0;
  bool resolution_limited = false;
};

struct FitOptions {
  double sr_fwhm = kFpiSrFwhm;
  std::optional<double> fixed_lorentzian_fwhm;
  TabulatedResponse response;
  int max_evaluations = 4000;
};

/// amplitude * (Voigt conv SR)(x - center) + offset, summed over FSR images.
LineshapeFit fit_voigt_sr(const Spectrum& measured, const FitOptions& options);

struct SweepOptions {
  double photons = 4e6;            // emitted photons per voltage at full brightness
  double scan_half_width = 5e9;    // Hz around the Stark-shifted line
  double scan_step = 25e6;         // Hz
  double fsr = kFpiFsr;
  double sr_fwhm = kFpiSrFwhm;
  double peak_counts = 2e4;        // counting noise on the FPI trace; 0 = noise-free
  std::optional<double> fixed_lorentzian_fwhm;
};

struct SweepPoint {
  double voltage = 0.0;
  Species species = Species::none;
  double stark_frequency = 0.0;  // Hz
  double intensity = 0.0;        // collected photons per second
  bool fitted = false;
  LineshapeFit fit;
};

/// FPI measurement and Voigt fit at each gate voltage; intensity is the
/// collected photon rate. Voltages without the driven species are reported
/// unfitted with zero intensity.
std::vector<SweepPoint> voltage_sweep(const EmitterConfig& config, const std::vector<double>& voltages,
                                      const SweepOptions& options, std::uint64_t seed);

/// Simulates, scans and fits one voltage; the simulated photon count is
/// `photons` (before brightness loss). The measured FPI trace is copied to
/// `trace` when given.
SweepPoint fpi_measurement(const EmitterConfig& config, double voltage, const SweepOptions& options,
                           std::uint64_t seed, Spectrum* trace = nullptr);

void write_sweep_csv(const std::vector<SweepPoint>& sweep, std::ostream& out);

void write_spectrum_csv(const Spectrum& spectrum, std::ostream& out);
void write_fit_report(const LineshapeFit& fit, std::ostream& out);

}  // namespace qdot
