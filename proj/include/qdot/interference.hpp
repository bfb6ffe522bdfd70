#pragma once

// Two-photon interference: pair kernel, remote-source estimate from spectra,
// Monte Carlo HOM through an unbalanced MZI and peak-area visibility.

#include <cstdint>
#include <iosfwd>
#include <optional>

#include "qdot/correlator.hpp"
#include "qdot/photonstream.hpp"
#include "qdot/spectroscopy.hpp"

namespace qdot {

struct PairKernelParams {
  double decay_rate = 0.0;  // 1/s
  double dephasing_a = 0.0;
  double dephasing_b = 0.0;
  double detuning = 0.0;    // Hz
};

/// Time-integrated HOM suppression for two exponential wavepackets:
/// G(G + ga + gb) / ((G + ga + gb)^2 + (2 pi d)^2).
double pair_visibility(const PairKernelParams& p);

/// Mean pair kernel over independent draws from the two (homogeneously
/// deconvolved) frequency distributions.
double remote_visibility_estimate(const Spectrum& a, const Spectrum& b, double decay_rate,
                                  double residual_dephasing);

/// Remote estimate from a Voigt fit: both spectra are the fitted Gaussian and
/// any Lorentzian width beyond the lifetime limit is taken as dephasing.
double remote_visibility_from_fit(const LineshapeFit& fit, double lifetime);

enum class Polarization { parallel, orthogonal };
enum class VisibilityMethod { window, cluster_fit };

/// Timing structure of the double-pulse HOM correlation.
struct PulseStructure {
  double rep_period = 0.0;        // s
  double pulse_separation = 0.0;  // s
  double lifetime = 0.0;          // s, for the cluster-fit peak shape
  double jitter_fwhm = 0.0;       // s, per detector
};

struct Visibility {
  double value = 0.0;
  double uncertainty = 0.0;
  double area_parallel = 0.0;
  double area_orthogonal = 0.0;
};

/// V = 1 - a_par / a_orth with Poisson propagation.
Visibility visibility_from_areas(double a_parallel, double a_orthogonal);

/// Central-peak areas from both histograms. `window` sums bins within half a
/// pulse separation of zero delay. `cluster_fit` fits every peak of the
/// double-pulse comb (known exponential-with-jitter shape, flat background)
/// by weighted linear least squares and compares the fitted central areas,
/// which removes the overlap of neighbouring peaks at short separations.
Visibility visibility_from_histograms(const CorrelationHistogram& parallel, const CorrelationHistogram& orthogonal,
                                      const PulseStructure& structure,
                                      VisibilityMethod method = VisibilityMethod::window);

struct HomOptions {
  DetectorModel detector = DetectorModel::standard_spad();
  double bin_width = 64e-12;
  int periods = 5;  // histogram spans +/- this many repetition periods
  VisibilityMethod method = VisibilityMethod::cluster_fit;
  double second_pulse_detuning = 0.0;  // Hz added to second-pulse photons
  unsigned threads = 1;
};

struct TPIResult {
  double visibility = 0.0;
  double uncertainty = 0.0;
  double area_parallel = 0.0;
  double area_orthogonal = 0.0;
  CorrelationHistogram parallel_histogram;
  CorrelationHistogram orthogonal_histogram;
  double mzi_delay = 0.0;
  Polarization polarization = Polarization::parallel;
  std::uint64_t overlapping_pairs = 0;
};

/// Routes a double-pulse truth stream through the MZI for the requested
/// polarization and, as the reference, for orthogonal polarization (separate
/// routing seeds); correlates the two output detectors for each.
/// Throws ConfigError when mzi_delay differs from the stream's pulse spacing.
TPIResult hom_simulate(const TagStream& stream, double mzi_delay, Polarization polarization, std::uint64_t seed,
                       const HomOptions& options = {});

void write_tpi_report(const TPIResult& result, std::ostream& out);

}  // namespace qdot
