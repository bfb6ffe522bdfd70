#pragma once

// Photon-correlation Fourier spectroscopy: dithered-MZI port correlations per
// photon-pair separation, spectral correlation p(zeta; tau) and
// linewidth-versus-tau extraction.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "qdot/emitter.hpp"
#include "qdot/photonstream.hpp"

namespace qdot {

inline constexpr double kSpeedOfLight = 299792458.0;

struct PCFSScanConfig {
  double max_opd = 0.372;          // m
  double opd_step = 0.004;         // m
  double dither_rate = 10.0;       // fringes/s
  double tau_min = 10e-9;          // s
  double tau_max = 10e-3;          // s
  int bins_per_decade = 5;
  double acquisition_time = 0.0;   // s per position; 0 = automatic
  double contrast = 1.0;           // instrument fringe contrast kappa
  double min_pairs = 1e4;          // pairs wanted in the sparsest tau bin
  double zeta_step = 25e6;         // Hz, output grid of p(zeta)

  void validate() const;
  std::vector<double> tau_edges() const;
  std::vector<double> opd_positions() const;
};

struct PcfsGrid {
  double resolution = 0.0;  // Hz
  double range = 0.0;       // Hz
  int positions = 0;
};

PcfsGrid pcfs_grid(const PCFSScanConfig& config);

/// Port statistics at one path difference, per tau bin.
struct FringeContrast {
  double opd = 0.0;
  std::vector<double> tau_edges;
  std::vector<std::uint64_t> pairs_all;
  std::vector<std::uint64_t> pairs_cross;
  std::vector<double> g_cross;         // 2 N_cross / N_all
  std::vector<double> c2;              // squared fringe contrast, dither-corrected
  std::vector<double> c2_uncertainty;
  std::vector<bool> low_statistics;

  /// Fringe contrast c = sqrt(max(c2, 0)).
  std::vector<double> contrast() const;
};

/// Routes each truth photon to port A with probability
/// (1 + v cos(2 pi nu opd / c + phi(t))) / 2, v = kappa exp(-pi L opd / c)
/// with L the photon's homogeneous FWHM and phi a linear dither ramp, then
/// counts all and cross-port photon pairs in each tau bin.
FringeContrast mzi_dither_correlate(const TagStream& stream, double opd, const PCFSScanConfig& config,
                                    std::uint64_t seed);

struct SpectralCorrelation {
  std::vector<double> zeta;                // Hz
  std::vector<double> tau_edges;           // s
  std::vector<double> opd;                 // m, sampled path differences
  std::vector<std::vector<double>> envelope;  // interferogram I(opd) per tau bin
  std::vector<std::vector<double>> p;      // p(zeta) per tau bin, unit area
  std::vector<bool> low_statistics;        // per tau bin
  double resolution = 0.0;
  double range = 0.0;
};

/// Cosine transform of the interferogram envelope with triangular
/// apodization, clipped at zero and normalized to unit area.
SpectralCorrelation spectral_correlation(const std::vector<FringeContrast>& contrasts, const PCFSScanConfig& config);

enum PcfsFlag : unsigned {
  kPcfsOk = 0,
  kPcfsResolutionLimited = 1,
  kPcfsMisfit = 2,
  kPcfsLowStatistics = 4,
};

struct PCFSResult {
  std::vector<double> tau_edges;
  std::vector<double> tau;                    // geometric bin centre, s
  std::vector<double> linewidth;              // Lorentzian fit FWHM/2, Hz
  std::vector<double> linewidth_deconvolved;  // apodization-aware fit, Hz
  std::vector<double> uncertainty;            // Hz
  std::vector<unsigned> flags;
  double voltage = 0.0;
  double acquisition_time = 0.0;

  bool any_flag(unsigned mask) const;
};

/// Lorentzian fits of p(zeta) per tau bin. `linewidth` fits a plain
/// Lorentzian; `linewidth_deconvolved` fits the same apodized transform of an
/// exponential envelope, which removes the instrument broadening. The
/// uncertainty combines the fit error with the spread of the two.
PCFSResult linewidth_vs_tau(const SpectralCorrelation& sc, double misfit_threshold = 0.05);

/// Per-position acquisition time: whole dither periods, at least three, and
/// long enough for min_pairs in the narrowest tau bin at the expected rate.
double pcfs_acquisition_time(const PCFSScanConfig& scan, const EmitterConfig& emitter, double voltage);

struct PcfsRunOptions {
  unsigned threads = 1;
};

/// Full pipeline per voltage: simulate each stage position, correlate,
/// transform and fit.
std::vector<PCFSResult> pcfs_run(const PCFSScanConfig& scan, const EmitterConfig& emitter,
                                 const std::vector<double>& voltages, std::uint64_t seed,
                                 const PcfsRunOptions& options = {},
                                 std::vector<SpectralCorrelation>* correlations = nullptr);

/// Symmetrized histogram (unit area on `zeta`) of truth frequency differences
/// of photon pairs separated by [tau_lo, tau_hi).
std::vector<double> pair_difference_histogram(const TagStream& stream, double tau_lo, double tau_hi,
                                              const std::vector<double>& zeta);

void write_spectral_correlation_csv(const SpectralCorrelation& sc, std::ostream& out);
void write_linewidth_csv(const PCFSResult& result, std::ostream& out);

}  // namespace qdot
