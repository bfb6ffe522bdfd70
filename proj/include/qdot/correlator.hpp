#pragma once

// Start-stop coincidence histograms over TagStreams, pulsed g2 peak
// integration and long-delay (blinking) analysis.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "qdot/photonstream.hpp"

namespace qdot {

using ChannelSet = std::vector<std::uint8_t>;

enum class Normalization { raw, poisson_level };

class ResolutionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Counts of start/stop pairs binned by delay = t_stop - t_start.
///
/// Bin k is centred on delay_min + k * bin_width and covers
/// [centre - bin_width/2, centre + bin_width/2) in integer picoseconds, so the
/// zero-delay bin is centred on 0 whenever delay_min is a multiple of the bin
/// width (correlate() snaps it so).
struct CorrelationHistogram {
  TimePs bin_width = 1;
  TimePs delay_min = 0;
  TimePs delay_max = 0;
  std::vector<std::uint64_t> counts;
  Normalization normalization = Normalization::poisson_level;
  std::uint64_t count_start = 0;
  std::uint64_t count_stop = 0;
  TimePs duration = 0;
  bool empty_channels = false;

  std::size_t size() const noexcept { return counts.size(); }
  TimePs center(std::size_t k) const noexcept { return delay_min + static_cast<TimePs>(k) * bin_width; }
  double center_seconds(std::size_t k) const noexcept { return to_seconds(center(k)); }
  /// Expected counts per bin for uncorrelated streams with the same rates.
  double poisson_level() const;
  std::vector<double> normalized() const;
  std::vector<double> uncertainty() const;

  CorrelationHistogram& operator+=(const CorrelationHistogram& other);
  friend bool operator==(const CorrelationHistogram&, const CorrelationHistogram&) = default;
};

/// Sliding-window correlation of start channels `a` against stop channels `b`.
/// A tag selected by both sides is never paired with itself.
CorrelationHistogram correlate(const TagStream& stream, const ChannelSet& a, const ChannelSet& b, double bin_width,
                               double delay_min, double delay_max, unsigned threads = 1);
CorrelationHistogram correlate_ps(const TagStream& stream, const ChannelSet& a, const ChannelSet& b, TimePs bin_width,
                                  TimePs delay_min, TimePs delay_max, unsigned threads = 1);

/// O(N^2) reference implementation with identical binning.
CorrelationHistogram correlate_brute_force(const TagStream& stream, const ChannelSet& a, const ChannelSet& b,
                                           TimePs bin_width, TimePs delay_min, TimePs delay_max);

struct G2Result {
  double g2_zero = 0.0;
  double g2_zero_uncertainty = 0.0;
  /// Index m + side_peaks holds the area of the peak at delay m * rep_period.
  std::vector<double> peak_areas;
  int side_peaks = 0;
  double rep_period = 0.0;
  double side_mean = 0.0;

  double area(int m) const { return peak_areas.at(static_cast<std::size_t>(m + side_peaks)); }
};

inline constexpr int kDefaultSidePeaks = 10;

/// Integrates one full period around each peak; g2(0) = central area over the
/// mean of the side peaks |m| <= side_peaks (fewer if the histogram is short).
G2Result g2_pulsed(const CorrelationHistogram& histogram, double rep_period, int side_peaks = kDefaultSidePeaks);

struct LongDelayProfile {
  double coarse_bin = 0.0;  // s, after snapping to whole periods
  std::vector<double> delay;        // s, coarse-bin centre in |delay|
  std::vector<double> value;        // Poisson-normalized
  std::vector<double> uncertainty;

  /// Largest |value - 1| among coarse bins centred within [from, to].
  double flatness(double from, double to) const;
};

/// Folds +/- delays and rebins to `coarse_bin`. With rep_period > 0 the coarse
/// bin is rounded to a whole number of periods and bin edges sit half-way
/// between pulse peaks, so every coarse bin holds complete peaks; the
/// zero-delay peak is excluded.
LongDelayProfile long_delay_profile(const CorrelationHistogram& histogram, double coarse_bin = 13e-9,
                                    double rep_period = 0.0);

struct BunchingFit {
  double amplitude = 0.0;  // g2 - 1 extrapolated to zero delay
  double rate = 0.0;       // 1/s
  double amplitude_uncertainty = 0.0;
  double rate_uncertainty = 0.0;
};

/// Weighted fit of 1 + amplitude exp(-rate |delay|) to the profile bins
/// centred within [from, to]. For telegraph blinking, rate = on + off and
/// amplitude = off / on.
BunchingFit fit_bunching(const LongDelayProfile& profile, double from, double to);

void write_histogram_csv(const CorrelationHistogram& histogram, std::ostream& out);

}  // namespace qdot
