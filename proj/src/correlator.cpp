#include "qdot/correlator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <thread>

#include "qdot/config.hpp"
#include "qdot/numeric.hpp"

namespace qdot {

namespace {

TimePs floor_div(TimePs a, TimePs b) {
  TimePs q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct Selected {
  std::vector<TimePs> t;
  std::vector<std::size_t> index;  // position in the parent stream
};

Selected select(const TagStream& stream, const std::array<bool, 256>& mask) {
  Selected s;
  const auto& ch = stream.channels();
  const auto& ts = stream.timestamps();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (mask[ch[i]]) {
      s.t.push_back(ts[i]);
      s.index.push_back(i);
    }
  }
  return s;
}

std::array<bool, 256> mask_of(const ChannelSet& set) {
  std::array<bool, 256> m{};
  for (auto c : set) m[c] = true;
  return m;
}

CorrelationHistogram empty_histogram(const TagStream& stream, TimePs bin_width, TimePs delay_min, TimePs delay_max) {
  if (bin_width <= 0) throw std::invalid_argument("bin_width must be > 0");
  if (delay_max < delay_min) throw std::invalid_argument("delay range must satisfy min <= max");
  CorrelationHistogram h;
  h.bin_width = bin_width;
  h.delay_min = floor_div(delay_min, bin_width) * bin_width;
  h.delay_max = -floor_div(-delay_max, bin_width) * bin_width;
  h.counts.assign(static_cast<std::size_t>((h.delay_max - h.delay_min) / bin_width + 1), 0);
  h.duration = stream.duration();
  return h;
}

}  // namespace

double CorrelationHistogram::poisson_level() const {
  if (duration <= 0) return 0.0;
  return static_cast<double>(count_start) * static_cast<double>(count_stop) * static_cast<double>(bin_width) /
         static_cast<double>(duration);
}

std::vector<double> CorrelationHistogram::normalized() const {
  std::vector<double> out(counts.size(), 0.0);
  const double level = normalization == Normalization::poisson_level ? poisson_level() : 1.0;
  if (level <= 0.0) return out;
  for (std::size_t k = 0; k < counts.size(); ++k) out[k] = static_cast<double>(counts[k]) / level;
  return out;
}

std::vector<double> CorrelationHistogram::uncertainty() const {
  std::vector<double> out(counts.size(), 0.0);
  const double level = normalization == Normalization::poisson_level ? poisson_level() : 1.0;
  if (level <= 0.0) return out;
  for (std::size_t k = 0; k < counts.size(); ++k) out[k] = std::sqrt(static_cast<double>(counts[k])) / level;
  return out;
}

CorrelationHistogram& CorrelationHistogram::operator+=(const CorrelationHistogram& other) {
  if (other.bin_width != bin_width || other.delay_min != delay_min || other.counts.size() != counts.size()) {
    throw std::invalid_argument("cannot add histograms with different binning");
  }
  for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += other.counts[k];
  count_start += other.count_start;
  count_stop += other.count_stop;
  duration += other.duration;
  empty_channels = empty_channels && other.empty_channels;
  return *this;
}

CorrelationHistogram correlate_ps(const TagStream& stream, const ChannelSet& a, const ChannelSet& b, TimePs bin_width,
                                  TimePs delay_min, TimePs delay_max, unsigned threads) {
  CorrelationHistogram h = empty_histogram(stream, bin_width, delay_min, delay_max);
  const auto mask_a = mask_of(a);
  const auto mask_b = mask_of(b);
  bool overlap = false;
  for (std::size_t c = 0; c < 256; ++c) overlap = overlap || (mask_a[c] && mask_b[c]);

  const Selected start = select(stream, mask_a);
  const Selected stop = select(stream, mask_b);
  h.count_start = start.t.size();
  h.count_stop = stop.t.size();
  if (start.t.empty() || stop.t.empty()) {
    h.empty_channels = true;
    return h;
  }

  const TimePs half = bin_width / 2;
  const TimePs lo_edge = h.delay_min - half;
  const TimePs hi_edge = lo_edge + static_cast<TimePs>(h.counts.size()) * bin_width;

  auto run = [&](std::size_t begin, std::size_t end, std::vector<std::uint64_t>& counts) {
    if (begin >= end) return;
    std::size_t lo = static_cast<std::size_t>(
        std::lower_bound(stop.t.begin(), stop.t.end(), start.t[begin] + lo_edge) - stop.t.begin());
    for (std::size_t i = begin; i < end; ++i) {
      const TimePs t0 = start.t[i];
      while (lo < stop.t.size() && stop.t[lo] < t0 + lo_edge) ++lo;
      for (std::size_t j = lo; j < stop.t.size(); ++j) {
        const TimePs d = stop.t[j] - t0;
        if (d >= hi_edge) break;
        if (overlap && d == 0 && stop.index[j] == start.index[i]) continue;
        ++counts[static_cast<std::size_t>((d - lo_edge) / bin_width)];
      }
    }
  };

  const std::size_t n = start.t.size();
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n / 4096 + 1)));
  if (workers == 1) {
    run(0, n, h.counts);
    return h;
  }
  std::vector<std::vector<std::uint64_t>> partial(workers, std::vector<std::uint64_t>(h.counts.size(), 0));
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, begin, end, w] { run(begin, end, partial[w]); });
  }
  for (auto& t : pool) t.join();
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < p.size(); ++k) h.counts[k] += p[k];
  }
  return h;
}

CorrelationHistogram correlate(const TagStream& stream, const ChannelSet& a, const ChannelSet& b, double bin_width,
                               double delay_min, double delay_max, unsigned threads) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin_width must be > 0");
  return correlate_ps(stream, a, b, std::max<TimePs>(1, to_ps(bin_width)), to_ps(delay_min), to_ps(delay_max),
                      threads);
}

CorrelationHistogram correlate_brute_force(const TagStream& stream, const ChannelSet& a, const ChannelSet& b,
                                           TimePs bin_width, TimePs delay_min, TimePs delay_max) {
  CorrelationHistogram h = empty_histogram(stream, bin_width, delay_min, delay_max);
  const auto mask_a = mask_of(a);
  const auto mask_b = mask_of(b);
  const auto& ch = stream.channels();
  const auto& ts = stream.timestamps();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    h.count_start += mask_a[ch[i]];
    h.count_stop += mask_b[ch[i]];
  }
  h.empty_channels = h.count_start == 0 || h.count_stop == 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (!mask_a[ch[i]]) continue;
    for (std::size_t j = 0; j < stream.size(); ++j) {
      if (!mask_b[ch[j]] || i == j) continue;
      const TimePs bin = floor_div(ts[j] - ts[i] - h.delay_min + bin_width / 2, bin_width);
      if (bin >= 0 && bin < static_cast<TimePs>(h.counts.size())) ++h.counts[static_cast<std::size_t>(bin)];
    }
  }
  return h;
}

G2Result g2_pulsed(const CorrelationHistogram& histogram, double rep_period, int side_peaks) {
  const double period_ps = rep_period * kPsPerSecond;
  if (!(rep_period > 0.0)) throw std::invalid_argument("rep_period must be > 0");
  if (period_ps < 2.0 * static_cast<double>(histogram.bin_width)) {
    throw ResolutionError("rep_period is shorter than two histogram bins");
  }
  const double reach = std::min(-static_cast<double>(histogram.delay_min), static_cast<double>(histogram.delay_max));
  const int available = static_cast<int>(std::floor(reach / period_ps - 0.5));
  if (available < 5) throw std::invalid_argument("histogram must span at least +/-5 repetition periods");
  const int K = std::min(side_peaks, available);

  G2Result r;
  r.rep_period = rep_period;
  r.side_peaks = K;
  r.peak_areas.assign(static_cast<std::size_t>(2 * K + 1), 0.0);
  for (std::size_t k = 0; k < histogram.size(); ++k) {
    const double c = static_cast<double>(histogram.center(k));
    const int m = static_cast<int>(std::floor(c / period_ps + 0.5));
    if (m < -K || m > K) continue;
    r.peak_areas[static_cast<std::size_t>(m + K)] += static_cast<double>(histogram.counts[k]);
  }
  double side_sum = 0.0;
  for (int m = -K; m <= K; ++m) {
    if (m != 0) side_sum += r.area(m);
  }
  r.side_mean = side_sum / (2.0 * K);
  if (r.side_mean <= 0.0) throw std::domain_error("side peaks are empty; g2(0) undefined");
  const double a0 = r.area(0);
  r.g2_zero = a0 / r.side_mean;
  const double rel_side = 1.0 / std::sqrt(side_sum);
  r.g2_zero_uncertainty = std::hypot(std::sqrt(std::max(a0, 1.0)) / r.side_mean, r.g2_zero * rel_side);
  return r;
}

double LongDelayProfile::flatness(double from, double to) const {
  double worst = 0.0;
  for (std::size_t i = 0; i < delay.size(); ++i) {
    if (delay[i] >= from && delay[i] <= to) worst = std::max(worst, std::abs(value[i] - 1.0));
  }
  return worst;
}

LongDelayProfile long_delay_profile(const CorrelationHistogram& histogram, double coarse_bin, double rep_period) {
  if (!(coarse_bin > 0.0)) throw std::invalid_argument("coarse_bin must be > 0");
  const double w = static_cast<double>(histogram.bin_width);
  double coarse_ps = coarse_bin * kPsPerSecond;
  double offset_ps = 0.0;
  if (rep_period > 0.0) {
    const double period_ps = rep_period * kPsPerSecond;
    coarse_ps = std::max(1.0, std::round(coarse_ps / period_ps)) * period_ps;
    offset_ps = 0.5 * period_ps;
  } else {
    offset_ps = 0.5 * w;
  }
  const double reach = std::min(-static_cast<double>(histogram.delay_min), static_cast<double>(histogram.delay_max));
  const auto n_coarse = static_cast<std::size_t>(std::max(0.0, std::floor((reach - offset_ps) / coarse_ps)));

  std::vector<double> sum(n_coarse, 0.0);
  std::vector<double> fine_bins(n_coarse, 0.0);
  for (std::size_t k = 0; k < histogram.size(); ++k) {
    const double d = std::abs(static_cast<double>(histogram.center(k)));
    if (d < offset_ps) continue;
    const auto j = static_cast<std::size_t>((d - offset_ps) / coarse_ps);
    if (j >= n_coarse) continue;
    sum[j] += static_cast<double>(histogram.counts[k]);
    fine_bins[j] += 1.0;
  }

  LongDelayProfile p;
  p.coarse_bin = coarse_ps / kPsPerSecond;
  const double level = histogram.poisson_level();
  for (std::size_t j = 0; j < n_coarse; ++j) {
    const double expected = level * fine_bins[j];
    p.delay.push_back((offset_ps + (static_cast<double>(j) + 0.5) * coarse_ps) / kPsPerSecond);
    p.value.push_back(expected > 0.0 ? sum[j] / expected : 0.0);
    p.uncertainty.push_back(expected > 0.0 ? std::sqrt(sum[j]) / expected : 0.0);
  }
  return p;
}

BunchingFit fit_bunching(const LongDelayProfile& p, double from, double to) {
  std::vector<std::size_t> use;
  for (std::size_t i = 0; i < p.delay.size(); ++i) {
    if (p.delay[i] >= from && p.delay[i] <= to && p.uncertainty[i] > 0.0) use.push_back(i);
  }
  if (use.size() < 3) throw std::invalid_argument("fit_bunching needs at least three populated bins");
  // Start from a log-linear fit of the excess.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (auto i : use) {
    const double excess = p.value[i] - 1.0;
    if (excess <= 0.0) continue;
    const double x = p.delay[i], y = std::log(excess);
    sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
  }
  double rate0 = 1.0 / (to - from), amp0 = std::max(p.value[use.front()] - 1.0, 1e-3);
  if (n >= 2 && n * sxx - sx * sx > 0.0) {
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (slope < 0.0) {
      rate0 = -slope;
      amp0 = std::exp((sy - slope * sx) / n);
    }
  }
  const double t_scale = 1.0 / rate0;
  auto residuals = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
    for (std::size_t k = 0; k < use.size(); ++k) {
      const auto i = use[k];
      const double model = 1.0 + q[0] * std::exp(-q[1] * p.delay[i] / t_scale);
      r[static_cast<Eigen::Index>(k)] = (p.value[i] - model) / p.uncertainty[i];
    }
  };
  Eigen::VectorXd start(2);
  start << amp0, 1.0;
  const auto fit = least_squares(residuals, static_cast<int>(use.size()), start);
  BunchingFit out;
  out.amplitude = fit.params[0];
  out.rate = fit.params[1] / t_scale;
  out.amplitude_uncertainty = fit.uncertainty[0];
  out.rate_uncertainty = fit.uncertainty[1] / t_scale;
  return out;
}

void write_histogram_csv(const CorrelationHistogram& h, std::ostream& out) {
  out << "# bin_width_s=" << format_double(to_seconds(h.bin_width)) << '\n';
  out << "# delay_min_s=" << format_double(to_seconds(h.delay_min)) << '\n';
  out << "# delay_max_s=" << format_double(to_seconds(h.delay_max)) << '\n';
  out << "# normalization=" << (h.normalization == Normalization::poisson_level ? "poisson_level" : "raw") << '\n';
  out << "# counts_start=" << h.count_start << '\n';
  out << "# counts_stop=" << h.count_stop << '\n';
  out << "# duration_s=" << format_double(to_seconds(h.duration)) << '\n';
  out << "delay_s,counts,normalized,uncertainty\n";
  const auto norm = h.normalized();
  const auto err = h.uncertainty();
  for (std::size_t k = 0; k < h.size(); ++k) {
    out << format_double(h.center_seconds(k)) << ',' << h.counts[k] << ',' << format_double(norm[k]) << ','
        << format_double(err[k]) << '\n';
  }
}

}  // namespace qdot
