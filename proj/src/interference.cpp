#include "qdot/interference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "qdot/config.hpp"
#include "qdot/numeric.hpp"
#include "qdot/random.hpp"

namespace qdot {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double normalized_weight_sum(const Spectrum& s) {
  s.validate();
  double sum = 0.0;
  for (double v : s.intensity) sum += v;
  if (!(sum > 0.0) || !std::isfinite(sum)) throw std::invalid_argument("spectrum is not normalizable");
  return sum;
}

// Difference of two independent Exp(T) delays, blurred by Gaussian jitter of
// standard deviation sigma.
double peak_shape(double x, double T, double sigma) {
  if (sigma <= 0.0) return std::exp(-std::abs(x) / T) / (2.0 * T);
  const double s2 = sigma * sigma;
  const double r = sigma * std::numbers::sqrt2;
  const double pre = std::exp(s2 / (2.0 * T * T)) / (4.0 * T);
  const double left = std::exp(-x / T) * std::erfc((s2 / T - x) / r);
  const double right = std::exp(x / T) * std::erfc((s2 / T + x) / r);
  return pre * ((std::isfinite(left) ? left : 0.0) + (std::isfinite(right) ? right : 0.0));
}

struct ClusterArea {
  double area;
  double sigma;
};

ClusterArea cluster_fit_central(const CorrelationHistogram& h, const PulseStructure& ps) {
  if (!(ps.lifetime > 0.0)) throw std::invalid_argument("cluster fit needs the emitter lifetime");
  const double P = ps.rep_period * kPsPerSecond;
  const double S = ps.pulse_separation * kPsPerSecond;
  const double T = ps.lifetime * kPsPerSecond;
  const double sigma = std::numbers::sqrt2 * ps.jitter_fwhm * kPsPerSecond / kGaussFwhmPerSigma;
  const double w = static_cast<double>(h.bin_width);
  const double lo = static_cast<double>(h.delay_min) - 0.5 * w;
  const double hi = static_cast<double>(h.delay_max) + 0.5 * w;
  const double margin = 6.0 * T + 4.0 * sigma;

  std::vector<double> positions;
  const int jmax = S > 0.0 ? 2 : 0;
  const int M = static_cast<int>(std::ceil((std::max(-lo, hi) + margin + 2.0 * S) / P));
  for (int m = -M; m <= M; ++m) {
    for (int j = -jmax; j <= jmax; ++j) {
      const double pos = m * P + j * S;
      if (pos > lo - margin && pos < hi + margin) positions.push_back(pos);
    }
  }
  std::sort(positions.begin(), positions.end());
  std::size_t central = 0;
  for (std::size_t p = 0; p < positions.size(); ++p) {
    if (std::abs(positions[p]) < std::abs(positions[central])) central = p;
  }

  const auto n = static_cast<Eigen::Index>(h.size());
  const auto k = static_cast<Eigen::Index>(positions.size()) + 1;
  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = static_cast<double>(h.center(static_cast<std::size_t>(i)));
    for (Eigen::Index p = 0; p + 1 < k; ++p) X(i, p) = w * peak_shape(c - positions[static_cast<std::size_t>(p)], T, sigma);
    X(i, k - 1) = 1.0;
    y[i] = static_cast<double>(h.counts[static_cast<std::size_t>(i)]);
  }

  // Iteratively reweighted with the model prediction as Poisson variance.
  Eigen::VectorXd weight = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd beta;
  Eigen::MatrixXd normal;
  for (int iter = 0; iter < 4; ++iter) {
    const Eigen::MatrixXd Xw = weight.asDiagonal() * X;
    normal = X.transpose() * Xw;
    beta = normal.ldlt().solve(Xw.transpose() * y);
    const Eigen::VectorXd model = X * beta;
    for (Eigen::Index i = 0; i < n; ++i) weight[i] = 1.0 / std::max(model[i], 1.0);
  }
  const Eigen::MatrixXd cov = normal.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const auto c = static_cast<Eigen::Index>(central);
  return {beta[c], std::sqrt(std::max(cov(c, c), 0.0))};
}

double window_area(const CorrelationHistogram& h, double half_window_ps) {
  double sum = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double c = static_cast<double>(h.center(k));
    if (c >= -half_window_ps && c < half_window_ps) sum += static_cast<double>(h.counts[k]);
  }
  return sum;
}

struct Routed {
  TimePs t;
  std::uint8_t port;
};

TagStream route_through_mzi(const TagStream& stream, TimePs delay_ps, double period_ps, Polarization pol,
                            double second_detuning, double decay_rate, std::uint64_t seed, std::uint64_t* pairs) {
  Engine rng = make_engine(seed, "hom.route");
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const auto& ts = stream.timestamps();
  const auto& ch = stream.channels();
  const auto& nu = stream.truth_frequencies();
  const auto& gamma = stream.truth_dephasing_rates();

  std::vector<Routed> out;
  out.reserve(stream.size());
  auto period_of = [&](std::size_t i) {
    return static_cast<std::int64_t>(std::floor((static_cast<double>(ts[i] - ch[i] * delay_ps) + 1.0) / period_ps));
  };

  std::vector<std::size_t> first_long, second_short;
  std::size_t i = 0;
  while (i < stream.size()) {
    const std::int64_t k = period_of(i);
    first_long.clear();
    second_short.clear();
    std::size_t j = i;
    for (; j < stream.size() && period_of(j) == k; ++j) {
      const bool long_arm = coin(rng);
      if (ch[j] == 0 && long_arm) first_long.push_back(j);
      else if (ch[j] == 1 && !long_arm) second_short.push_back(j);
      else out.push_back({ts[j] + (long_arm ? delay_ps : 0), static_cast<std::uint8_t>(coin(rng))});
    }
    // Photons meeting at the output splitter interfere pairwise.
    const std::size_t n_pairs = std::min(first_long.size(), second_short.size());
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const std::size_t a = first_long[p], b = second_short[p];
      double v = 0.0;
      if (pol == Polarization::parallel) {
        v = pair_visibility({decay_rate, gamma[a], gamma[b], nu[a] - (nu[b] + second_detuning)});
      }
      const bool split = uni(rng) < 0.5 * (1.0 - v);
      const auto port_a = static_cast<std::uint8_t>(coin(rng));
      const auto port_b = static_cast<std::uint8_t>(split ? 1 - port_a : port_a);
      out.push_back({ts[a] + delay_ps, port_a});
      out.push_back({ts[b], port_b});
    }
    *pairs += n_pairs;
    for (std::size_t p = n_pairs; p < first_long.size(); ++p) {
      out.push_back({ts[first_long[p]] + delay_ps, static_cast<std::uint8_t>(coin(rng))});
    }
    for (std::size_t p = n_pairs; p < second_short.size(); ++p) {
      out.push_back({ts[second_short[p]], static_cast<std::uint8_t>(coin(rng))});
    }
    i = j;
  }

  TagStreamBuilder builder({"hom_out_c", "hom_out_d"}, stream.duration(), false);
  builder.reserve(out.size());
  for (const auto& r : out) builder.add(r.port, r.t);
  builder.merge_metadata(stream.metadata());
  builder.set_meta("op", "hom_route");
  builder.set_meta("polarization", pol == Polarization::parallel ? "parallel" : "orthogonal");
  return std::move(builder).build();
}

}  // namespace

double pair_visibility(const PairKernelParams& p) {
  if (!(p.decay_rate > 0.0)) throw std::invalid_argument("decay_rate must be > 0");
  if (p.dephasing_a < 0.0 || p.dephasing_b < 0.0) throw std::invalid_argument("dephasing rates must be >= 0");
  const double s = p.decay_rate + p.dephasing_a + p.dephasing_b;
  const double d = kTwoPi * p.detuning;
  return p.decay_rate * s / (s * s + d * d);
}

double remote_visibility_estimate(const Spectrum& a, const Spectrum& b, double decay_rate, double residual_dephasing) {
  const double sa = normalized_weight_sum(a);
  const double sb = normalized_weight_sum(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.intensity[i] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (b.intensity[j] == 0.0) continue;
      row += b.intensity[j] *
             pair_visibility({decay_rate, residual_dephasing, residual_dephasing, a.detuning[i] - b.detuning[j]});
    }
    acc += a.intensity[i] * row;
  }
  return acc / (sa * sb);
}

double remote_visibility_from_fit(const LineshapeFit& fit, double lifetime) {
  if (!(lifetime > 0.0)) throw std::invalid_argument("lifetime must be > 0");
  const double decay = 1.0 / lifetime;
  const double residual = std::max(0.0, 0.5 * (kTwoPi * fit.lorentzian_fwhm - decay));
  if (fit.gaussian_fwhm <= 0.0) return pair_visibility({decay, residual, residual, 0.0});
  const double step = fit.gaussian_fwhm / 40.0;
  Spectrum g;
  g.detuning = uniform_grid(-3.0 * fit.gaussian_fwhm, 3.0 * fit.gaussian_fwhm, step);
  for (double x : g.detuning) g.intensity.push_back(gaussian(x, fit.gaussian_fwhm));
  return remote_visibility_estimate(g, g, decay, residual);
}

Visibility visibility_from_areas(double a_par, double a_orth) {
  if (!(a_orth > 0.0)) throw std::domain_error("orthogonal central area is zero; visibility undefined");
  Visibility v;
  v.area_parallel = a_par;
  v.area_orthogonal = a_orth;
  const double ratio = a_par / a_orth;
  v.value = 1.0 - ratio;
  v.uncertainty = std::sqrt(std::max(a_par, 1.0)) / a_orth * std::sqrt(1.0 + a_par / a_orth);
  return v;
}

Visibility visibility_from_histograms(const CorrelationHistogram& parallel, const CorrelationHistogram& orthogonal,
                                      const PulseStructure& structure, VisibilityMethod method) {
  if (parallel.bin_width != orthogonal.bin_width || parallel.delay_min != orthogonal.delay_min ||
      parallel.size() != orthogonal.size()) {
    throw std::invalid_argument("parallel and orthogonal histograms must share binning");
  }
  if (method == VisibilityMethod::window) {
    const double half = 0.5 * (structure.pulse_separation > 0.0 ? structure.pulse_separation : structure.rep_period) *
                        kPsPerSecond;
    return visibility_from_areas(window_area(parallel, half), window_area(orthogonal, half));
  }
  const ClusterArea par = cluster_fit_central(parallel, structure);
  const ClusterArea orth = cluster_fit_central(orthogonal, structure);
  if (!(orth.area > 0.0)) throw std::domain_error("orthogonal central area is zero; visibility undefined");
  Visibility v;
  v.area_parallel = par.area;
  v.area_orthogonal = orth.area;
  const double ratio = par.area / orth.area;
  v.value = 1.0 - ratio;
  v.uncertainty = ratio * std::hypot(par.sigma / std::max(std::abs(par.area), 1.0), orth.sigma / orth.area);
  return v;
}

TPIResult hom_simulate(const TagStream& stream, double mzi_delay, Polarization polarization, std::uint64_t seed,
                       const HomOptions& options) {
  if (!stream.has_truth()) throw std::invalid_argument("hom_simulate needs a truth stream");
  if (stream.channel_count() != 2) throw ConfigError("hom_simulate needs a double-pulse stream (two pulse channels)", 0);
  const TimePs delay_ps = to_ps(mzi_delay);
  const TimePs separation_ps = static_cast<TimePs>(stream.meta_number("pulse_separation_ps"));
  if (delay_ps <= 0 || delay_ps != separation_ps) {
    throw ConfigError("mzi_delay " + std::to_string(delay_ps) + " ps does not match pulse separation " +
                          std::to_string(separation_ps) + " ps",
                      0);
  }
  const double period_ps = stream.meta_number("rep_period_ps");
  const double lifetime = stream.meta_number("lifetime_s");

  TPIResult result;
  result.mzi_delay = mzi_delay;
  result.polarization = polarization;
  const TimePs range = static_cast<TimePs>(options.periods * period_ps);
  const TimePs bin = std::max<TimePs>(1, to_ps(options.bin_width));

  auto run = [&](Polarization pol, std::uint64_t index) {
    std::uint64_t pairs = 0;
    const TagStream routed = route_through_mzi(stream, delay_ps, period_ps, pol, options.second_pulse_detuning,
                                               1.0 / lifetime, derive_seed(seed, "hom.route", index), &pairs);
    const TagStream detected = apply_detector(routed, options.detector, derive_seed(seed, "hom.detector", index));
    auto h = correlate_ps(detected, {0}, {1}, bin, -range, range, options.threads);
    return std::pair{std::move(h), pairs};
  };
  auto [test_hist, test_pairs] = run(polarization, 0);
  auto [ref_hist, ref_pairs] = run(Polarization::orthogonal, 1);
  (void)ref_pairs;
  result.overlapping_pairs = test_pairs;

  const PulseStructure structure{period_ps / kPsPerSecond, mzi_delay, lifetime, options.detector.jitter_fwhm};
  const Visibility v = visibility_from_histograms(test_hist, ref_hist, structure, options.method);
  result.visibility = v.value;
  result.uncertainty = v.uncertainty;
  result.area_parallel = v.area_parallel;
  result.area_orthogonal = v.area_orthogonal;
  result.parallel_histogram = std::move(test_hist);
  result.orthogonal_histogram = std::move(ref_hist);
  return result;
}

void write_tpi_report(const TPIResult& r, std::ostream& out) {
  out << "polarization=" << (r.polarization == Polarization::parallel ? "parallel" : "orthogonal") << '\n';
  out << "mzi_delay_s=" << format_double(r.mzi_delay) << '\n';
  out << "visibility=" << format_double(r.visibility) << '\n';
  out << "visibility_uncertainty=" << format_double(r.uncertainty) << '\n';
  out << "central_area_test=" << format_double(r.area_parallel) << '\n';
  out << "central_area_reference=" << format_double(r.area_orthogonal) << '\n';
  out << "overlapping_pairs=" << r.overlapping_pairs << '\n';
}

}  // namespace qdot
