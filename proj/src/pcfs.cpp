#include "qdot/pcfs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include "qdot/config.hpp"
#include "qdot/numeric.hpp"
#include "qdot/random.hpp"

namespace qdot {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kGHz = 1e9;

// Mean of cos(2 pi f tau) for tau uniform in [lo, hi).
double dither_factor(double f, double lo, double hi) {
  const double a = kTwoPi * f;
  if (a * hi < 1e-9) return 1.0;
  return (std::sin(a * hi) - std::sin(a * lo)) / (a * (hi - lo));
}

double half_max_width(const std::vector<double>& x, const std::vector<double>& y) {
  const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double half = 0.5 * y[peak];
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && y[lo] > half) --lo;
  while (hi + 1 < y.size() && y[hi] > half) ++hi;
  auto cross = [&](std::size_t a, std::size_t b) {
    return y[a] == y[b] ? x[a] : x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a]);
  };
  return (hi == peak ? x[peak] : cross(hi - 1, hi)) - (lo == peak ? x[peak] : cross(lo, lo + 1));
}

// Apodized one-sided weights: half weight at zero path difference, then a
// triangle that vanishes at the maximum path difference.
std::vector<double> apodization(const std::vector<double>& opd) {
  const double D = opd.back();
  std::vector<double> a(opd.size());
  for (std::size_t j = 0; j < opd.size(); ++j) a[j] = (j == 0 ? 0.5 : 1.0) * (D > 0.0 ? 1.0 - opd[j] / D : 1.0);
  return a;
}

}  // namespace

void PCFSScanConfig::validate() const {
  if (!(opd_step > 0.0) || !(opd_step <= max_opd)) throw std::invalid_argument("need 0 < opd_step <= max_opd");
  if (!(dither_rate > 0.0)) throw std::invalid_argument("dither_rate must be > 0");
  if (!(tau_min > 0.0) || !(tau_max > tau_min)) throw std::invalid_argument("need 0 < tau_min < tau_max");
  if (bins_per_decade < 1) throw std::invalid_argument("bins_per_decade must be >= 1");
  if (acquisition_time < 0.0) throw std::invalid_argument("acquisition_time must be >= 0");
  if (!(contrast > 0.0 && contrast <= 1.0)) throw std::invalid_argument("contrast must lie in (0,1]");
  if (!(zeta_step > 0.0)) throw std::invalid_argument("zeta_step must be > 0");
}

std::vector<double> PCFSScanConfig::tau_edges() const {
  validate();
  const int n = std::max(1, static_cast<int>(std::lround(std::log10(tau_max / tau_min) * bins_per_decade)));
  std::vector<double> edges(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) edges[static_cast<std::size_t>(k)] = tau_min * std::pow(tau_max / tau_min, double(k) / n);
  return edges;
}

std::vector<double> PCFSScanConfig::opd_positions() const {
  const PcfsGrid g = pcfs_grid(*this);
  std::vector<double> out(static_cast<std::size_t>(g.positions));
  for (int j = 0; j < g.positions; ++j) out[static_cast<std::size_t>(j)] = j * opd_step;
  return out;
}

PcfsGrid pcfs_grid(const PCFSScanConfig& c) {
  if (!(c.opd_step > 0.0) || !(c.opd_step <= c.max_opd)) throw std::invalid_argument("need 0 < opd_step <= max_opd");
  PcfsGrid g;
  g.resolution = kSpeedOfLight / c.max_opd;
  g.range = kSpeedOfLight / (2.0 * c.opd_step);
  g.positions = static_cast<int>(std::floor(c.max_opd / c.opd_step + 1e-9)) + 1;
  return g;
}

std::vector<double> FringeContrast::contrast() const {
  std::vector<double> out(c2.size());
  for (std::size_t k = 0; k < c2.size(); ++k) out[k] = std::sqrt(std::max(c2[k], 0.0));
  return out;
}

FringeContrast mzi_dither_correlate(const TagStream& stream, double opd, const PCFSScanConfig& config,
                                    std::uint64_t seed) {
  config.validate();
  if (!stream.has_truth()) throw std::invalid_argument("mzi_dither_correlate needs a truth stream");
  if (opd < 0.0) throw std::invalid_argument("opd must be >= 0");
  const double decay = 1.0 / stream.meta_number("lifetime_s");
  Engine phase_rng = make_engine(seed, "pcfs.phase");
  Engine port_rng = make_engine(seed, "pcfs.port");
  const double phi0 = std::uniform_real_distribution<double>(0.0, kTwoPi)(phase_rng);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const auto& ts = stream.timestamps();
  const auto& nu = stream.truth_frequencies();
  const auto& gamma = stream.truth_dephasing_rates();
  const std::size_t n = stream.size();
  // cum_b[i] = number of port-B photons among the first i.
  std::vector<std::uint32_t> cum_b(n + 1, 0);
  std::vector<std::uint8_t> port(n);
  const double delay = opd / kSpeedOfLight;
  for (std::size_t i = 0; i < n; ++i) {
    const double width = (decay + 2.0 * gamma[i]) / kTwoPi;
    const double v = config.contrast * std::exp(-std::numbers::pi * width * delay);
    const double phase = kTwoPi * (nu[i] * delay + config.dither_rate * to_seconds(ts[i])) + phi0;
    port[i] = uni(port_rng) < 0.5 * (1.0 + v * std::cos(phase)) ? 0 : 1;
    cum_b[i + 1] = cum_b[i] + port[i];
  }

  FringeContrast fc;
  fc.opd = opd;
  fc.tau_edges = config.tau_edges();
  const std::size_t nb = fc.tau_edges.size() - 1;
  std::vector<TimePs> edge_ps(fc.tau_edges.size());
  for (std::size_t k = 0; k < edge_ps.size(); ++k) edge_ps[k] = to_ps(fc.tau_edges[k]);
  fc.pairs_all.assign(nb, 0);
  fc.pairs_cross.assign(nb, 0);

  std::vector<std::size_t> ptr(edge_ps.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < edge_ps.size(); ++k) {
      const TimePs target = ts[i] + edge_ps[k];
      std::size_t& p = ptr[k];
      if (p < i) p = i;
      while (p < n && ts[p] < target) ++p;
    }
    for (std::size_t k = 0; k < nb; ++k) {
      const std::size_t all = ptr[k + 1] - ptr[k];
      const std::size_t b = cum_b[ptr[k + 1]] - cum_b[ptr[k]];
      fc.pairs_all[k] += all;
      fc.pairs_cross[k] += port[i] == 0 ? b : all - b;
    }
  }

  fc.g_cross.assign(nb, 1.0);
  fc.c2.assign(nb, 0.0);
  fc.c2_uncertainty.assign(nb, 0.0);
  fc.low_statistics.assign(nb, false);
  for (std::size_t k = 0; k < nb; ++k) {
    const double all = static_cast<double>(fc.pairs_all[k]);
    fc.low_statistics[k] = all < config.min_pairs;
    if (all <= 0.0) continue;
    const double f = static_cast<double>(fc.pairs_cross[k]) / all;
    const double dither = dither_factor(config.dither_rate, fc.tau_edges[k], fc.tau_edges[k + 1]);
    fc.g_cross[k] = 2.0 * f;
    fc.c2[k] = 2.0 * (1.0 - fc.g_cross[k]) / dither;
    fc.c2_uncertainty[k] = 4.0 * std::sqrt(std::max(f * (1.0 - f), 0.25 / all) / all) / dither;
  }
  return fc;
}

SpectralCorrelation spectral_correlation(const std::vector<FringeContrast>& contrasts, const PCFSScanConfig& config) {
  config.validate();
  if (contrasts.size() < 2) throw std::invalid_argument("spectral_correlation needs at least two path differences");
  std::vector<const FringeContrast*> sorted;
  for (const auto& c : contrasts) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->opd < b->opd; });
  const double step = sorted[1]->opd - sorted[0]->opd;
  if (std::abs(sorted[0]->opd) > 1e-9 * step) throw std::invalid_argument("path differences must start at zero");
  for (std::size_t j = 1; j < sorted.size(); ++j) {
    if (std::abs(sorted[j]->opd - sorted[j - 1]->opd - step) > 1e-6 * step) {
      throw std::invalid_argument("path differences must be uniformly spaced");
    }
    if (sorted[j]->tau_edges != sorted[0]->tau_edges) throw std::invalid_argument("tau bins differ between positions");
  }

  SpectralCorrelation sc;
  sc.tau_edges = sorted[0]->tau_edges;
  for (auto* c : sorted) sc.opd.push_back(c->opd);
  sc.resolution = kSpeedOfLight / sc.opd.back();
  sc.range = kSpeedOfLight / (2.0 * step);
  {
    const auto half = static_cast<long>(std::floor(sc.range / config.zeta_step + 1e-9));
    sc.zeta.resize(static_cast<std::size_t>(2 * half + 1));
    for (long i = -half; i <= half; ++i) sc.zeta[static_cast<std::size_t>(i + half)] = i * config.zeta_step;
  }
  const auto a = apodization(sc.opd);
  const std::size_t nb = sc.tau_edges.size() - 1;
  const double kappa2 = config.contrast * config.contrast;
  for (std::size_t k = 0; k < nb; ++k) {
    std::vector<double> env(sc.opd.size());
    bool low = false;
    for (std::size_t j = 0; j < sorted.size(); ++j) {
      env[j] = sorted[j]->c2[k] / kappa2;
      low = low || sorted[j]->low_statistics[k];
    }
    std::vector<double> p(sc.zeta.size(), 0.0);
    double area = 0.0;
    for (std::size_t i = 0; i < sc.zeta.size(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < env.size(); ++j) {
        acc += a[j] * env[j] * std::cos(kTwoPi * sc.zeta[i] * sc.opd[j] / kSpeedOfLight);
      }
      p[i] = std::max(0.0, 2.0 * acc);
      area += p[i] * config.zeta_step;
    }
    if (area > 0.0) {
      for (double& v : p) v /= area;
    }
    sc.envelope.push_back(std::move(env));
    sc.p.push_back(std::move(p));
    sc.low_statistics.push_back(low);
  }
  return sc;
}

bool PCFSResult::any_flag(unsigned mask) const {
  return std::any_of(flags.begin(), flags.end(), [&](unsigned f) { return (f & mask) != 0; });
}

PCFSResult linewidth_vs_tau(const SpectralCorrelation& sc, double misfit_threshold) {
  if (sc.p.empty() || sc.zeta.size() < 3) throw std::invalid_argument("empty spectral correlation");
  const std::size_t nz = sc.zeta.size();
  const std::size_t np = sc.opd.size();
  const auto a = apodization(sc.opd);
  std::vector<double> zeta_ghz(nz);
  for (std::size_t i = 0; i < nz; ++i) zeta_ghz[i] = sc.zeta[i] / kGHz;
  // cos table shared by every bin's apodized model
  std::vector<double> cos_table(nz * np);
  for (std::size_t i = 0; i < nz; ++i) {
    for (std::size_t j = 0; j < np; ++j) {
      cos_table[i * np + j] = a[j] * std::cos(kTwoPi * sc.zeta[i] * sc.opd[j] / kSpeedOfLight);
    }
  }
  const double resolution_floor = 0.5 * sc.resolution;

  PCFSResult r;
  r.tau_edges = sc.tau_edges;
  for (std::size_t k = 0; k < sc.p.size(); ++k) {
    const auto& p = sc.p[k];
    const double peak = *std::max_element(p.begin(), p.end());
    r.tau.push_back(std::sqrt(sc.tau_edges[k] * sc.tau_edges[k + 1]));
    unsigned flags = sc.low_statistics[k] ? kPcfsLowStatistics : kPcfsOk;
    if (!(peak > 0.0)) {
      r.linewidth.push_back(0.0);
      r.linewidth_deconvolved.push_back(0.0);
      r.uncertainty.push_back(0.0);
      r.flags.push_back(flags | kPcfsMisfit);
      continue;
    }
    std::vector<double> y(nz);
    for (std::size_t i = 0; i < nz; ++i) y[i] = p[i] / peak;
    const double w0 = std::max(half_max_width(zeta_ghz, y), 1e-3);

    // Plain Lorentzian in zeta.
    Eigen::VectorXd q(2);
    q << 1.0 / lorentzian(0.0, w0), w0;
    const ResidualFn plain = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
      const double w = std::abs(x[1]);
      for (std::size_t i = 0; i < nz; ++i) res[static_cast<Eigen::Index>(i)] = x[0] * lorentzian(zeta_ghz[i], w) - y[i];
    };
    const auto fit_plain = least_squares(plain, static_cast<int>(nz), q);

    // Same apodized transform applied to an exponential envelope.
    const double opd_scale = std::numbers::pi * kGHz / kSpeedOfLight;
    std::vector<double> model(nz);
    auto apodized = [&](double w) {
      std::vector<double> env(np);
      for (std::size_t j = 0; j < np; ++j) env[j] = std::exp(-opd_scale * w * sc.opd[j]);
      for (std::size_t i = 0; i < nz; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < np; ++j) acc += cos_table[i * np + j] * env[j];
        model[i] = std::max(0.0, 2.0 * acc);
      }
    };
    apodized(w0);
    Eigen::VectorXd d(2);
    d << 1.0 / std::max(model[nz / 2], 1e-12), w0;
    const ResidualFn deconv = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
      apodized(std::abs(x[1]));
      for (std::size_t i = 0; i < nz; ++i) res[static_cast<Eigen::Index>(i)] = x[0] * model[i] - y[i];
    };
    const auto fit_deconv = least_squares(deconv, static_cast<int>(nz), d);

    const double lw = 0.5 * std::abs(fit_plain.params[1]) * kGHz;
    const double lw_d = 0.5 * std::abs(fit_deconv.params[1]) * kGHz;
    const double stat = 0.5 * fit_deconv.uncertainty[1] * kGHz;
    const double rms = fit_deconv.residual_norm / std::sqrt(static_cast<double>(nz));
    if (!fit_plain.converged || !fit_deconv.converged || rms > misfit_threshold) flags |= kPcfsMisfit;
    if (lw_d < resolution_floor) flags |= kPcfsResolutionLimited;
    r.linewidth.push_back(lw);
    r.linewidth_deconvolved.push_back(lw_d);
    r.uncertainty.push_back(std::hypot(stat, lw - lw_d));
    r.flags.push_back(flags);
  }
  return r;
}

double pcfs_acquisition_time(const PCFSScanConfig& scan, const EmitterConfig& emitter, double voltage) {
  scan.validate();
  if (scan.acquisition_time > 0.0) return scan.acquisition_time;
  const double p = emission_probability(emitter, voltage, std::numbers::pi);
  const double slots = emitter.double_pulse_separation > 0.0 ? 2.0 : 1.0;
  const double rate = emitter.rep_rate * slots * p * emitter.collection_efficiency * (1.0 + emitter.reexcitation_prob);
  const auto edges = scan.tau_edges();
  const double narrowest = edges[1] - edges[0];
  const double for_pairs = rate > 0.0 ? scan.min_pairs / (rate * rate * narrowest) : 0.0;
  const double period = 1.0 / scan.dither_rate;
  return std::ceil(std::max(3.0 * period, for_pairs) / period - 1e-9) * period;
}

std::vector<PCFSResult> pcfs_run(const PCFSScanConfig& scan, const EmitterConfig& emitter,
                                 const std::vector<double>& voltages, std::uint64_t seed,
                                 const PcfsRunOptions& options, std::vector<SpectralCorrelation>* correlations) {
  scan.validate();
  emitter.validate();
  if (voltages.empty()) throw std::invalid_argument("pcfs_run needs at least one voltage");
  const auto opd = scan.opd_positions();
  std::vector<PCFSResult> results;
  for (std::size_t v = 0; v < voltages.size(); ++v) {
    const double acq = pcfs_acquisition_time(scan, emitter, voltages[v]);
    std::vector<FringeContrast> contrasts(opd.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t j = next++; j < opd.size(); j = next++) {
        const std::uint64_t index = v * 100000 + j;
        const TagStream s = simulate_emission(emitter, voltages[v], std::numbers::pi, acq,
                                              derive_seed(seed, "pcfs.emit", index));
        contrasts[j] = mzi_dither_correlate(s, opd[j], scan, derive_seed(seed, "pcfs.route", index));
      }
    };
    const unsigned n_threads = std::max(1u, options.threads);
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    SpectralCorrelation sc = spectral_correlation(contrasts, scan);
    PCFSResult r = linewidth_vs_tau(sc);
    r.voltage = voltages[v];
    r.acquisition_time = acq;
    results.push_back(std::move(r));
    if (correlations) correlations->push_back(std::move(sc));
  }
  return results;
}

std::vector<double> pair_difference_histogram(const TagStream& stream, double tau_lo, double tau_hi,
                                              const std::vector<double>& zeta) {
  if (!stream.has_truth()) throw std::invalid_argument("pair_difference_histogram needs a truth stream");
  if (zeta.size() < 2) throw std::invalid_argument("zeta grid needs at least two points");
  const double step = zeta[1] - zeta[0];
  const TimePs lo = to_ps(tau_lo), hi = to_ps(tau_hi);
  const auto& ts = stream.timestamps();
  const auto& nu = stream.truth_frequencies();
  std::vector<double> h(zeta.size(), 0.0);
  double total = 0.0;
  auto add = [&](double d) {
    const double idx = std::floor((d - zeta.front()) / step + 0.5);
    if (idx >= 0.0 && idx < static_cast<double>(zeta.size())) h[static_cast<std::size_t>(idx)] += 1.0;
    total += 1.0;
  };
  std::size_t first = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    first = std::max(first, i + 1);
    while (first < stream.size() && ts[first] - ts[i] < lo) ++first;
    for (std::size_t j = first; j < stream.size() && ts[j] - ts[i] < hi; ++j) {
      add(nu[j] - nu[i]);
      add(nu[i] - nu[j]);
    }
  }
  if (total > 0.0) {
    for (double& v : h) v /= total * step;
  }
  return h;
}

void write_spectral_correlation_csv(const SpectralCorrelation& sc, std::ostream& out) {
  out << "# resolution_Hz=" << format_double(sc.resolution) << '\n';
  out << "# range_Hz=" << format_double(sc.range) << '\n';
  out << "zeta_Hz";
  for (std::size_t k = 0; k + 1 < sc.tau_edges.size(); ++k) {
    out << ",p_tau_" << format_double(sc.tau_edges[k]) << "_" << format_double(sc.tau_edges[k + 1]) << "_s";
  }
  out << '\n';
  for (std::size_t i = 0; i < sc.zeta.size(); ++i) {
    out << format_double(sc.zeta[i]);
    for (const auto& p : sc.p) out << ',' << format_double(p[i]);
    out << '\n';
  }
}

void write_linewidth_csv(const PCFSResult& r, std::ostream& out) {
  out << "# voltage_V=" << format_double(r.voltage) << '\n';
  out << "# acquisition_time_per_position_s=" << format_double(r.acquisition_time) << '\n';
  out << "tau_s,linewidth_Hz,linewidth_deconvolved_Hz,uncertainty_Hz,flags\n";
  for (std::size_t k = 0; k < r.tau.size(); ++k) {
    out << format_double(r.tau[k]) << ',' << format_double(r.linewidth[k]) << ','
        << format_double(r.linewidth_deconvolved[k]) << ',' << format_double(r.uncertainty[k]) << ',' << r.flags[k]
        << '\n';
  }
}

}  // namespace qdot
