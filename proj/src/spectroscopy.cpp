#include "qdot/spectroscopy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <random>

#include <boost/math/tools/roots.hpp>

#include "qdot/config.hpp"
#include "qdot/numeric.hpp"
#include "qdot/random.hpp"

namespace qdot {

namespace {

constexpr double kGHz = 1e9;

double half_max_width(const std::vector<double>& x, const std::vector<double>& y, std::size_t peak) {
  const double half = 0.5 * y[peak];
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && y[lo] > half) --lo;
  while (hi + 1 < y.size() && y[hi] > half) ++hi;
  auto cross = [&](std::size_t a, std::size_t b) {
    if (y[a] == y[b]) return x[a];
    return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a]);
  };
  const double left = lo == peak ? x[peak] : cross(lo, lo + 1);
  const double right = hi == peak ? x[peak] : cross(hi - 1, hi);
  return right - left;
}

}  // namespace

FitError::FitError(const std::string& what, double residual_norm)
    : std::runtime_error(what + " (residual norm " + format_double(residual_norm) + ")"), residual_(residual_norm) {}

double Spectrum::step() const { return detuning.size() > 1 ? detuning[1] - detuning[0] : 0.0; }

void Spectrum::validate() const {
  if (detuning.size() != intensity.size()) throw std::invalid_argument("spectrum grid and intensity sizes differ");
  if (detuning.size() < 2) throw std::invalid_argument("spectrum needs at least two points");
  for (std::size_t i = 1; i < detuning.size(); ++i) {
    if (!(detuning[i] > detuning[i - 1])) throw std::invalid_argument("spectrum grid must be strictly increasing");
  }
  for (double v : intensity) {
    if (!(v >= 0.0)) throw std::invalid_argument("spectrum intensity must be >= 0");
  }
}

std::vector<double> uniform_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !(stop > start)) throw std::invalid_argument("grid needs step > 0 and stop > start");
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = start + static_cast<double>(i) * step;
  return g;
}

double ft_limit(double lifetime) {
  if (!(lifetime > 0.0)) throw std::invalid_argument("lifetime must be > 0");
  return 1.0 / (2.0 * std::numbers::pi * lifetime);
}

double voigt_fwhm(double L, double G) {
  if (L < 0.0 || G < 0.0) throw std::invalid_argument("voigt_fwhm widths must be >= 0");
  if (G == 0.0) return L;
  if (L == 0.0) return G;
  // Work in units of L + G so the root finder sees O(1) numbers.
  const double scale = L + G;
  const double l = L / scale, g = G / scale;
  const double half = 0.5 * voigt(0.0, l, g);
  auto f = [&](double w) { return voigt(0.5 * w, l, g) - half; };
  boost::math::tools::eps_tolerance<double> tol(48);
  std::uintmax_t iters = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, std::max(l, g) * (1.0 - 1e-12), 1.0 + 1e-9, tol, iters);
  return 0.5 * (a + b) * scale;
}

double gaussian_for_voigt(double L, double total) {
  if (total < L) throw std::invalid_argument("total Voigt width must be >= the Lorentzian width");
  if (total == L) return 0.0;
  auto f = [&](double g) { return voigt_fwhm(L, g) - total; };
  boost::math::tools::eps_tolerance<double> tol(44);
  std::uintmax_t iters = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, 0.0, total, tol, iters);
  return 0.5 * (a + b);
}

Spectrum spectrum_from_truth(const TagStream& stream, const std::vector<double>& grid, std::optional<double> lifetime) {
  if (!stream.has_truth()) throw std::invalid_argument("spectrum_from_truth needs a truth stream");
  if (stream.empty()) throw std::invalid_argument("spectrum_from_truth needs at least one photon");
  if (grid.size() < 2) throw std::invalid_argument("grid needs at least two points");
  const double tau = lifetime ? *lifetime : stream.meta_number("lifetime_s");
  if (!(tau > 0.0)) throw std::invalid_argument("lifetime must be > 0");
  const double gamma_decay = 1.0 / tau;

  const auto& nu = stream.truth_frequencies();
  const auto& deph = stream.truth_dephasing_rates();
  const double fine = (grid[1] - grid[0]) / 8.0;
  const auto [lo_it, hi_it] = std::minmax_element(nu.begin(), nu.end());
  const double lo = *lo_it;
  const auto n_fine = static_cast<std::size_t>(std::floor((*hi_it - lo) / fine)) + 1;

  // One frequency histogram per distinct dephasing rate.
  std::map<double, std::vector<double>> histograms;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    auto& h = histograms[deph[i]];
    if (h.empty()) h.assign(n_fine, 0.0);
    const auto k = static_cast<std::size_t>(std::floor((nu[i] - lo) / fine + 0.5));
    h[std::min(k, n_fine - 1)] += 1.0;
  }

  Spectrum s;
  s.detuning = grid;
  s.intensity.assign(grid.size(), 0.0);
  for (const auto& [gamma, h] : histograms) {
    const double width = (gamma_decay + 2.0 * gamma) / (2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < n_fine; ++k) {
      if (h[k] == 0.0) continue;
      const double center = lo + static_cast<double>(k) * fine;
      for (std::size_t i = 0; i < grid.size(); ++i) s.intensity[i] += h[k] * lorentzian(grid[i] - center, width);
    }
  }
  const double peak = *std::max_element(s.intensity.begin(), s.intensity.end());
  if (peak > 0.0) {
    for (double& v : s.intensity) v /= peak;
  }
  return s;
}

Spectrum fpi_scan(const Spectrum& spectrum, double scan_start, double scan_stop, double step, double fsr,
                  double sr_fwhm) {
  spectrum.validate();
  if (!(sr_fwhm > 0.0) || !(fsr > 0.0)) throw std::invalid_argument("fsr and sr_fwhm must be > 0");
  if (step > sr_fwhm / 4.0) throw std::invalid_argument("scan step must be <= sr_fwhm/4");
  Spectrum out;
  out.detuning = uniform_grid(scan_start, scan_stop, step);
  out.intensity.assign(out.detuning.size(), 0.0);
  out.sr_fwhm = sr_fwhm;
  out.fsr = fsr;
  // Lorentzian SR summed over all FSR images, in closed form.
  const double a = 2.0 * std::numbers::pi * (0.5 * sr_fwhm) / fsr;
  const double sh = std::sinh(a), ch = std::cosh(a);
  const double dnu = spectrum.step();
  for (std::size_t i = 0; i < out.detuning.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < spectrum.size(); ++j) {
      if (spectrum.intensity[j] == 0.0) continue;
      const double x = out.detuning[i] - spectrum.detuning[j];
      acc += spectrum.intensity[j] * sh / (ch - std::cos(2.0 * std::numbers::pi * x / fsr));
    }
    out.intensity[i] = acc * dnu / fsr;
  }
  return out;
}

Spectrum add_counting_noise(const Spectrum& spectrum, double peak_counts, std::uint64_t seed) {
  spectrum.validate();
  if (!(peak_counts > 0.0)) throw std::invalid_argument("peak_counts must be > 0");
  Engine rng = make_engine(seed, "fpi.counts");
  const double peak = *std::max_element(spectrum.intensity.begin(), spectrum.intensity.end());
  Spectrum out = spectrum;
  for (double& v : out.intensity) {
    const double mean = peak > 0.0 ? v / peak * peak_counts : 0.0;
    v = mean > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(mean)(rng)) : 0.0;
  }
  return out;
}

LineshapeFit fit_voigt_sr(const Spectrum& measured, const FitOptions& options) {
  measured.validate();
  const bool tabulated = !options.response.offset.empty();
  if (tabulated && options.response.offset.size() != options.response.value.size()) {
    throw std::invalid_argument("tabulated response offset/value sizes differ");
  }
  if (!tabulated && !(options.sr_fwhm >= 0.0)) throw std::invalid_argument("sr_fwhm must be >= 0");
  const bool fixed_l = options.fixed_lorentzian_fwhm.has_value();
  if (fixed_l && *options.fixed_lorentzian_fwhm < 0.0) throw std::invalid_argument("fixed Lorentzian must be >= 0");

  const std::size_t n = measured.size();
  const double peak = *std::max_element(measured.intensity.begin(), measured.intensity.end());
  if (!(peak > 0.0)) throw std::invalid_argument("measured spectrum is empty");
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = measured.detuning[i] / kGHz;
    y[i] = measured.intensity[i] / peak;
  }
  const double sr = (tabulated ? 0.0 : options.sr_fwhm) / kGHz;
  const double fsr = measured.fsr / kGHz;
  const int images = fsr > 0.0 ? 2 : 0;

  std::vector<double> resp_off, resp_w;
  if (tabulated) {
    const auto& r = options.response;
    double area = 0.0;
    for (double v : r.value) area += v;
    if (!(area > 0.0)) throw std::invalid_argument("tabulated response has no weight");
    for (std::size_t k = 0; k < r.offset.size(); ++k) {
      resp_off.push_back(r.offset[k] / kGHz);
      resp_w.push_back(r.value[k] / area);
    }
  }

  auto profile = [&](double dx, double L, double G) {
    double acc = 0.0;
    for (int m = -images; m <= images; ++m) {
      const double u = dx - m * fsr;
      if (!tabulated) {
        acc += voigt(u, L + sr, G);
      } else {
        for (std::size_t k = 0; k < resp_off.size(); ++k) acc += resp_w[k] * voigt(u - resp_off[k], L, G);
      }
    }
    return acc;
  };

  // Initial guesses from the data.
  const auto peak_idx = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double observed = std::max(half_max_width(x, y, peak_idx), 1e-3);
  const double L_fixed = fixed_l ? *options.fixed_lorentzian_fwhm / kGHz : 0.0;
  double G0, L0 = 0.0;
  if (fixed_l) {
    G0 = std::max(observed - L_fixed - sr, 0.05 * observed);
  } else {
    L0 = std::max(0.5 * (observed - sr), 0.05 * observed);
    G0 = std::max(0.5 * (observed - sr), 0.05 * observed);
  }
  const double base0 = std::min(y.front(), y.back());

  // params: amplitude, center, G, offset[, L]; widths enter through |.|.
  Eigen::VectorXd p(fixed_l ? 4 : 5);
  p[1] = x[peak_idx];
  p[2] = G0;
  p[3] = base0;
  if (!fixed_l) p[4] = L0;
  p[0] = (1.0 - base0) / profile(0.0, fixed_l ? L_fixed : L0, G0);

  const ResidualFn residual = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
    const double L = fixed_l ? L_fixed : std::abs(q[4]);
    const double G = std::abs(q[2]);
    for (std::size_t i = 0; i < n; ++i) r[static_cast<Eigen::Index>(i)] = q[0] * profile(x[i] - q[1], L, G) + q[3] - y[i];
  };
  const auto result = least_squares(residual, static_cast<int>(n), p, options.max_evaluations);
  if (!result.converged) throw FitError("Voigt fit did not converge", result.residual_norm * peak);

  const auto& q = result.params;
  const auto& e = result.uncertainty;
  LineshapeFit fit;
  fit.lorentzian_fixed = fixed_l;
  fit.lorentzian_fwhm = (fixed_l ? L_fixed : std::abs(q[4])) * kGHz;
  fit.gaussian_fwhm = std::abs(q[2]) * kGHz;
  fit.amplitude = q[0] * peak;
  fit.center = q[1] * kGHz;
  fit.offset = q[3] * peak;
  fit.residual_norm = result.residual_norm * peak;
  fit.amplitude_uncertainty = e[0] * peak;
  fit.center_uncertainty = e[1] * kGHz;
  fit.gaussian_uncertainty = e[2] * kGHz;
  fit.offset_uncertainty = e[3] * peak;
  fit.lorentzian_uncertainty = fixed_l ? 0.0 : e[4] * kGHz;
  fit.total_fwhm = voigt_fwhm(fit.lorentzian_fwhm, fit.gaussian_fwhm);

  // Propagate the component uncertainties through voigt_fwhm.
  const double hL = std::max(1e-3 * fit.lorentzian_fwhm, 1e3);
  const double hG = std::max(1e-3 * fit.gaussian_fwhm, 1e3);
  const double dL = (voigt_fwhm(fit.lorentzian_fwhm + hL, fit.gaussian_fwhm) - fit.total_fwhm) / hL;
  const double dG = (voigt_fwhm(fit.lorentzian_fwhm, fit.gaussian_fwhm + hG) - fit.total_fwhm) / hG;
  fit.total_uncertainty = std::hypot(dL * fit.lorentzian_uncertainty, dG * fit.gaussian_uncertainty);
  const double resolution = tabulated ? half_max_width(options.response.offset, options.response.value,
                                                       static_cast<std::size_t>(std::max_element(options.response.value.begin(),
                                                                                                 options.response.value.end()) -
                                                                                options.response.value.begin()))
                                      : options.sr_fwhm;
  fit.resolution_limited = fit.total_fwhm < 0.5 * resolution;
  return fit;
}

SweepPoint fpi_measurement(const EmitterConfig& config, double voltage, const SweepOptions& o, std::uint64_t seed,
                           Spectrum* trace) {
  config.validate();
  if (!(o.photons > 0.0)) throw std::invalid_argument("photons must be > 0");
  SweepPoint pt;
  pt.voltage = voltage;
  pt.species = charge_state(config.charge, voltage);
  pt.stark_frequency = stark_frequency(config, voltage);
  const double per_pulse = emission_probability(config, voltage, std::numbers::pi);
  if (!(per_pulse > 0.0) || config.collection_efficiency == 0.0) return pt;

  // Fixed acquisition time: the photon budget at full brightness.
  const double slots = config.double_pulse_separation > 0.0 ? 2.0 : 1.0;
  const double full_rate =
      config.rep_rate * slots * config.prep_fidelity * config.collection_efficiency * (1.0 + config.reexcitation_prob);
  const double duration = o.photons / full_rate;
  const TagStream truth = simulate_emission(config, voltage, std::numbers::pi, duration, seed);
  pt.intensity = static_cast<double>(truth.size()) / duration;
  if (truth.empty()) return pt;

  const double lo = pt.stark_frequency - o.scan_half_width;
  const double hi = pt.stark_frequency + o.scan_half_width;
  const Spectrum spectrum = spectrum_from_truth(truth, uniform_grid(lo, hi, o.scan_step));
  Spectrum measured = fpi_scan(spectrum, lo, hi, o.scan_step, o.fsr, o.sr_fwhm);
  if (o.peak_counts > 0.0) measured = add_counting_noise(measured, o.peak_counts, derive_seed(seed, "fpi.noise"));
  if (trace) *trace = measured;
  FitOptions fo;
  fo.sr_fwhm = o.sr_fwhm;
  fo.fixed_lorentzian_fwhm = o.fixed_lorentzian_fwhm;
  pt.fit = fit_voigt_sr(measured, fo);
  pt.fitted = true;
  return pt;
}

std::vector<SweepPoint> voltage_sweep(const EmitterConfig& config, const std::vector<double>& voltages,
                                      const SweepOptions& options, std::uint64_t seed) {
  std::vector<SweepPoint> out;
  out.reserve(voltages.size());
  for (std::size_t i = 0; i < voltages.size(); ++i) {
    out.push_back(fpi_measurement(config, voltages[i], options, derive_seed(seed, "sweep", i)));
  }
  return out;
}

void write_sweep_csv(const std::vector<SweepPoint>& sweep, std::ostream& out) {
  out << "voltage_V,species,stark_frequency_Hz,intensity_per_s,total_fwhm_Hz,total_fwhm_uncertainty_Hz,"
         "lorentzian_fwhm_Hz,gaussian_fwhm_Hz,fitted\n";
  for (const auto& p : sweep) {
    out << format_double(p.voltage) << ',' << to_string(p.species) << ',' << format_double(p.stark_frequency) << ','
        << format_double(p.intensity) << ',' << format_double(p.fit.total_fwhm) << ','
        << format_double(p.fit.total_uncertainty) << ',' << format_double(p.fit.lorentzian_fwhm) << ','
        << format_double(p.fit.gaussian_fwhm) << ',' << (p.fitted ? 1 : 0) << '\n';
  }
}

void write_spectrum_csv(const Spectrum& spectrum, std::ostream& out) {
  out << "# sr_fwhm_Hz=" << format_double(spectrum.sr_fwhm) << '\n';
  out << "# fsr_Hz=" << format_double(spectrum.fsr) << '\n';
  out << "detuning_Hz,intensity\n";
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    out << format_double(spectrum.detuning[i]) << ',' << format_double(spectrum.intensity[i]) << '\n';
  }
}

void write_fit_report(const LineshapeFit& fit, std::ostream& out) {
  auto kv = [&](const char* k, double v) { out << k << '=' << format_double(v) << '\n'; };
  kv("lorentzian_fwhm_Hz", fit.lorentzian_fwhm);
  kv("lorentzian_fwhm_uncertainty_Hz", fit.lorentzian_uncertainty);
  out << "lorentzian_fixed=" << (fit.lorentzian_fixed ? 1 : 0) << '\n';
  kv("gaussian_fwhm_Hz", fit.gaussian_fwhm);
  kv("gaussian_fwhm_uncertainty_Hz", fit.gaussian_uncertainty);
  kv("total_fwhm_Hz", fit.total_fwhm);
  kv("total_fwhm_uncertainty_Hz", fit.total_uncertainty);
  kv("amplitude", fit.amplitude);
  kv("amplitude_uncertainty", fit.amplitude_uncertainty);
  kv("center_Hz", fit.center);
  kv("center_uncertainty_Hz", fit.center_uncertainty);
  kv("offset", fit.offset);
  kv("offset_uncertainty", fit.offset_uncertainty);
  kv("residual_norm", fit.residual_norm);
  out << "resolution_limited=" << (fit.resolution_limited ? 1 : 0) << '\n';
}

}  // namespace qdot
