#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "qdot/emitter.hpp"
#include "qdot/numeric.hpp"
#include "qdot/presets.hpp"
#include "qdot/random.hpp"
#include "qdot/spectroscopy.hpp"

using namespace qdot;

namespace {

constexpr double pi = std::numbers::pi;

// Full width at half maximum by linear interpolation of the crossings.
double fwhm_of(const Spectrum& s) {
  const auto& x = s.detuning;
  const auto& y = s.intensity;
  const auto top = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double half = 0.5 * y[top];
  std::size_t lo = top, hi = top;
  while (lo > 0 && y[lo] > half) --lo;
  while (hi + 1 < y.size() && y[hi] > half) ++hi;
  const double left = x[lo] + (half - y[lo]) * (x[lo + 1] - x[lo]) / (y[lo + 1] - y[lo]);
  const double right = x[hi - 1] + (half - y[hi - 1]) * (x[hi] - x[hi - 1]) / (y[hi] - y[hi - 1]);
  return right - left;
}

Spectrum analytic(double L, double G, double lo = -5e9, double hi = 5e9, double step = 5e6) {
  Spectrum s;
  s.detuning = uniform_grid(lo, hi, step);
  for (double x : s.detuning) s.intensity.push_back(voigt(x, L, G));
  return s;
}

TagStream truth_at(const std::vector<double>& freqs, double dephasing = 0.0) {
  TagStreamBuilder b({"emission"}, static_cast<TimePs>(freqs.size()) * 1000 + 1, true);
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    PhotonTag t;
    t.timestamp = static_cast<TimePs>(i) * 1000;
    t.truth_frequency = freqs[i];
    t.truth_dephasing_rate = dephasing;
    b.add(t);
  }
  b.set_meta("lifetime_s", "6.52e-10");
  return std::move(b).build();
}

// Olivero-Longbothum approximation, accurate to ~0.02 %.
double voigt_fwhm_approx(double L, double G) { return 0.5346 * L + std::sqrt(0.2166 * L * L + G * G); }

}  // namespace

TEST_CASE("transform limit") {
  CHECK(ft_limit(652e-12) == doctest::Approx(244.1e6).epsilon(1e-3));
  CHECK(ft_limit(1e-9 / (2 * pi)) == doctest::Approx(1e9).epsilon(1e-12));
  CHECK(ft_limit(1e12) < 1e-12);
  for (double tau : {1e-12, 3e-10, 652e-12, 1e-6}) CHECK(ft_limit(tau) * 2 * pi * tau == doctest::Approx(1.0));
  CHECK_THROWS(ft_limit(0.0));
}

TEST_CASE("voigt width limits and inversion") {
  CHECK(voigt_fwhm(250e6, 0.0) == 250e6);
  CHECK(voigt_fwhm(0.0, 300e6) == 300e6);
  CHECK(voigt_fwhm(250e6, 300e6) == doctest::Approx(voigt_fwhm_approx(250e6, 300e6)).epsilon(0.005));
  const double g = gaussian_for_voigt(250e6, 420e6);
  CHECK(g == doctest::Approx(262e6).epsilon(0.005));
  CHECK(voigt_fwhm(250e6, g) == doctest::Approx(420e6).epsilon(1e-9));
  // Against a direct half-maximum measurement of the profile.
  const Spectrum s = analytic(250e6, g, -3e9, 3e9, 0.5e6);
  CHECK(fwhm_of(s) == doctest::Approx(420e6).epsilon(1e-3));
}

TEST_CASE("voigt width is monotone in each component") {
  double last = 0.0;
  for (double L = 0.0; L < 2e9; L += 1e8) {
    const double w = voigt_fwhm(L, 300e6);
    CHECK(w >= last);
    last = w;
  }
  last = 0.0;
  for (double G = 0.0; G < 2e9; G += 1e8) {
    const double w = voigt_fwhm(250e6, G);
    CHECK(w >= last);
    last = w;
  }
}

TEST_CASE("static transform-limited emitter gives the FT-limit Lorentzian") {
  EmitterConfig c;
  const TagStream s = simulate_emission(c, -0.57, pi, 1e-4, 1);
  const Spectrum spec = spectrum_from_truth(s, uniform_grid(-3e9, 3e9, 2e6));
  CHECK(fwhm_of(spec) == doctest::Approx(ft_limit(c.lifetime)).epsilon(0.01));
}

TEST_CASE("OU diffusion gives a Voigt with the stationary Gaussian width") {
  EmitterConfig c;
  c.diffusion.stationary_std = 300e6;
  c.diffusion.correlation_time = 1e-9;
  const TagStream s = simulate_emission(c, -0.57, pi, 0.01, 2);
  const Spectrum spec = spectrum_from_truth(s, uniform_grid(-4e9, 4e9, 10e6));
  FitOptions o;
  o.sr_fwhm = 0.0;
  o.fixed_lorentzian_fwhm = ft_limit(c.lifetime);
  const LineshapeFit f = fit_voigt_sr(spec, o);
  CHECK(f.gaussian_fwhm == doctest::Approx(kGaussFwhmPerSigma * 300e6).epsilon(0.02));
}

TEST_CASE("two species give two resolved peaks") {
  std::vector<double> f(2000, 0.0);
  for (std::size_t i = 1000; i < f.size(); ++i) f[i] = 3e9;
  const Spectrum s = spectrum_from_truth(truth_at(f), uniform_grid(-2e9, 5e9, 5e6));
  auto value_at = [&](double nu) {
    const auto k = static_cast<std::size_t>(std::lround((nu + 2e9) / 5e6));
    return s.intensity[k];
  };
  CHECK(value_at(0.0) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(value_at(3e9) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(value_at(1.5e9) < 0.1);
}

TEST_CASE("FPI response to a narrow line is the SR Lorentzian") {
  Spectrum line;
  line.detuning = uniform_grid(-1e9, 1e9, 1e6);
  line.intensity.assign(line.size(), 0.0);
  line.intensity[1000] = 1.0;
  const Spectrum m = fpi_scan(line, -2e9, 2e9, 2e6);
  CHECK(fwhm_of(m) == doctest::Approx(100e6).epsilon(0.005));
}

TEST_CASE("FPI adds Lorentzian widths") {
  Spectrum line;
  line.detuning = uniform_grid(-7.5e9, 7.5e9, 2e6);
  for (double x : line.detuning) line.intensity.push_back(lorentzian(x, 420e6));
  const Spectrum m = fpi_scan(line, -3e9, 3e9, 5e6);
  CHECK(fwhm_of(m) == doctest::Approx(520e6).epsilon(0.005));
}

TEST_CASE("lines one FSR apart alias onto one peak") {
  Spectrum two;
  two.detuning = uniform_grid(-1e9, 16e9, 1e6);
  two.intensity.assign(two.size(), 0.0);
  two.intensity[1000] = 1.0;
  two.intensity[16000] = 1.0;
  const Spectrum m = fpi_scan(two, -2e9, 2e9, 5e6);
  const auto top = std::max_element(m.intensity.begin(), m.intensity.end()) - m.intensity.begin();
  CHECK(m.detuning[static_cast<std::size_t>(top)] == doctest::Approx(0.0).scale(1e9).epsilon(1e-2));
  CHECK(fwhm_of(m) == doctest::Approx(100e6).epsilon(0.01));
  CHECK_THROWS(fpi_scan(two, -2e9, 2e9, 30e6));
}

TEST_CASE("noise-free synthetic Voigt is recovered to 1 %") {
  const Spectrum m = fpi_scan(analytic(250e6, 262e6, -7.5e9, 7.5e9, 5e6), -5e9, 5e9, 25e6);
  const LineshapeFit f = fit_voigt_sr(m, {});
  CHECK(f.lorentzian_fwhm == doctest::Approx(250e6).epsilon(0.01));
  CHECK(f.gaussian_fwhm == doctest::Approx(262e6).epsilon(0.01));
  CHECK(f.total_fwhm == doctest::Approx(voigt_fwhm(250e6, 262e6)).epsilon(0.01));
  CHECK_FALSE(f.resolution_limited);

  Spectrum scaled = m;
  for (double& v : scaled.intensity) v *= 1234.5;
  const LineshapeFit g = fit_voigt_sr(scaled, {});
  CHECK(g.total_fwhm == doctest::Approx(f.total_fwhm).epsilon(1e-6));
  CHECK(g.amplitude == doctest::Approx(1234.5 * f.amplitude).epsilon(1e-6));
}

TEST_CASE("noisy synthetic Voigt with fixed Lorentzian recovers the Gaussian") {
  Spectrum m = fpi_scan(analytic(250e6, 262e6, -7.5e9, 7.5e9, 5e6), -5e9, 5e9, 25e6);
  Engine rng(4);
  const double peak = *std::max_element(m.intensity.begin(), m.intensity.end());
  std::normal_distribution<double> noise(0.0, 0.01 * peak);
  for (double& v : m.intensity) v = std::max(0.0, v + noise(rng));
  FitOptions o;
  o.fixed_lorentzian_fwhm = 250e6;
  const LineshapeFit f = fit_voigt_sr(m, o);
  CHECK(f.gaussian_fwhm == doctest::Approx(262e6).epsilon(0.05));
  CHECK(f.total_uncertainty > 0.0);
}

TEST_CASE("pure SR response is flagged as resolution limited") {
  Spectrum line;
  line.detuning = uniform_grid(-1e9, 1e9, 1e6);
  line.intensity.assign(line.size(), 0.0);
  line.intensity[1000] = 1.0;
  const Spectrum m = fpi_scan(line, -3e9, 3e9, 10e6);
  const LineshapeFit f = fit_voigt_sr(m, {});
  CHECK(f.total_fwhm < 10e6);
  CHECK(f.resolution_limited);
}

TEST_CASE("tabulated response matches the built-in Lorentzian SR") {
  const Spectrum m = fpi_scan(analytic(250e6, 262e6, -7.5e9, 7.5e9, 5e6), -5e9, 5e9, 25e6);
  FitOptions o;
  for (double x = -1e9; x <= 1e9 + 1; x += 5e6) {
    o.response.offset.push_back(x);
    o.response.value.push_back(lorentzian(x, 100e6));
  }
  const LineshapeFit f = fit_voigt_sr(m, o);
  CHECK(f.total_fwhm == doctest::Approx(voigt_fwhm(250e6, 262e6)).epsilon(0.03));
}

TEST_CASE("calibrated dot with the Lorentzian fixed at 250 MHz") {
  const EmitterConfig c = calibrated_dot();
  SweepOptions o;
  o.photons = 2e6;
  o.fixed_lorentzian_fwhm = 250e6;
  const SweepPoint p = fpi_measurement(c, -0.570, o, 3);
  REQUIRE(p.fitted);
  CHECK(p.fit.total_fwhm == doctest::Approx(420e6).epsilon(30.0 / 420.0));
  CHECK(p.fit.total_fwhm / ft_limit(c.lifetime) == doctest::Approx(1.68).epsilon(0.12 / 1.68));
}

TEST_CASE("voltage sweep: narrowest and brightest at the plateau centre") {
  const EmitterConfig c = calibrated_dot();
  SweepOptions o;
  o.photons = 5e5;
  std::vector<double> v;
  for (int i = 0; i <= 8; ++i) v.push_back(-0.65 + 0.02 * i);
  const auto sweep = voltage_sweep(c, v, o, 5);
  std::size_t narrow = 0, bright = 0;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    REQUIRE(sweep[i].fitted);
    if (sweep[i].fit.total_fwhm < sweep[narrow].fit.total_fwhm) narrow = i;
    if (sweep[i].intensity > sweep[bright].intensity) bright = i;
  }
  CHECK(sweep[narrow].voltage == doctest::Approx(-0.57));
  CHECK(sweep[bright].voltage == doctest::Approx(-0.57));

  const auto off = voltage_sweep(c, {-2.0}, o, 5);
  CHECK_FALSE(off[0].fitted);
  CHECK(off[0].species == Species::none);
}
