#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "qdot/emitter.hpp"
#include "qdot/presets.hpp"

using namespace qdot;

namespace {

constexpr double pi = std::numbers::pi;

EmitterConfig quiet() {
  EmitterConfig c;
  c.plateau.cotunnel_rate_edge = 0.0;
  return c;
}

}  // namespace

TEST_CASE("stark shift is linear in gate voltage") {
  EmitterConfig c = quiet();
  c.base_frequency = 3e9;
  CHECK(stark_frequency(c, c.reference_voltage) == 3e9);
  CHECK(stark_frequency(c, c.reference_voltage - 0.1) - 3e9 == doctest::Approx(-7.27e9));
}

TEST_CASE("stark slope is recovered from a simulated voltage map") {
  EmitterConfig c = calibrated_dot();
  std::vector<double> v, f;
  for (int i = 0; i <= 6; ++i) {
    const double volt = -0.70 + 0.05 * i;
    const TagStream s = simulate_emission(c, volt, pi, 2e-3, 100 + i);
    double sum = 0;
    for (double x : s.truth_frequencies()) sum += x;
    v.push_back(volt);
    f.push_back(sum / static_cast<double>(s.size()));
  }
  double mv = 0, mf = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    mv += v[i] / v.size();
    mf += f[i] / f.size();
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sxy += (v[i] - mv) * (f[i] - mf);
    sxx += (v[i] - mv) * (v[i] - mv);
  }
  CHECK(sxy / sxx == doctest::Approx(72.7e9).epsilon(0.006));
}

TEST_CASE("cotunneling vanishes at the plateau centre and stays bounded") {
  PlateauParams p;
  p.cotunnel_rate_edge = 1e9;
  CHECK(cotunnel_rate(p, p.center_voltage) == 0.0);
  CHECK(cotunnel_rate(p, p.center_voltage + p.half_width) == doctest::Approx(1e9));
  double last = 0.0;
  for (double u = 0.0; u < 5.0; u += 0.01) {
    const double r = cotunnel_rate(p, p.center_voltage + u);
    CHECK(r >= last);
    CHECK(r <= 2e9);
    CHECK(cotunnel_rate(p, p.center_voltage - u) == doctest::Approx(r));
    last = r;
  }
  CHECK(cotunnel_rate(p, 1e6) == doctest::Approx(2e9));
}

TEST_CASE("brightness peaks at the plateau centre") {
  EmitterConfig c = calibrated_dot();
  const double centre = emission_probability(c, -0.570, pi);
  for (double v : {-0.70, -0.62, -0.52, -0.45, -0.40}) CHECK(emission_probability(c, v, pi) < centre);
}

TEST_CASE("pulse occupation follows the Rabi law") {
  CHECK(pulse_occupation(pi, 0.85) == doctest::Approx(0.85));
  CHECK(pulse_occupation(0.0, 0.85) == 0.0);
  CHECK(pulse_occupation(2 * pi, 0.85) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pulse_occupation(3 * pi, 0.85) == doctest::Approx(0.85));
  CHECK_THROWS(pulse_occupation(-1.0, 0.85));
}

TEST_CASE("rabi curve at multiples of pi") {
  EmitterConfig c = quiet();
  c.collection_efficiency = 0.3;
  const auto pts = rabi_curve(c, {0, pi, 2 * pi, 3 * pi}, 1'000'000, 5);
  const double expect[] = {0.0, 0.85 * 0.3, 0.0, 0.85 * 0.3};
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(std::max(expect[i], 1e-6) / 1e6);
    CHECK(std::abs(pts[i].mean_counts - expect[i]) < 5 * sd);
  }
  CHECK(pts[1].sqrt_power == doctest::Approx(1.0));
}

TEST_CASE("rabi curve converges to the occupation") {
  EmitterConfig c = quiet();
  std::vector<double> areas;
  for (int i = 0; i <= 20; ++i) areas.push_back(0.2 * i);
  const auto pts = rabi_curve(c, areas, 100'000'000, 8);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const double expect = pulse_occupation(areas[i], 0.85);
    CHECK(std::abs(pts[i].mean_counts - expect) <= 5.0 * std::sqrt(expect / 1e8) + 1e-12);
  }
}

TEST_CASE("rabi maximum sits at pi") {
  EmitterConfig c = quiet();
  const double step = 0.02;
  std::vector<double> areas;
  for (double a = pi - 0.3; a <= pi + 0.3; a += step) areas.push_back(a);
  const auto pts = rabi_curve(c, areas, 2'000'000'000, 3);
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].mean_counts > pts[best].mean_counts) best = i;
  }
  CHECK(std::abs(areas[best] - pi) <= 2 * step);
}

TEST_CASE("charge windows") {
  ChargeWindows w;
  CHECK(charge_state(w, -0.57) == Species::trion);
  CHECK(charge_state(w, -0.9) == Species::exciton);
  CHECK(charge_state(w, -2.0) == Species::none);
  CHECK(charge_state(w, 0.5) == Species::none);
  CHECK(charge_state(w, w.trion_min) == Species::trion);
  CHECK(charge_state(w, w.trion_max) == Species::none);
  CHECK(charge_state(w, w.exciton_max) == Species::trion);
  EmitterConfig c = quiet();
  CHECK(emission_probability(c, -2.0, pi) == 0.0);
}

TEST_CASE("g2 relation matches enumeration of per-pulse photon numbers") {
  for (double p : {0.3, 0.85, 1.0}) {
    for (double r : {0.0, 0.01, 0.1, 0.5}) {
      const double prob[3] = {1 - p, p * (1 - r), p * r};
      double n = 0, nn = 0;
      for (int k = 0; k < 3; ++k) {
        n += k * prob[k];
        nn += k * (k - 1) * prob[k];
      }
      CHECK(g2_zero_from_reexcitation(r, p) == doctest::Approx(nn / (n * n)));
    }
  }
  const double r = reexcitation_for_g2(0.028, 0.85);
  CHECK(g2_zero_from_reexcitation(r, 0.85) == doctest::Approx(0.028));
}

TEST_CASE("mean emission delay equals the lifetime") {
  EmitterConfig c = quiet();
  const TagStream s = simulate_emission(c, -0.57, pi, 0.02, 17);
  REQUIRE(s.size() > 1'000'000);
  const double period = s.meta_number("rep_period_ps");
  double sum = 0;
  for (TimePs t : s.timestamps()) {
    const double k = std::floor((static_cast<double>(t) + 0.5) / period);
    sum += static_cast<double>(t) - std::round(k * period);
  }
  CHECK(sum / s.size() * 1e-12 == doctest::Approx(652e-12).epsilon(0.01));
}

TEST_CASE("noise-free emitter has a single frequency") {
  EmitterConfig c = quiet();
  const TagStream s = simulate_emission(c, -0.57, pi, 1e-4, 2);
  REQUIRE(!s.empty());
  for (double f : s.truth_frequencies()) CHECK(f == s.truth_frequencies().front());
}

TEST_CASE("OU marginal variance and autocorrelation") {
  EmitterConfig c = quiet();
  c.diffusion.stationary_std = 100e6;
  c.diffusion.correlation_time = 20e-9;
  const TagStream s = simulate_emission(c, -0.57, pi, 0.03, 21);
  const auto& f = s.truth_frequencies();
  const auto& t = s.timestamps();
  double sum = 0, sum2 = 0;
  for (double x : f) {
    sum += x;
    sum2 += x * x;
  }
  const double n = static_cast<double>(f.size());
  const double var = sum2 / n - (sum / n) * (sum / n);
  CHECK(std::sqrt(var) == doctest::Approx(100e6).epsilon(0.015));

  // Products of successive photons against the exact correlation at their gap.
  double prod = 0, model = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 1; i < f.size(); ++i) {
    const double dt = static_cast<double>(t[i] - t[i - 1]) * 1e-12;
    if (dt < 5e-9 || dt > 60e-9) continue;
    prod += f[i] * f[i - 1];
    model += var * std::exp(-dt / c.diffusion.correlation_time);
    ++pairs;
  }
  REQUIRE(pairs > 100000);
  CHECK(prod / model == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("at most two photons per pulse, two only with re-excitation") {
  EmitterConfig c = quiet();
  auto max_per_pulse = [](const TagStream& s) {
    const double period = s.meta_number("rep_period_ps");
    std::map<long long, int> n;
    int most = 0;
    for (TimePs t : s.timestamps()) most = std::max(most, ++n[static_cast<long long>(std::floor((t + 0.5) / period))]);
    return most;
  };
  CHECK(max_per_pulse(simulate_emission(c, -0.57, pi, 2e-3, 1)) == 1);
  c.reexcitation_prob = 0.3;
  CHECK(max_per_pulse(simulate_emission(c, -0.57, pi, 2e-3, 1)) == 2);
}

TEST_CASE("double pulses use two channels with the configured spacing") {
  EmitterConfig c = with_double_pulses(quiet(), 4e-9);
  const TagStream s = simulate_emission(c, -0.57, pi, 1e-3, 3);
  CHECK(s.channel_count() == 2);
  CHECK(s.meta("pulse_separation_ps").value() == "4000");
  const double ratio = static_cast<double>(s.count(1)) / static_cast<double>(s.count(0));
  CHECK(ratio == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("emission is deterministic per seed") {
  const EmitterConfig c = calibrated_dot();
  CHECK(simulate_emission(c, -0.5, pi, 1e-3, 9) == simulate_emission(c, -0.5, pi, 1e-3, 9));
  CHECK_FALSE(simulate_emission(c, -0.5, pi, 1e-3, 9) == simulate_emission(c, -0.5, pi, 1e-3, 10));
}

TEST_CASE("invalid configuration is rejected") {
  EmitterConfig c = quiet();
  c.lifetime = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS(simulate_emission(quiet(), -0.57, pi, 0.0, 1));
}
