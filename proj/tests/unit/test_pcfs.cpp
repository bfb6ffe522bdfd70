#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>

#include "qdot/emitter.hpp"
#include "qdot/pcfs.hpp"
#include "qdot/presets.hpp"
#include "qdot/random.hpp"
#include "qdot/spectroscopy.hpp"

using namespace qdot;

namespace {

constexpr double pi = std::numbers::pi;

// Poisson arrivals with frequencies drawn by `freq`.
template <class F>
TagStream poisson_truth(double rate, double duration, double lifetime, std::uint64_t seed, F freq) {
  Engine rng(seed);
  std::exponential_distribution<double> gap(rate);
  TagStreamBuilder b({"emission"}, to_ps(duration), true);
  for (double t = gap(rng); t < duration; t += gap(rng)) {
    PhotonTag tag;
    tag.timestamp = to_ps(t);
    tag.truth_frequency = freq(rng);
    b.add(tag);
  }
  b.set_meta("lifetime_s", format_double(lifetime));
  return std::move(b).build();
}

PCFSScanConfig short_scan() {
  PCFSScanConfig c;
  c.tau_min = 10e-9;
  c.tau_max = 10e-6;
  c.bins_per_decade = 3;
  c.dither_rate = 1000.0;
  return c;
}

FringeContrast synthetic_contrast(double opd, double fwhm, const PCFSScanConfig& scan) {
  FringeContrast fc;
  fc.opd = opd;
  fc.tau_edges = scan.tau_edges();
  const std::size_t nb = fc.tau_edges.size() - 1;
  fc.c2.assign(nb, std::exp(-2.0 * pi * fwhm * opd / kSpeedOfLight));
  fc.c2_uncertainty.assign(nb, 0.0);
  fc.low_statistics.assign(nb, false);
  fc.pairs_all.assign(nb, 1'000'000);
  fc.pairs_cross.assign(nb, 0);
  fc.g_cross.assign(nb, 1.0);
  return fc;
}

SpectralCorrelation synthetic_correlation(double fwhm, const PCFSScanConfig& scan) {
  std::vector<FringeContrast> fcs;
  for (double opd : scan.opd_positions()) fcs.push_back(synthetic_contrast(opd, fwhm, scan));
  return spectral_correlation(fcs, scan);
}

}  // namespace

TEST_CASE("scan grid") {
  const PcfsGrid g = pcfs_grid(PCFSScanConfig{});
  CHECK(g.resolution == doctest::Approx(kSpeedOfLight / 0.372));
  CHECK(g.resolution == doctest::Approx(806e6).epsilon(1e-3));
  CHECK(g.range == doctest::Approx(37.474e9).epsilon(1e-4));
  CHECK(g.positions == 94);
  const auto edges = PCFSScanConfig{}.tau_edges();
  CHECK(edges.size() == 31);
  CHECK(edges.front() == doctest::Approx(10e-9));
  CHECK(edges.back() == doctest::Approx(10e-3));
  PCFSScanConfig bad;
  bad.opd_step = 1.0;
  CHECK_THROWS(pcfs_grid(bad));
}

TEST_CASE("zero path difference gives full contrast") {
  const PCFSScanConfig scan = short_scan();
  const TagStream s = poisson_truth(1e8, 0.01, 652e-12, 1, [](Engine&) { return 0.0; });
  const FringeContrast fc = mzi_dither_correlate(s, 0.0, scan, 2);
  for (std::size_t k = 0; k < fc.c2.size(); ++k) {
    CHECK(fc.c2[k] == doctest::Approx(1.0).epsilon(4.0 * fc.c2_uncertainty[k] + 0.01));
  }
}

TEST_CASE("static line contrast decays exponentially with path difference") {
  const PCFSScanConfig scan = short_scan();
  const double lifetime = 652e-12;
  const TagStream s = poisson_truth(1e8, 0.01, lifetime, 3, [](Engine&) { return 0.0; });
  const double width = ft_limit(lifetime);
  for (double opd : {0.1, 0.2, 2.0}) {
    const FringeContrast fc = mzi_dither_correlate(s, opd, scan, 4);
    const double expected = std::exp(-2.0 * pi * width * opd / kSpeedOfLight);
    CHECK(fc.c2[0] == doctest::Approx(expected).epsilon(4.0 * fc.c2_uncertainty[0] + 0.01));
  }
}

TEST_CASE("two-frequency line beats in the contrast") {
  const PCFSScanConfig scan = short_scan();
  const double split = 2e9;
  const TagStream s = poisson_truth(1e8, 0.01, 1e-6, 5, [&](Engine& r) {
    return std::bernoulli_distribution(0.5)(r) ? 0.5 * split : -0.5 * split;
  });
  for (double opd : {0.02, 0.04, 0.06}) {
    const FringeContrast fc = mzi_dither_correlate(s, opd, scan, 6);
    const double v2 = std::exp(-2.0 * pi * ft_limit(1e-6) * opd / kSpeedOfLight);
    const double expected = v2 * 0.5 * (1.0 + std::cos(2.0 * pi * split * opd / kSpeedOfLight));
    CHECK(fc.c2[1] == doctest::Approx(expected).epsilon(4.0 * fc.c2_uncertainty[1] + 0.01));
  }
}

TEST_CASE("diffusing line loses contrast at long pair separation") {
  EmitterConfig c = pcfs_dot({}, 0.3);
  c.diffusion.stationary_std = 1e9;
  c.diffusion.correlation_time = 100e-6;
  c.reexcitation_prob = 0.0;
  PCFSScanConfig scan;
  scan.tau_min = 10e-9;
  scan.tau_max = 1e-3;
  scan.bins_per_decade = 1;
  scan.dither_rate = 100.0;
  const double opd = 0.04;
  const TagStream s = simulate_emission(c, -0.57, pi, 0.05, 7);
  const FringeContrast fc = mzi_dither_correlate(s, opd, scan, 8);
  const double k = 2.0 * pi * opd / kSpeedOfLight;
  const double v2 = std::exp(-2.0 * pi * homogeneous_fwhm(c, -0.57) * opd / kSpeedOfLight);
  for (std::size_t b = 0; b < fc.c2.size(); ++b) {
    const double tau = std::sqrt(fc.tau_edges[b] * fc.tau_edges[b + 1]);
    const double var = 2.0 * 1e18 * (1.0 - std::exp(-tau / c.diffusion.correlation_time));
    const double expected = v2 * std::exp(-0.5 * k * k * var);
    CHECK(fc.c2[b] == doctest::Approx(expected).epsilon(4.0 * fc.c2_uncertainty[b] + 0.03));
  }
  CHECK(fc.c2.front() > 1.8 * fc.c2.back());
}

TEST_CASE("spectral correlation is symmetric with unit area") {
  PCFSScanConfig scan;
  const SpectralCorrelation sc = synthetic_correlation(1e9, scan);
  REQUIRE(!sc.p.empty());
  const auto& p = sc.p[0];
  double area = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] == doctest::Approx(p[p.size() - 1 - i]).epsilon(1e-9));
    CHECK(p[i] >= 0.0);
    area += p[i] * scan.zeta_step;
  }
  CHECK(area == doctest::Approx(1.0));
}

TEST_CASE("exponential envelope recovers the line width") {
  PCFSScanConfig scan;
  for (double w : {1e9, 2e9}) {
    const PCFSResult r = linewidth_vs_tau(synthetic_correlation(w, scan));
    for (std::size_t k = 0; k < r.tau.size(); ++k) {
      CHECK(r.linewidth_deconvolved[k] == doctest::Approx(w).epsilon(0.01));
      CHECK(r.linewidth[k] == doctest::Approx(w).epsilon(0.15));
      CHECK(r.flags[k] == kPcfsOk);
    }
  }
}

TEST_CASE("narrow line is flagged as resolution limited") {
  PCFSScanConfig scan;
  const PCFSResult r = linewidth_vs_tau(synthetic_correlation(100e6, scan));
  CHECK(r.any_flag(kPcfsResolutionLimited));

  const SpectralCorrelation mono = synthetic_correlation(0.0, scan);
  const auto& p = mono.p[0];
  const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  CHECK(mono.zeta[top] == 0.0);
  CHECK(linewidth_vs_tau(mono).linewidth_deconvolved[0] < 0.5 * mono.resolution);
}

TEST_CASE("sparse bins are flagged") {
  PCFSScanConfig scan = short_scan();
  scan.min_pairs = 1e12;
  const TagStream s = poisson_truth(1e7, 0.005, 652e-12, 9, [](Engine&) { return 0.0; });
  const FringeContrast fc = mzi_dither_correlate(s, 0.0, scan, 1);
  CHECK(fc.low_statistics[0]);
  std::vector<FringeContrast> fcs{fc, mzi_dither_correlate(s, scan.opd_step, scan, 2)};
  const SpectralCorrelation sc = spectral_correlation(fcs, scan);
  CHECK(linewidth_vs_tau(sc).any_flag(kPcfsLowStatistics));
}

TEST_CASE("non-uniform path differences are rejected") {
  PCFSScanConfig scan;
  std::vector<FringeContrast> fcs{synthetic_contrast(0.0, 1e9, scan), synthetic_contrast(0.004, 1e9, scan),
                                  synthetic_contrast(0.010, 1e9, scan)};
  CHECK_THROWS(spectral_correlation(fcs, scan));
}

TEST_CASE("pair difference histogram matches enumeration") {
  const TagStream s = poisson_truth(1e8, 2e-5, 652e-12, 10, [](Engine& r) {
    return std::normal_distribution<double>(0.0, 1e9)(r);
  });
  const std::vector<double> zeta = uniform_grid(-5e9, 5e9, 1e8);
  const double lo = 10e-9, hi = 100e-9;
  const auto h = pair_difference_histogram(s, lo, hi, zeta);

  std::vector<double> ref(zeta.size(), 0.0);
  double total = 0.0;
  const auto& ts = s.timestamps();
  const auto& nu = s.truth_frequencies();
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      const TimePs d = ts[j] - ts[i];
      if (d < to_ps(lo) || d >= to_ps(hi)) continue;
      for (double diff : {nu[j] - nu[i], nu[i] - nu[j]}) {
        total += 1.0;
        const long idx = std::lround((diff + 5e9) / 1e8);
        if (idx >= 0 && idx < static_cast<long>(zeta.size()) && std::abs(diff - zeta[idx]) <= 0.5e8) ref[idx] += 1.0;
      }
    }
  }
  REQUIRE(total > 1000);
  for (std::size_t k = 0; k < zeta.size(); ++k) CHECK(h[k] == doctest::Approx(ref[k] / (total * 1e8)));
}

TEST_CASE("csv writers emit one row per bin") {
  PCFSScanConfig scan;
  const SpectralCorrelation sc = synthetic_correlation(1e9, scan);
  const PCFSResult r = linewidth_vs_tau(sc);
  std::ostringstream a, b;
  write_linewidth_csv(r, a);
  write_spectral_correlation_csv(sc, b);
  const auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  CHECK(lines(a.str()) == static_cast<long>(r.tau.size()) + 3);
  CHECK(lines(b.str()) == static_cast<long>(sc.zeta.size()) + 3);
}
