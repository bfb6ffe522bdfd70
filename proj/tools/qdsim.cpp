#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qdot/config.hpp"
#include "qdot/correlator.hpp"
#include "qdot/emitter.hpp"
#include "qdot/interference.hpp"
#include "qdot/pcfs.hpp"
#include "qdot/photonstream.hpp"
#include "qdot/presets.hpp"
#include "qdot/random.hpp"
#include "qdot/spectroscopy.hpp"

#ifndef QDSIM_VERSION
#define QDSIM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace qdot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 2;
constexpr int kExitFlagged = 3;
constexpr unsigned kFlagMask = kPcfsResolutionLimited | kPcfsMisfit | kPcfsLowStatistics;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out = ".";
  unsigned threads = 1;
  bool verbose = false;
};

Globals g;

void log(const std::string& msg) {
  if (g.verbose) std::cerr << "qdsim: " << msg << '\n';
}

EmitterConfig load_emitter(EmitterConfig fallback) {
  if (g.config_path.empty()) return fallback;
  EmitterConfig c = EmitterConfig::from_config(KeyValueConfig::load(g.config_path));
  c.validate();
  return c;
}

fs::path out_path(const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

// Write to a sibling temp file, then rename over the target.
void write_atomic(const std::string& name, const std::function<void(std::ostream&)>& body) {
  const fs::path target = out_path(name);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string());
    body(f);
    f.flush();
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
  log("wrote " + target.string());
}

void write_stream_atomic(const std::string& name, const TagStream& s) {
  write_atomic(name, [&](std::ostream& o) { write_stream(s, o); });
}

void report_header(std::ostream& o, const std::string& op, const EmitterConfig& c) {
  o << "tool=qdsim\n"
    << "tool_version=" << QDSIM_VERSION << '\n'
    << "op=" << op << '\n'
    << "seed=" << g.seed << '\n'
    << "config_hash=" << c.hash() << '\n';
}

DetectorModel detector_by_name(const std::string& name) {
  if (name == "standard") return DetectorModel::standard_spad();
  if (name == "fast") return DetectorModel::fast_spad();
  if (name == "ideal") return DetectorModel::ideal();
  throw std::invalid_argument("unknown detector '" + name + "' (standard, fast, ideal)");
}

double rep_period_of(const TagStream& s, double fallback) {
  if (auto v = s.meta("rep_period_ps")) return std::stod(*v) / kPsPerSecond;
  return fallback;
}

// ---- simulate ----

struct SimulateArgs {
  double duration = 1.0;
  double voltage = -0.570;
  double pulse_area = std::numbers::pi;
  double double_pulse = 0.0;
  std::string detector = "standard";
  bool hbt = true;
};

int cmd_simulate(const SimulateArgs& a) {
  if (!(a.duration > 0.0)) throw std::invalid_argument("duration must be > 0");
  EmitterConfig c = load_emitter(calibrated_dot());
  if (a.double_pulse > 0.0) c = with_double_pulses(c, a.double_pulse);
  log("simulating " + format_double(a.duration) + " s at " + format_double(a.voltage) + " V");
  const TagStream truth = simulate_emission(c, a.voltage, a.pulse_area, a.duration, derive_seed(g.seed, "cli.emit"));
  const TagStream routed = a.hbt ? beam_split(truth, derive_seed(g.seed, "cli.split")) : truth;
  const TagStream detected =
      apply_detector(routed.without_truth(), detector_by_name(a.detector), derive_seed(g.seed, "cli.detect"));
  write_stream_atomic("truth.qtag", truth);
  write_stream_atomic("detected.qtag", detected);
  write_atomic("manifest.txt", [&](std::ostream& o) {
    report_header(o, "simulate", c);
    o << "duration_s=" << format_double(a.duration) << '\n'
      << "voltage_V=" << format_double(a.voltage) << '\n'
      << "pulse_area_rad=" << format_double(a.pulse_area) << '\n'
      << "detector=" << a.detector << '\n'
      << "truth_count=" << truth.size() << '\n'
      << "detected_count=" << detected.size() << '\n';
    for (std::size_t ch = 0; ch < detected.channel_count(); ++ch) {
      o << "detected_count." << detected.channel_labels()[ch] << '=' << detected.count(static_cast<std::uint8_t>(ch))
        << '\n';
    }
  });
  std::cout << "truth " << truth.size() << " detected " << detected.size() << '\n';
  return kExitOk;
}

// ---- g2 ----

struct G2Args {
  std::string input;
  double duration = 0.2;
  double voltage = -0.570;
  double bin_width = 64e-12;
  double rep_period = 1.0 / kRepRateStandard;
  int side_peaks = kDefaultSidePeaks;
  std::string detector = "standard";
};

int cmd_g2(const G2Args& a) {
  EmitterConfig c = load_emitter(calibrated_dot());
  TagStream detected;
  if (!a.input.empty()) {
    detected = read_stream_file(a.input);
  } else {
    const TagStream truth = simulate_emission(c, a.voltage, std::numbers::pi, a.duration, derive_seed(g.seed, "cli.emit"));
    detected = apply_detector(beam_split(truth, derive_seed(g.seed, "cli.split")).without_truth(),
                              detector_by_name(a.detector), derive_seed(g.seed, "cli.detect"));
  }
  if (detected.channel_count() < 2) throw std::invalid_argument("g2 needs a stream with two detector channels");
  const double period = rep_period_of(detected, a.rep_period);
  const double span = (a.side_peaks + 1.5) * period;
  const auto h = correlate(detected, {0}, {1}, a.bin_width, -span, span, g.threads);
  const G2Result r = g2_pulsed(h, period, a.side_peaks);
  write_atomic("g2_histogram.csv", [&](std::ostream& o) { write_histogram_csv(h, o); });
  write_atomic("g2_report.txt", [&](std::ostream& o) {
    report_header(o, "g2", c);
    o << "input=" << (a.input.empty() ? "end-to-end" : a.input) << '\n'
      << "rep_period_s=" << format_double(period) << '\n'
      << "bin_width_s=" << format_double(to_seconds(h.bin_width)) << '\n'
      << "side_peaks=" << r.side_peaks << '\n'
      << "side_mean=" << format_double(r.side_mean) << '\n'
      << "g2_zero=" << format_double(r.g2_zero) << '\n'
      << "g2_zero_uncertainty=" << format_double(r.g2_zero_uncertainty) << '\n'
      << "empty_channels=" << (h.empty_channels ? 1 : 0) << '\n';
  });
  std::printf("g2(0) = %.4f +/- %.4f\n", r.g2_zero, r.g2_zero_uncertainty);
  return h.empty_channels ? kExitFlagged : kExitOk;
}

// ---- hom ----

struct HomArgs {
  std::string input;
  double delay = 2e-9;
  double duration = 0.05;
  double voltage = -0.570;
  std::string polarization = "parallel";
  std::string method = "cluster_fit";
  std::string detector = "standard";
  double bin_width = 64e-12;
};

int cmd_hom(const HomArgs& a) {
  EmitterConfig c = load_emitter(calibrated_dot());
  TagStream truth;
  if (!a.input.empty()) {
    truth = read_stream_file(a.input);
  } else {
    c = with_double_pulses(c, a.delay);
    truth = simulate_emission(c, a.voltage, std::numbers::pi, a.duration, derive_seed(g.seed, "cli.emit"));
  }
  HomOptions opt;
  opt.detector = detector_by_name(a.detector);
  opt.bin_width = a.bin_width;
  opt.threads = g.threads;
  if (a.method == "window") {
    opt.method = VisibilityMethod::window;
  } else if (a.method != "cluster_fit") {
    throw std::invalid_argument("unknown method '" + a.method + "' (window, cluster_fit)");
  }
  Polarization pol = Polarization::parallel;
  if (a.polarization == "orthogonal") {
    pol = Polarization::orthogonal;
  } else if (a.polarization != "parallel") {
    throw std::invalid_argument("unknown polarization '" + a.polarization + "'");
  }
  const TPIResult r = hom_simulate(truth, a.delay, pol, derive_seed(g.seed, "cli.hom"), opt);
  write_atomic("hom_parallel.csv", [&](std::ostream& o) { write_histogram_csv(r.parallel_histogram, o); });
  write_atomic("hom_orthogonal.csv", [&](std::ostream& o) { write_histogram_csv(r.orthogonal_histogram, o); });
  write_atomic("hom_report.txt", [&](std::ostream& o) {
    report_header(o, "hom", c);
    o << "voltage_V=" << format_double(a.voltage) << '\n' << "method=" << a.method << '\n';
    write_tpi_report(r, o);
  });
  std::printf("V(%.3g ns) = %.4f +/- %.4f\n", a.delay * 1e9, r.visibility, r.uncertainty);
  return kExitOk;
}

// ---- fpi ----

struct FpiArgs {
  double voltage = -0.570;
  double photons = 1e7;
  double peak_counts = 2e4;
  std::optional<double> fixed_l;
};

int cmd_fpi(const FpiArgs& a) {
  EmitterConfig c = load_emitter(calibrated_dot());
  SweepOptions o;
  o.photons = a.photons;
  o.peak_counts = a.peak_counts;
  o.fixed_lorentzian_fwhm = a.fixed_l;
  Spectrum trace;
  const SweepPoint p = fpi_measurement(c, a.voltage, o, derive_seed(g.seed, "cli.fpi"), &trace);
  if (!p.fitted) throw std::invalid_argument("no emission at " + format_double(a.voltage) + " V");
  write_atomic("fpi_spectrum.csv", [&](std::ostream& os) { write_spectrum_csv(trace, os); });
  write_atomic("fpi_fit.txt", [&](std::ostream& os) {
    report_header(os, "fpi", c);
    os << "voltage_V=" << format_double(a.voltage) << '\n'
       << "ft_limit_Hz=" << format_double(ft_limit(c.lifetime)) << '\n'
       << "broadening_factor=" << format_double(p.fit.total_fwhm / ft_limit(c.lifetime)) << '\n'
       << "intensity_per_s=" << format_double(p.intensity) << '\n';
    write_fit_report(p.fit, os);
  });
  std::printf("FWHM = %.1f +/- %.1f MHz\n", p.fit.total_fwhm / 1e6, p.fit.total_uncertainty / 1e6);
  return p.fit.resolution_limited ? kExitFlagged : kExitOk;
}

// ---- pcfs ----

struct PcfsArgs {
  std::vector<double> voltages{-0.570};
  double max_opd = 0.372;
  double opd_step = 0.004;
  double acquisition = 0.0;
  double collection = 0.009;
};

int cmd_pcfs(const PcfsArgs& a) {
  EmitterConfig c = load_emitter(pcfs_dot({}, a.collection));
  PCFSScanConfig scan;
  scan.max_opd = a.max_opd;
  scan.opd_step = a.opd_step;
  scan.acquisition_time = a.acquisition;
  scan.validate();
  PcfsRunOptions opt;
  opt.threads = g.threads;
  std::vector<SpectralCorrelation> sc;
  const auto results = pcfs_run(scan, c, a.voltages, g.seed, opt, &sc);
  bool flagged = false;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::string tag = "pcfs_" + std::to_string(i);
    write_atomic(tag + "_spectral_correlation.csv", [&](std::ostream& o) { write_spectral_correlation_csv(sc[i], o); });
    write_atomic(tag + "_linewidth.csv", [&](std::ostream& o) { write_linewidth_csv(results[i], o); });
    flagged = flagged || results[i].any_flag(kFlagMask);
  }
  const PcfsGrid grid = pcfs_grid(scan);
  write_atomic("pcfs_report.txt", [&](std::ostream& o) {
    report_header(o, "pcfs", c);
    o << "resolution_Hz=" << format_double(grid.resolution) << '\n'
      << "range_Hz=" << format_double(grid.range) << '\n'
      << "positions=" << grid.positions << '\n';
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      o << "run." << i << ".voltage_V=" << format_double(r.voltage) << '\n'
        << "run." << i << ".acquisition_s=" << format_double(r.acquisition_time) << '\n'
        << "run." << i << ".long_tau_linewidth_Hz=" << format_double(r.linewidth.back()) << '\n'
        << "run." << i << ".flagged=" << (r.any_flag(kFlagMask) ? 1 : 0) << '\n';
    }
  });
  for (const auto& r : results) {
    std::printf("%.3f V: long-tau linewidth %.1f MHz%s\n", r.voltage, r.linewidth.back() / 1e6,
                r.any_flag(kFlagMask) ? " (flagged)" : "");
  }
  return flagged ? kExitFlagged : kExitOk;
}

// ---- sweep ----

struct SweepArgs {
  double from = -0.70;
  double to = -0.40;
  double step = 0.01;
  double photons = 4e6;
};

int cmd_sweep(const SweepArgs& a) {
  if (!(a.step > 0.0) || !(a.to >= a.from)) throw std::invalid_argument("sweep needs step > 0 and to >= from");
  EmitterConfig c = load_emitter(calibrated_dot());
  std::vector<double> v;
  const auto n = static_cast<int>(std::floor((a.to - a.from) / a.step + 1e-9));
  for (int i = 0; i <= n; ++i) v.push_back(a.from + i * a.step);
  SweepOptions o;
  o.photons = a.photons;
  const auto sweep = voltage_sweep(c, v, o, g.seed);
  write_atomic("sweep.csv", [&](std::ostream& os) { write_sweep_csv(sweep, os); });
  std::size_t narrow = sweep.size(), bright = 0;
  bool flagged = false;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    if (!sweep[i].fitted) continue;
    if (narrow == sweep.size() || sweep[i].fit.total_fwhm < sweep[narrow].fit.total_fwhm) narrow = i;
    if (sweep[i].intensity > sweep[bright].intensity) bright = i;
    flagged = flagged || sweep[i].fit.resolution_limited;
  }
  if (narrow == sweep.size()) throw std::invalid_argument("no voltage in the sweep emits");
  write_atomic("sweep_report.txt", [&](std::ostream& os) {
    report_header(os, "sweep", c);
    os << "points=" << sweep.size() << '\n'
       << "min_linewidth_voltage_V=" << format_double(sweep[narrow].voltage) << '\n'
       << "min_linewidth_Hz=" << format_double(sweep[narrow].fit.total_fwhm) << '\n'
       << "max_intensity_voltage_V=" << format_double(sweep[bright].voltage) << '\n';
  });
  std::printf("narrowest %.3f V, brightest %.3f V\n", sweep[narrow].voltage, sweep[bright].voltage);
  return flagged ? kExitFlagged : kExitOk;
}

// ---- grid ----

int cmd_grid(double max_opd, double opd_step) {
  PCFSScanConfig scan;
  scan.max_opd = max_opd;
  scan.opd_step = opd_step;
  const PcfsGrid r = pcfs_grid(scan);
  std::cout << "resolution_Hz=" << format_double(r.resolution) << '\n'
            << "lorentzian_resolution_Hz=" << format_double(r.resolution / 2.0) << '\n'
            << "range_Hz=" << format_double(r.range) << '\n'
            << "positions=" << r.positions << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdsim: quantum-dot photon statistics simulator"};
  app.set_version_flag("--version", std::string(QDSIM_VERSION));
  app.require_subcommand(1);
  app.add_option("--config", g.config_path, "emitter config (key=value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::Range(1u, 256u));
  app.add_flag("--verbose", g.verbose);

  std::function<int()> run;

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "write truth and detected tag files");
  s->add_option("--duration", sim.duration, "s");
  s->add_option("--voltage", sim.voltage, "V");
  s->add_option("--pulse-area", sim.pulse_area, "rad");
  s->add_option("--double-pulse", sim.double_pulse, "pulse pair separation, s");
  s->add_option("--detector", sim.detector, "standard|fast|ideal");
  s->add_flag("!--no-split", sim.hbt, "single detector channel, no beam splitter");
  s->callback([&] { run = [&] { return cmd_simulate(sim); }; });

  G2Args g2a;
  auto* g2 = app.add_subcommand("g2", "pulsed g2 from a tag file or end to end");
  g2->add_option("--input", g2a.input, "detected tag file")->check(CLI::ExistingFile);
  g2->add_option("--duration", g2a.duration, "s");
  g2->add_option("--voltage", g2a.voltage, "V");
  g2->add_option("--bin-width", g2a.bin_width, "s");
  g2->add_option("--rep-period", g2a.rep_period, "s, when the file carries none");
  g2->add_option("--side-peaks", g2a.side_peaks);
  g2->add_option("--detector", g2a.detector, "standard|fast|ideal");
  g2->callback([&] { run = [&] { return cmd_g2(g2a); }; });

  HomArgs ha;
  auto* hom = app.add_subcommand("hom", "two-photon interference through the unbalanced MZI");
  hom->add_option("--input", ha.input, "double-pulse truth tag file")->check(CLI::ExistingFile);
  hom->add_option("--delay", ha.delay, "MZI delay = pulse separation, s");
  hom->add_option("--duration", ha.duration, "s");
  hom->add_option("--voltage", ha.voltage, "V");
  hom->add_option("--polarization", ha.polarization, "parallel|orthogonal");
  hom->add_option("--method", ha.method, "cluster_fit|window");
  hom->add_option("--detector", ha.detector, "standard|fast|ideal");
  hom->add_option("--bin-width", ha.bin_width, "s");
  hom->callback([&] { run = [&] { return cmd_hom(ha); }; });

  FpiArgs fa;
  auto* fpi = app.add_subcommand("fpi", "scanning FPI spectrum and Voigt fit");
  fpi->add_option("--voltage", fa.voltage, "V");
  fpi->add_option("--photons", fa.photons);
  fpi->add_option("--peak-counts", fa.peak_counts, "0 = noise-free");
  fpi->add_option("--fixed-lorentzian", fa.fixed_l, "Hz");
  fpi->callback([&] { run = [&] { return cmd_fpi(fa); }; });

  PcfsArgs pa;
  auto* pcfs = app.add_subcommand("pcfs", "PCFS scan and linewidth vs tau");
  pcfs->add_option("--voltages", pa.voltages, "V")->delimiter(',');
  pcfs->add_option("--max-opd", pa.max_opd, "m");
  pcfs->add_option("--opd-step", pa.opd_step, "m");
  pcfs->add_option("--acquisition", pa.acquisition, "s per position, 0 = automatic");
  pcfs->add_option("--collection", pa.collection, "collection efficiency of the PCFS preset");
  pcfs->callback([&] { run = [&] { return cmd_pcfs(pa); }; });

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "FPI linewidth and intensity vs gate voltage");
  sweep->add_option("--from", sa.from, "V");
  sweep->add_option("--to", sa.to, "V");
  sweep->add_option("--step", sa.step, "V");
  sweep->add_option("--photons", sa.photons);
  sweep->callback([&] { run = [&] { return cmd_sweep(sa); }; });

  double max_opd = 0.372, opd_step = 0.004;
  auto* grid = app.add_subcommand("grid", "PCFS resolution and range");
  grid->add_option("--max-opd", max_opd, "m");
  grid->add_option("--opd-step", opd_step, "m");
  grid->callback([&] { run = [&] { return cmd_grid(max_opd, opd_step); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    return run();
  } catch (const ConfigError& e) {
    std::cerr << "qdsim: config error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "qdsim: error: " << e.what() << '\n';
  }
  return kExitError;
}
