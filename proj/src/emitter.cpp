#include "qdot/emitter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "qdot/random.hpp"

namespace qdot {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

struct Emission {
  TimePs t;
  std::uint8_t channel;
};

// Pulse slots are numbered consecutively; a double-pulse train has two slots
// per laser period.
class PulseClock {
 public:
  PulseClock(double rep_rate, double separation)
      : period_ps_(kPsPerSecond / rep_rate), slots_(separation > 0.0 ? 2 : 1), sep_ps_(to_ps(separation)) {}

  int slots_per_period() const { return slots_; }
  double period_ps() const { return period_ps_; }

  TimePs time(std::int64_t slot) const {
    const std::int64_t k = slot / slots_;
    const std::int64_t sub = slot % slots_;
    return static_cast<TimePs>(std::llround(static_cast<double>(k) * period_ps_)) + sub * sep_ps_;
  }
  std::uint8_t channel(std::int64_t slot) const { return static_cast<std::uint8_t>(slot % slots_); }

  /// Smallest slot whose time is >= t.
  std::int64_t first_at_or_after(TimePs t) const {
    std::int64_t k = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / period_ps_)) - 1;
    std::int64_t slot = std::max<std::int64_t>(0, k * slots_);
    while (time(slot) < t) ++slot;
    while (slot > 0 && time(slot - 1) >= t) --slot;
    return slot;
  }

 private:
  double period_ps_;
  int slots_;
  TimePs sep_ps_;
};

}  // namespace

std::string to_string(Species s) {
  switch (s) {
    case Species::exciton:
      return "exciton";
    case Species::trion:
      return "trion";
    case Species::none:
      break;
  }
  return "none";
}

// --- config ------------------------------------------------------------------

void EmitterConfig::validate() const {
  require(lifetime > 0.0, "lifetime must be > 0");
  require(dephasing_rate_intrinsic >= 0.0, "dephasing_rate must be >= 0");
  require(diffusion.stationary_std >= 0.0, "diffusion.stationary_std must be >= 0");
  require(diffusion.correlation_time > 0.0, "diffusion.correlation_time must be > 0");
  if (blinking) require(blinking->on_rate >= 0.0 && blinking->off_rate >= 0.0, "blinking rates must be >= 0");
  if (blinking) require(blinking->on_rate > 0.0, "blinking.on_rate must be > 0 when blinking is enabled");
  require(plateau.half_width > 0.0, "plateau.half_width must be > 0");
  require(plateau.edge_softness > 0.0, "plateau.edge_softness must be > 0");
  require(plateau.cotunnel_rate_edge >= 0.0, "plateau.cotunnel_rate_edge must be >= 0");
  require(is_probability(plateau.intensity_loss) && plateau.intensity_loss < 1.0,
          "plateau.intensity_loss must lie in [0,1)");
  require(charge.exciton_min <= charge.exciton_max && charge.trion_min <= charge.trion_max,
          "charge windows must have min <= max");
  require(charge.exciton_max <= charge.trion_min || charge.trion_max <= charge.exciton_min,
          "charge windows must not overlap");
  require(is_probability(prep_fidelity), "prep_fidelity must lie in [0,1]");
  require(is_probability(reexcitation_prob), "reexcitation_prob must lie in [0,1]");
  require(rep_rate > 0.0, "rep_rate must be > 0");
  require(double_pulse_separation >= 0.0 && double_pulse_separation < 1.0 / rep_rate,
          "double_pulse_separation must lie in [0, 1/rep_rate)");
  require(is_probability(collection_efficiency), "collection_efficiency must lie in [0,1]");
}

KeyValueConfig EmitterConfig::to_config() const {
  KeyValueConfig c;
  c.set("lifetime", lifetime);
  c.set("base_frequency", base_frequency);
  c.set("reference_voltage", reference_voltage);
  c.set("dephasing_rate", dephasing_rate_intrinsic);
  c.set("diffusion.stationary_std", diffusion.stationary_std);
  c.set("diffusion.correlation_time", diffusion.correlation_time);
  c.set("blinking.enabled", blinking ? 1.0 : 0.0);
  if (blinking) {
    c.set("blinking.on_rate", blinking->on_rate);
    c.set("blinking.off_rate", blinking->off_rate);
  }
  c.set("stark_slope", stark_slope);
  c.set("plateau.center_voltage", plateau.center_voltage);
  c.set("plateau.half_width", plateau.half_width);
  c.set("plateau.cotunnel_rate_edge", plateau.cotunnel_rate_edge);
  c.set("plateau.edge_softness", plateau.edge_softness);
  c.set("plateau.intensity_loss", plateau.intensity_loss);
  c.set("charge.exciton_min", charge.exciton_min);
  c.set("charge.exciton_max", charge.exciton_max);
  c.set("charge.trion_min", charge.trion_min);
  c.set("charge.trion_max", charge.trion_max);
  c.set("prep_fidelity", prep_fidelity);
  c.set("reexcitation_prob", reexcitation_prob);
  c.set("rep_rate", rep_rate);
  c.set("double_pulse_separation", double_pulse_separation);
  c.set("collection_efficiency", collection_efficiency);
  return c;
}

EmitterConfig EmitterConfig::from_config(const KeyValueConfig& cfg) {
  EmitterConfig e;
  auto read = [&](const char* key, double& field) { field = cfg.number_or(key, field); };
  read("lifetime", e.lifetime);
  read("base_frequency", e.base_frequency);
  read("reference_voltage", e.reference_voltage);
  read("dephasing_rate", e.dephasing_rate_intrinsic);
  read("diffusion.stationary_std", e.diffusion.stationary_std);
  read("diffusion.correlation_time", e.diffusion.correlation_time);
  const double blink_enabled = cfg.number_or("blinking.enabled", 0.0);
  if (blink_enabled != 0.0 || cfg.has("blinking.on_rate") || cfg.has("blinking.off_rate")) {
    TelegraphParams t;
    read("blinking.on_rate", t.on_rate);
    read("blinking.off_rate", t.off_rate);
    if (blink_enabled != 0.0) e.blinking = t;
  }
  read("stark_slope", e.stark_slope);
  read("plateau.center_voltage", e.plateau.center_voltage);
  read("plateau.half_width", e.plateau.half_width);
  read("plateau.cotunnel_rate_edge", e.plateau.cotunnel_rate_edge);
  read("plateau.edge_softness", e.plateau.edge_softness);
  read("plateau.intensity_loss", e.plateau.intensity_loss);
  read("charge.exciton_min", e.charge.exciton_min);
  read("charge.exciton_max", e.charge.exciton_max);
  read("charge.trion_min", e.charge.trion_min);
  read("charge.trion_max", e.charge.trion_max);
  read("prep_fidelity", e.prep_fidelity);
  read("reexcitation_prob", e.reexcitation_prob);
  read("rep_rate", e.rep_rate);
  read("double_pulse_separation", e.double_pulse_separation);
  read("collection_efficiency", e.collection_efficiency);

  const auto unknown = cfg.unused_keys();
  if (!unknown.empty()) {
    throw ConfigError("unknown emitter key '" + unknown.front() + "'", cfg.line_of(unknown.front()));
  }
  try {
    e.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what(), 0);
  }
  return e;
}

std::string EmitterConfig::hash() const { return config_hash(to_config().to_text()); }

// --- physics -----------------------------------------------------------------

double stark_frequency(const EmitterConfig& config, double voltage) {
  return config.base_frequency + config.stark_slope * (voltage - config.reference_voltage);
}

double cotunnel_rate(const PlateauParams& plateau, double voltage) {
  const double u = std::abs(voltage - plateau.center_voltage);
  if (u == 0.0 || plateau.cotunnel_rate_edge == 0.0) return 0.0;
  const double n = plateau.half_width / plateau.edge_softness;
  // u^n / (u^n + w^n) written as 1 / (1 + (w/u)^n) to stay finite for large n.
  const double ratio = std::pow(plateau.half_width / u, n);
  return 2.0 * plateau.cotunnel_rate_edge / (1.0 + ratio);
}

double plateau_brightness(const PlateauParams& plateau, double voltage) {
  if (plateau.cotunnel_rate_edge == 0.0) return 1.0;
  const double saturation = cotunnel_rate(plateau, voltage) / (2.0 * plateau.cotunnel_rate_edge);
  return 1.0 - plateau.intensity_loss * saturation;
}

double pulse_occupation(double pulse_area, double prep_fidelity) {
  if (pulse_area < 0.0) throw std::invalid_argument("pulse_area must be >= 0");
  const double s = std::sin(0.5 * pulse_area);
  return prep_fidelity * s * s;
}

Species charge_state(const ChargeWindows& w, double voltage) {
  if (voltage >= w.trion_min && voltage < w.trion_max) return Species::trion;
  if (voltage >= w.exciton_min && voltage < w.exciton_max) return Species::exciton;
  return Species::none;
}

double emission_probability(const EmitterConfig& config, double voltage, double pulse_area) {
  if (charge_state(config.charge, voltage) != Species::trion) return 0.0;
  return pulse_occupation(pulse_area, config.prep_fidelity) * plateau_brightness(config.plateau, voltage);
}

double g2_zero_from_reexcitation(double r, double p) {
  if (p <= 0.0) throw std::invalid_argument("emission probability must be > 0");
  // <n(n-1)> = 2 p r, <n> = p (1 + r).
  return 2.0 * r / (p * (1.0 + r) * (1.0 + r));
}

double reexcitation_for_g2(double g2_zero, double p) {
  if (g2_zero < 0.0) throw std::invalid_argument("g2_zero must be >= 0");
  if (g2_zero == 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  if (g2_zero_from_reexcitation(hi, p) < g2_zero) throw std::invalid_argument("g2_zero unreachable with r <= 1");
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g2_zero_from_reexcitation(mid, p) < g2_zero ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<RabiPoint> rabi_curve(const EmitterConfig& config, const std::vector<double>& pulse_areas,
                                  std::uint64_t pulses_per_point, std::uint64_t seed, double voltage) {
  config.validate();
  if (pulse_areas.empty()) throw std::invalid_argument("rabi_curve needs at least one pulse area");
  if (pulses_per_point == 0) throw std::invalid_argument("pulses_per_point must be > 0");
  std::vector<RabiPoint> out;
  out.reserve(pulse_areas.size());
  for (std::size_t i = 0; i < pulse_areas.size(); ++i) {
    Engine rng = make_engine(seed, "rabi", i);
    const double p = emission_probability(config, voltage, pulse_areas[i]);
    using Count = long long;
    const auto n = static_cast<Count>(pulses_per_point);
    const Count first = std::binomial_distribution<Count>(n, p)(rng);
    const Count second = std::binomial_distribution<Count>(first, config.reexcitation_prob)(rng);
    const Count collected = std::binomial_distribution<Count>(first + second, config.collection_efficiency)(rng);
    out.push_back({pulse_areas[i] / std::numbers::pi, static_cast<double>(collected) / static_cast<double>(n)});
  }
  return out;
}

TagStream simulate_emission(const EmitterConfig& config, double voltage, double pulse_area, double duration,
                            std::uint64_t seed) {
  config.validate();
  if (!(duration > 0.0)) throw std::invalid_argument("duration must be > 0");
  if (pulse_area < 0.0) throw std::invalid_argument("pulse_area must be >= 0");

  const TimePs duration_ps = to_ps(duration);
  const PulseClock clock(config.rep_rate, config.double_pulse_separation);
  const double p = emission_probability(config, voltage, pulse_area);
  const double r = config.reexcitation_prob;
  const double eta = config.collection_efficiency;
  // Per pulse: probability of exactly one / two collected photons.
  const double q2 = p * r * eta * eta;
  const double q1 = p * (1.0 - r) * eta + p * r * 2.0 * eta * (1.0 - eta);
  const double q_any = q1 + q2;

  Engine schedule_rng = make_engine(seed, "emit.schedule");
  Engine delay_rng = make_engine(seed, "emit.delay");
  Engine blink_rng = make_engine(seed, "emit.blink");
  Engine ou_rng = make_engine(seed, "emit.ou");
  std::exponential_distribution<double> delay(1.0 / (config.lifetime * kPsPerSecond));
  std::bernoulli_distribution two_photons(q_any > 0.0 ? q2 / q_any : 0.0);

  std::vector<Emission> photons;
  const double expected = q_any * (1.0 + (q_any > 0 ? q2 / q_any : 0.0)) * duration * config.rep_rate *
                          clock.slots_per_period();
  photons.reserve(static_cast<std::size_t>(expected * 1.05) + 64);

  auto emit_in = [&](TimePs begin, TimePs end) {
    if (q_any <= 0.0 || begin >= end) return;
    std::geometric_distribution<std::int64_t> skip(q_any);
    std::int64_t slot = clock.first_at_or_after(begin) + (q_any < 1.0 ? skip(schedule_rng) : 0);
    while (true) {
      const TimePs t_pulse = clock.time(slot);
      if (t_pulse >= end) break;
      const int n = two_photons(schedule_rng) ? 2 : 1;
      for (int k = 0; k < n; ++k) {
        const TimePs t = t_pulse + static_cast<TimePs>(std::llround(delay(delay_rng)));
        if (t <= duration_ps) photons.push_back({t, clock.channel(slot)});
      }
      slot += 1 + (q_any < 1.0 ? skip(schedule_rng) : 0);
    }
  };

  if (!config.blinking || config.blinking->off_rate == 0.0) {
    emit_in(0, duration_ps);
  } else {
    // Alternate bright and dark dwell times of the telegraph process.
    const auto& b = *config.blinking;
    std::exponential_distribution<double> bright_dwell(b.off_rate / kPsPerSecond);
    std::exponential_distribution<double> dark_dwell(b.on_rate / kPsPerSecond);
    bool bright = std::bernoulli_distribution(b.on_rate / (b.on_rate + b.off_rate))(blink_rng);
    double t = 0.0;
    while (t < static_cast<double>(duration_ps)) {
      const double dwell = bright ? bright_dwell(blink_rng) : dark_dwell(blink_rng);
      const double end = std::min(t + dwell, static_cast<double>(duration_ps) + 1.0);
      if (bright) emit_in(static_cast<TimePs>(std::ceil(t)), static_cast<TimePs>(std::ceil(end)));
      t += dwell;
      bright = !bright;
    }
  }

  std::sort(photons.begin(), photons.end(),
            [](const Emission& a, const Emission& b) { return a.t != b.t ? a.t < b.t : a.channel < b.channel; });

  const bool double_pulse = clock.slots_per_period() == 2;
  TagStreamBuilder builder(double_pulse ? std::vector<std::string>{"pulse_first", "pulse_second"}
                                        : std::vector<std::string>{"emission"},
                           duration_ps, true);
  builder.reserve(photons.size());

  // Exact OU discretization sampled at the (sorted) emission times.
  const double sigma = config.diffusion.stationary_std;
  const double tau_c_ps = config.diffusion.correlation_time * kPsPerSecond;
  std::normal_distribution<double> gauss(0.0, 1.0);
  double ou = sigma > 0.0 ? sigma * gauss(ou_rng) : 0.0;
  TimePs last_t = photons.empty() ? 0 : photons.front().t;
  const double center = stark_frequency(config, voltage);
  const double dephasing = config.dephasing_rate_intrinsic + cotunnel_rate(config.plateau, voltage);
  for (const auto& ph : photons) {
    if (sigma > 0.0) {
      const double dt = static_cast<double>(ph.t - last_t);
      if (dt > 0.0) {
        const double decay = std::exp(-dt / tau_c_ps);
        ou = ou * decay + sigma * std::sqrt(std::max(0.0, 1.0 - decay * decay)) * gauss(ou_rng);
      }
      last_t = ph.t;
    }
    PhotonTag tag;
    tag.channel = ph.channel;
    tag.timestamp = ph.t;
    tag.truth_frequency = center + ou;
    tag.truth_dephasing_rate = dephasing;
    builder.add(tag);
  }

  builder.set_meta("op", "simulate_emission");
  builder.set_meta("seed", std::to_string(seed));
  builder.set_meta("config_hash", config.hash());
  builder.set_meta("voltage_v", format_double(voltage));
  builder.set_meta("pulse_area_rad", format_double(pulse_area));
  builder.set_meta("lifetime_s", format_double(config.lifetime));
  builder.set_meta("rep_rate_hz", format_double(config.rep_rate));
  builder.set_meta("rep_period_ps", format_double(clock.period_ps()));
  builder.set_meta("pulse_separation_ps", std::to_string(to_ps(config.double_pulse_separation)));
  builder.set_meta("species", to_string(charge_state(config.charge, voltage)));
  builder.set_meta("emission_probability", format_double(p));
  builder.set_meta("collection_efficiency", format_double(eta));
  return std::move(builder).build();
}

}  // namespace qdot
