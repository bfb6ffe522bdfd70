#pragma once

// Stochastic model of a gated quantum-dot single-photon emitter under pulsed
// resonant excitation. Produces truth TagStreams carrying per-photon transition
// frequency and Markovian dephasing rate.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qdot/config.hpp"
#include "qdot/photonstream.hpp"

namespace qdot {

/// Ornstein-Uhlenbeck spectral diffusion of the transition frequency.
struct OUParams {
  double stationary_std = 0.0;     // Hz
  double correlation_time = 1e-9;  // s
};

/// Two-state blinking. on_rate: dark -> bright, off_rate: bright -> dark.
struct TelegraphParams {
  double on_rate = 0.0;   // Hz
  double off_rate = 0.0;  // Hz
};

/// Charge-plateau cotunneling model.
///
/// The cotunneling dephasing rate is a Hill-type sigmoid in the distance
/// u = |V - center_voltage|:
///
///     rate(u) = 2 * cotunnel_rate_edge * u^n / (u^n + half_width^n),
///     n = half_width / edge_softness,
///
/// which is exactly zero at the plateau center, equals cotunnel_rate_edge at
/// the plateau edge and saturates at twice that value. Its slope at the edge
/// matches a logistic step of width edge_softness. Brightness drops linearly
/// with the rate, by intensity_loss at saturation.
struct PlateauParams {
  double center_voltage = -0.570;   // V
  double half_width = 0.120;        // V
  double cotunnel_rate_edge = 0.0;  // 1/s
  double edge_softness = 0.060;     // V
  double intensity_loss = 0.4;      // fractional brightness loss at saturation
};

enum class Species { none, exciton, trion };

std::string to_string(Species s);

/// Half-open gate-voltage windows [min, max) in which each species emits.
struct ChargeWindows {
  double exciton_min = -1.000;
  double exciton_max = -0.800;
  double trion_min = -0.800;
  double trion_max = -0.250;
};

struct EmitterConfig {
  double lifetime = 652e-12;           // s
  double base_frequency = 0.0;         // Hz offset at reference_voltage
  double reference_voltage = -0.570;   // V
  double dephasing_rate_intrinsic = 0.0;  // 1/s, Markovian pure dephasing
  OUParams diffusion;
  std::optional<TelegraphParams> blinking;
  double stark_slope = 72.7e9;         // Hz/V
  PlateauParams plateau;
  ChargeWindows charge;
  double prep_fidelity = 0.85;
  double reexcitation_prob = 0.0;
  double rep_rate = 76.2e6;            // Hz
  double double_pulse_separation = 0.0;  // s; 0 = single pulses
  double collection_efficiency = 1.0;  // fraction of emitted photons entering the optical path

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  KeyValueConfig to_config() const;
  /// Starts from defaults. Unknown keys raise ConfigError with their line.
  static EmitterConfig from_config(const KeyValueConfig& cfg);
  std::string hash() const;
};

inline constexpr double kStarkSlopeResonant = 72.7e9;
inline constexpr double kStarkSlopeAboveBarrier = 71.1e9;
inline constexpr double kRepRateStandard = 76.2e6;
inline constexpr double kRepRatePcfs = 304.8e6;

double stark_frequency(const EmitterConfig& config, double voltage);
double cotunnel_rate(const PlateauParams& plateau, double voltage);
/// Relative emission intensity in (0, 1], 1 at the plateau center.
double plateau_brightness(const PlateauParams& plateau, double voltage);
double pulse_occupation(double pulse_area, double prep_fidelity);
Species charge_state(const ChargeWindows& windows, double voltage);

/// Per-pulse probability that the driven trion emits at least one photon.
double emission_probability(const EmitterConfig& config, double voltage, double pulse_area);

/// g2(0) of a pulse train where each pulse emits with probability p and, given
/// an emission, re-excites once more with probability r.
double g2_zero_from_reexcitation(double reexcitation_prob, double emission_prob);
/// Inverse of g2_zero_from_reexcitation in r (monotone branch r <= 1).
double reexcitation_for_g2(double g2_zero, double emission_prob);

struct RabiPoint {
  double sqrt_power;   // pulse area / pi, proportional to sqrt of laser power
  double mean_counts;  // collected photons per pulse
};

std::vector<RabiPoint> rabi_curve(const EmitterConfig& config, const std::vector<double>& pulse_areas,
                                  std::uint64_t pulses_per_point, std::uint64_t seed, double voltage = -0.570);

/// Truth stream of collected photons for `duration` seconds at gate `voltage`.
///
/// Channel 0 carries single-pulse photons; with double pulses, channel 0/1 is
/// the first/second pulse of each pair. Metadata records everything
/// downstream analyses need (lifetime_s, rep_period_ps, pulse_separation_ps).
TagStream simulate_emission(const EmitterConfig& config, double voltage, double pulse_area, double duration,
                            std::uint64_t seed);

}  // namespace qdot
