#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "qdot/photonstream.hpp"
#include "qdot/random.hpp"

namespace qdot {

namespace {
constexpr double kFwhmToSigma = 1.0 / 2.3548200450309493;  // 1 / (2 sqrt(2 ln 2))
}

void DetectorModel::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw std::invalid_argument("detector efficiency must lie in [0,1]");
  if (!(jitter_fwhm >= 0.0)) throw std::invalid_argument("detector jitter_fwhm must be >= 0");
  if (!(dead_time >= 0.0)) throw std::invalid_argument("detector dead_time must be >= 0");
  if (!(dark_rate >= 0.0)) throw std::invalid_argument("detector dark_rate must be >= 0");
}

DetectorModel DetectorModel::standard_spad() { return {350e-12, 0.30, 0.0, 0.0}; }
DetectorModel DetectorModel::fast_spad() { return {50e-12, 0.02, 0.0, 0.0}; }
DetectorModel DetectorModel::ideal() { return {0.0, 1.0, 0.0, 0.0}; }

TagStream apply_detector(const TagStream& stream, const DetectorModel& model, std::uint64_t seed) {
  model.validate();
  Engine thin_rng = make_engine(seed, "detector.efficiency");
  Engine jitter_rng = make_engine(seed, "detector.jitter");
  Engine dark_rng = make_engine(seed, "detector.dark");
  std::bernoulli_distribution survive(model.efficiency);
  std::normal_distribution<double> jitter(0.0, model.jitter_fwhm * kFwhmToSigma * kPsPerSecond);
  const bool has_jitter = model.jitter_fwhm > 0.0;

  const TimePs duration = stream.duration();
  struct Event {
    TimePs t;
    std::uint8_t ch;
  };
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(static_cast<double>(stream.size()) * model.efficiency * 1.01) + 16);
  const auto& ts = stream.timestamps();
  const auto& ch = stream.channels();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (model.efficiency < 1.0 && !survive(thin_rng)) continue;
    TimePs t = ts[i];
    if (has_jitter) t += static_cast<TimePs>(std::llround(jitter(jitter_rng)));
    t = std::clamp<TimePs>(t, 0, duration);
    events.push_back({t, ch[i]});
  }
  // Jitter can reorder neighbours.
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t != b.t ? a.t < b.t : a.ch < b.ch; });

  TagStreamBuilder out(stream.channel_labels(), duration, false);
  out.reserve(events.size());
  const TimePs dead = to_ps(model.dead_time);
  std::vector<TimePs> last_accept(stream.channel_count(), std::numeric_limits<TimePs>::min());
  auto accept = [&](TimePs t, std::uint8_t c) {
    if (dead > 0 && last_accept[c] != std::numeric_limits<TimePs>::min() && t - last_accept[c] < dead) return false;
    last_accept[c] = t;
    return true;
  };

  std::vector<Event> dark;
  if (model.dark_rate > 0.0 && duration > 0) {
    const double mean = model.dark_rate * to_seconds(duration);
    std::uniform_int_distribution<TimePs> when(0, duration);
    for (std::size_t c = 0; c < stream.channel_count(); ++c) {
      std::poisson_distribution<long long> n_dark(mean);
      const long long n = n_dark(dark_rng);
      for (long long k = 0; k < n; ++k) dark.push_back({when(dark_rng), static_cast<std::uint8_t>(c)});
    }
    std::sort(dark.begin(), dark.end(),
              [](const Event& a, const Event& b) { return a.t != b.t ? a.t < b.t : a.ch < b.ch; });
  }

  // Merge photon and dark events in time order so dead time applies to both.
  std::size_t i = 0, j = 0;
  while (i < events.size() || j < dark.size()) {
    const bool take_photon =
        j == dark.size() ||
        (i < events.size() && (events[i].t < dark[j].t || (events[i].t == dark[j].t && events[i].ch <= dark[j].ch)));
    const Event e = take_photon ? events[i++] : dark[j++];
    if (accept(e.t, e.ch)) out.add(e.ch, e.t);
  }

  out.merge_metadata(stream.metadata());
  out.set_meta("detector", "jitter_fwhm=" + std::to_string(model.jitter_fwhm) +
                               ";efficiency=" + std::to_string(model.efficiency) +
                               ";dead_time=" + std::to_string(model.dead_time) +
                               ";dark_rate=" + std::to_string(model.dark_rate));
  out.set_meta("detector_seed", std::to_string(seed));
  return std::move(out).build();
}

TagStream beam_split(const TagStream& stream, std::uint64_t seed) {
  Engine rng = make_engine(seed, "beam_split");
  std::bernoulli_distribution port(0.5);
  TagStreamBuilder out({"bs_out_a", "bs_out_b"}, stream.duration(), stream.has_truth());
  out.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    PhotonTag t = stream.tag(i);
    t.channel = port(rng) ? 1 : 0;
    out.add(t);
  }
  out.merge_metadata(stream.metadata());
  return std::move(out).build();
}

}  // namespace qdot
