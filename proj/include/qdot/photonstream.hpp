#pragma once

// Time-tagged photon events and the QTAG binary container.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdot {

/// Integer picoseconds since acquisition start.
using TimePs = std::int64_t;

inline constexpr double kPsPerSecond = 1e12;

inline TimePs to_ps(double seconds) { return static_cast<TimePs>(seconds * kPsPerSecond + (seconds >= 0 ? 0.5 : -0.5)); }
inline double to_seconds(TimePs ps) { return static_cast<double>(ps) / kPsPerSecond; }

struct PhotonTag {
  std::uint8_t channel = 0;
  TimePs timestamp = 0;
  // Simulation truth; only meaningful when the owning stream has truth fields.
  double truth_frequency = 0.0;
  double truth_dephasing_rate = 0.0;

  friend bool operator==(const PhotonTag&, const PhotonTag&) = default;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset);
  std::uint64_t byte_offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::uint64_t byte_offset);
  std::uint64_t byte_offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Sorted, immutable-after-build sequence of photon tags.
///
/// Storage is column-wise so the correlator can scan timestamps without
/// touching truth columns. Use TagStreamBuilder to construct one from
/// unsorted events.
class TagStream {
 public:
  TagStream() = default;

  std::size_t size() const noexcept { return timestamps_.size(); }
  bool empty() const noexcept { return timestamps_.empty(); }
  bool has_truth() const noexcept { return has_truth_; }
  TimePs duration() const noexcept { return duration_; }
  std::size_t channel_count() const noexcept { return channel_labels_.size(); }

  const std::vector<std::uint8_t>& channels() const noexcept { return channels_; }
  const std::vector<TimePs>& timestamps() const noexcept { return timestamps_; }
  /// Empty unless has_truth().
  const std::vector<double>& truth_frequencies() const noexcept { return frequencies_; }
  const std::vector<double>& truth_dephasing_rates() const noexcept { return dephasing_; }

  const std::vector<std::string>& channel_labels() const noexcept { return channel_labels_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }
  std::optional<std::string> meta(const std::string& key) const;
  /// Throws std::invalid_argument naming the key when absent or not numeric.
  double meta_number(const std::string& key) const;

  PhotonTag tag(std::size_t i) const;

  /// Number of tags on one channel.
  std::size_t count(std::uint8_t channel) const;

  /// Same tags and channels, truth columns dropped.
  TagStream without_truth() const;
  TagStream with_metadata(const std::string& key, const std::string& value) const;
  /// Restricts to [begin, end) in tag order.
  TagStream slice(std::size_t begin, std::size_t end) const;

  /// Throws std::logic_error describing the first violated invariant.
  void validate() const;

  friend bool operator==(const TagStream&, const TagStream&) = default;

 private:
  friend class TagStreamBuilder;
  friend TagStream read_stream(std::istream&);

  std::vector<std::uint8_t> channels_;
  std::vector<TimePs> timestamps_;
  std::vector<double> frequencies_;
  std::vector<double> dephasing_;
  TimePs duration_ = 0;
  bool has_truth_ = false;
  std::vector<std::string> channel_labels_;
  std::map<std::string, std::string> metadata_;
};

/// Accumulates tags in any order, then sorts by (timestamp, channel).
class TagStreamBuilder {
 public:
  TagStreamBuilder(std::vector<std::string> channel_labels, TimePs duration, bool truth);

  void reserve(std::size_t n);
  void add(std::uint8_t channel, TimePs timestamp);
  void add(const PhotonTag& tag);
  void set_meta(const std::string& key, const std::string& value);
  void merge_metadata(const std::map<std::string, std::string>& meta);

  /// Drops tags with timestamp outside [0, duration].
  TagStream build() &&;

 private:
  TagStream stream_;
};

/// Merges streams with identical channel layout and truth flag into one
/// sorted stream. Duration is the maximum of the inputs.
TagStream merge_streams(const std::vector<TagStream>& parts);

// --- QTAG binary container -------------------------------------------------

inline constexpr char kQtagMagic[4] = {'Q', 'T', 'A', 'G'};
inline constexpr std::uint16_t kQtagVersion = 1;
inline constexpr std::uint16_t kQtagFlagTruth = 0x0001;
inline constexpr std::size_t kRecordSize = 9;
inline constexpr std::size_t kTruthRecordSize = 25;

/// Bytes occupied by the fixed header plus metadata block for `stream`.
std::size_t header_size(const TagStream& stream);
std::size_t record_size(bool truth) noexcept;

/// Writes the little-endian QTAG encoding. Returns bytes written.
std::uint64_t write_stream(const TagStream& stream, std::ostream& sink);
TagStream read_stream(std::istream& source);

void write_stream_file(const TagStream& stream, const std::string& path);
TagStream read_stream_file(const std::string& path);

// --- detector ----------------------------------------------------------------

struct DetectorModel {
  double jitter_fwhm = 350e-12;  // s
  double efficiency = 0.30;
  double dead_time = 0.0;        // s
  double dark_rate = 0.0;        // Hz, per channel

  void validate() const;

  /// 350 ps / 30 % SPADs (correlation and interference measurements).
  static DetectorModel standard_spad();
  /// 50 ps / 2 % SPADs (lifetime measurements).
  static DetectorModel fast_spad();
  static DetectorModel ideal();
};

/// Efficiency thinning, Gaussian jitter, re-sort, per-channel dead time, then
/// Poisson dark counts. Output never carries truth fields.
TagStream apply_detector(const TagStream& stream, const DetectorModel& model, std::uint64_t seed);

/// Routes every tag through a lossless 50/50 splitter onto channels 0 and 1.
TagStream beam_split(const TagStream& stream, std::uint64_t seed);

}  // namespace qdot
